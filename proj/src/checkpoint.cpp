#include "dgan/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "dgan/error.hpp"

namespace dgan {

namespace {

constexpr char kMagic[4] = {'D', 'G', 'A', 'N'};
const std::string kGenSpecKey = "meta.generator_spec";
const std::string kDiscSpecKey = "meta.discriminator_spec";

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError("checkpoint: " + msg + " at offset " + std::to_string(at));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(std::string("truncated while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

bool Checkpoint::bitwise_equal(const Checkpoint& other) const {
  return encode_checkpoint(*this) == encode_checkpoint(other);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  if (ckpt.tensors.size() > UINT32_MAX) throw ContractError("checkpoint: too many tensors");
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.empty() || name.size() > UINT16_MAX) {
      throw ContractError("checkpoint: tensor name length must be in [1, 65535]");
    }
    if (!t.defined()) throw ContractError("checkpoint: tensor '" + name + "' is undefined");
    if (t.rank() > UINT8_MAX) throw ContractError("checkpoint: rank too large for '" + name + "'");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) in.fail("bad magic", 0);
  const std::size_t version_at = in.offset();
  const auto version = in.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    in.fail("unsupported version " + std::to_string(version), version_at);
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  Checkpoint ckpt;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t entry_at = in.offset();
    const auto name_len = in.get<std::uint16_t>("name length");
    if (name_len == 0) in.fail("empty tensor name", entry_at);
    auto name_bytes = in.take(name_len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto ndim = in.get<std::uint8_t>("rank");
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const std::size_t dim_at = in.offset();
      const auto v = in.get<std::uint64_t>("dimension");
      if (v == 0) in.fail("zero dimension in '" + name + "'", dim_at);
      if (numel > std::numeric_limits<std::size_t>::max() / v) in.fail("dimension overflow in '" + name + "'", dim_at);
      d = static_cast<std::size_t>(v);
      numel *= d;
    }
    if (numel > in.remaining() / 8) {
      in.fail("truncated payload of '" + name + "'", in.offset());
    }
    std::vector<double> data(numel);
    for (auto& v : data) v = std::bit_cast<double>(in.get<std::uint64_t>("payload"));
    if (!ckpt.tensors.emplace(name, Tensor::from(std::move(shape), std::move(data))).second) {
      in.fail("duplicate tensor name '" + name + "'", entry_at);
    }
  }
  if (in.remaining() != 0) in.fail("trailing bytes", in.offset());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw IoError("failed writing '" + tmp + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading '" + path + "'");
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

Checkpoint make_gan_checkpoint(const GeneratorSpec& gen_spec, const ParamSet& gen_params,
                               const EncoderSpec& disc_spec, const ParamSet& disc_params) {
  Checkpoint ckpt;
  for (const auto& [k, v] : gen_params) ckpt.tensors[k] = v.detach();
  for (const auto& [k, v] : disc_params) ckpt.tensors[k] = v.detach();
  auto g = gen_spec.to_vector();
  auto d = disc_spec.to_vector();
  ckpt.tensors[kGenSpecKey] = Tensor::from({g.size()}, g);
  ckpt.tensors[kDiscSpecKey] = Tensor::from({d.size()}, d);
  return ckpt;
}

ParamSet checkpoint_params(const Checkpoint& ckpt) {
  ParamSet out;
  for (const auto& [k, v] : ckpt.tensors) {
    if (k.rfind("meta.", 0) != 0) out[k] = v;
  }
  return out;
}

GeneratorModel load_generator(const Checkpoint& ckpt) {
  GeneratorSpec spec;
  try {
    spec = GeneratorSpec::from_vector(ckpt.get(kGenSpecKey).to_vector());
    spec.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: invalid generator spec: ") + e.what());
  }
  ParamSet params;
  for (const auto& [k, v] : ckpt.tensors) {
    if (k.rfind("g.", 0) == 0 || k.rfind("map_", 0) == 0) params[k] = v;
  }
  Rng probe(0);
  for (const auto& [k, v] : init_generator(spec, probe)) {
    auto it = params.find(k);
    if (it == params.end()) throw FormatError("checkpoint: missing generator tensor '" + k + "'");
    if (it->second.shape() != v.shape()) {
      throw FormatError("checkpoint: tensor '" + k + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(v.shape()));
    }
  }
  return GeneratorModel(spec, params);
}

EncoderSpec discriminator_spec(const Checkpoint& ckpt) {
  try {
    auto spec = EncoderSpec::from_vector(ckpt.get(kDiscSpecKey).to_vector());
    spec.validate();
    return spec;
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: invalid discriminator spec: ") + e.what());
  }
}

Checkpoint make_dataset_checkpoint(const Tensor& images, const std::vector<std::size_t>& labels) {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw DimensionError("dataset: expected [N,3,R,R] images and N labels");
  }
  Checkpoint ckpt;
  ckpt.tensors["data.images"] = images.detach();
  std::vector<double> l(labels.begin(), labels.end());
  const std::size_t n = l.size();
  ckpt.tensors["data.labels"] = Tensor::from({n}, std::move(l));
  return ckpt;
}

LabeledImages dataset_from_checkpoint(const Checkpoint& ckpt) {
  LabeledImages out;
  out.images = ckpt.get("data.images");
  const Tensor& labels = ckpt.get("data.labels");
  if (out.images.rank() != 4 || out.images.dim(1) != 3 || labels.rank() != 1 ||
      labels.dim(0) != out.images.dim(0)) {
    throw FormatError("dataset: expected [N,3,R,R] images and N labels");
  }
  for (double v : labels.data()) {
    if (!(v >= 0) || v != std::floor(v) || v > 1e9) throw FormatError("dataset: labels must be non-negative integers");
    out.labels.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace dgan
