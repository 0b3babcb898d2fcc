#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dgan/networks.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

/// Named float64 tensors. Names are unique (map keys) and written in sorted
/// order. Spec snapshots travel as ordinary tensors under the "meta." prefix.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::map<std::string, Tensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  bool bitwise_equal(const Checkpoint& other) const;
};

/// Layout: "DGAN", u32 version, u32 count; per tensor u16 name length, name
/// bytes, u8 ndim, u64 dims, f64 payload. All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a sibling temp file, then renames over `path`.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Trained GAN: generator (with mappings) and discriminator.
Checkpoint make_gan_checkpoint(const GeneratorSpec& gen_spec, const ParamSet& gen_params,
                               const EncoderSpec& disc_spec, const ParamSet& disc_params);
GeneratorModel load_generator(const Checkpoint& ckpt);
EncoderSpec discriminator_spec(const Checkpoint& ckpt);
/// All tensors except the "meta." entries.
ParamSet checkpoint_params(const Checkpoint& ckpt);

/// Image datasets travel in the same container as "data.images" [N,3,R,R]
/// and "data.labels" [N].
struct LabeledImages {
  Tensor images;
  std::vector<std::size_t> labels;
};
Checkpoint make_dataset_checkpoint(const Tensor& images, const std::vector<std::size_t>& labels);
LabeledImages dataset_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dgan
