#include "dgan/networks.hpp"

#include <cmath>

#include "dgan/error.hpp"

namespace dgan {

namespace {

std::string layer_name(std::size_t layer, const char* part) {
  return "g.l" + std::to_string(layer) + "." + part;
}

const Tensor& param(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing parameter '" + name + "'");
  return it->second;
}

void add_param(ParamSet& params, const std::string& name, Shape shape, double stddev,
               Rng& rng, double fill = 0.0) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> data = stddev > 0 ? rng.normal_vector(n, stddev) : std::vector<double>(n, fill);
  params.emplace(name, Tensor::from(std::move(shape), std::move(data), true));
}

void add_linear(ParamSet& params, const std::string& name, std::size_t out, std::size_t in,
                double gain, Rng& rng, double bias_fill = 0.0) {
  add_param(params, name + ".w", {out, in}, gain / std::sqrt(static_cast<double>(in)), rng);
  add_param(params, name + ".b", {out}, 0.0, rng, bias_fill);
}

void add_conv(ParamSet& params, const std::string& name, std::size_t out, std::size_t in,
              std::size_t k, double gain, Rng& rng, double bias_fill = 0.0) {
  add_param(params, name + ".w", {out, in, k, k},
            gain / std::sqrt(static_cast<double>(in * k * k)), rng);
  add_param(params, name + ".b", {out}, 0.0, rng, bias_fill);
}

layers::Linear linear_of(const ParamSet& params, const std::string& name) {
  return {param(params, name + ".w"), param(params, name + ".b")};
}

Tensor conv_layer(const ParamSet& params, const std::string& name, const Tensor& x,
                  std::size_t stride) {
  const Tensor& w = param(params, name + ".w");
  return conv2d(x, w, stride, w.dim(2) / 2) + param(params, name + ".b");
}

const double kHe = std::sqrt(2.0);

// Per-sample head selection from a stacked [N, heads*width] output.
Tensor select_heads(const Tensor& stacked, std::size_t heads, std::size_t width,
                    const std::vector<std::size_t>& domains, const char* what) {
  const std::size_t n = stacked.dim(0);
  if (heads == 1) return stacked;
  if (domains.size() != n) {
    throw ContractError(std::string(what) + ": expected one domain index per sample (" +
                        std::to_string(n) + "), got " + std::to_string(domains.size()));
  }
  std::vector<double> mask(n * heads * width, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (domains[i] >= heads) {
      throw ContractError(std::string(what) + ": unknown domain index " +
                          std::to_string(domains[i]) + " (heads: " + std::to_string(heads) + ")");
    }
    std::fill_n(mask.begin() + static_cast<long>((i * heads + domains[i]) * width), width, 1.0);
  }
  Tensor picked = stacked * Tensor::from(stacked.shape(), std::move(mask));
  return reshape(sum_to(reshape(picked, {n, heads, width}), {n, 1, width}), {n, width});
}

}  // namespace

// ---- parameter sets ---------------------------------------------------------

ParamSet as_leaves(const ParamSet& params, bool requires_grad) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, t.as_leaf(requires_grad));
  return out;
}

ParamSet select_prefix(const ParamSet& params, const std::string& prefix) {
  ParamSet out;
  for (const auto& [name, t] : params) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  }
  return out;
}

std::uint64_t hash_params(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    feed(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

// ---- GeneratorSpec ----------------------------------------------------------

void GeneratorSpec::validate() const {
  if (resolutions.empty()) throw ValidationError("resolutions: must not be empty");
  if (resolutions.front() != 4) throw ValidationError("resolutions: must start at 4");
  for (std::size_t i = 1; i < resolutions.size(); ++i) {
    if (resolutions[i] != 2 * resolutions[i - 1]) {
      throw ValidationError("resolutions: must double at every step");
    }
  }
  if (channels.size() != resolutions.size()) {
    throw ValidationError("channels: need one width per resolution");
  }
  for (auto c : channels) {
    if (c == 0) throw ValidationError("channels: widths must be positive");
  }
  if (dim_z_s == 0) throw ValidationError("dim_z_s: must be positive");
  if (dim_z_c == 0) throw ValidationError("dim_z_c: must be positive");
  if (dim_s == 0) throw ValidationError("dim_s: must be positive");
  if (dim_c == 0) throw ValidationError("dim_c: must be positive");
  if (mapping_depth == 0) throw ValidationError("mapping_depth: must be positive");
  if (num_style_domains == 0) throw ValidationError("num_style_domains: must be positive");
  bool found = false;
  for (auto r : resolutions) found = found || r == dat_max_resolution;
  if (!found) throw ValidationError("dat_max_resolution: must be one of the resolutions");
}

std::size_t GeneratorSpec::layer_resolution(std::size_t layer) const {
  if (layer >= num_layers()) throw ContractError("layer index out of range");
  return resolutions[layer / 2];
}

std::size_t GeneratorSpec::layer_channels(std::size_t layer) const {
  if (layer >= num_layers()) throw ContractError("layer index out of range");
  return channels[layer / 2];
}

bool GeneratorSpec::layer_has_dat(std::size_t layer) const {
  return layer_resolution(layer) <= dat_max_resolution;
}

std::vector<double> GeneratorSpec::to_vector() const {
  std::vector<double> v{1.0, static_cast<double>(resolutions.size())};
  for (auto r : resolutions) v.push_back(static_cast<double>(r));
  for (auto c : channels) v.push_back(static_cast<double>(c));
  for (auto x : {dim_z_s, dim_z_c, dim_s, dim_c, mapping_depth, dat_max_resolution}) {
    v.push_back(static_cast<double>(x));
  }
  v.push_back(use_pixel_noise ? 1.0 : 0.0);
  v.push_back(static_cast<double>(num_style_domains));
  return v;
}

GeneratorSpec GeneratorSpec::from_vector(const std::vector<double>& v) {
  auto at = [&v](std::size_t i) {
    if (i >= v.size()) throw FormatError("generator spec snapshot is truncated");
    return static_cast<std::size_t>(v[i]);
  };
  if (at(0) != 1) throw FormatError("unsupported generator spec snapshot version");
  const std::size_t n = at(1);
  GeneratorSpec spec;
  spec.resolutions.assign(n, 0);
  spec.channels.assign(n, 0);
  std::size_t i = 2;
  for (std::size_t k = 0; k < n; ++k) spec.resolutions[k] = at(i++);
  for (std::size_t k = 0; k < n; ++k) spec.channels[k] = at(i++);
  spec.dim_z_s = at(i++);
  spec.dim_z_c = at(i++);
  spec.dim_s = at(i++);
  spec.dim_c = at(i++);
  spec.mapping_depth = at(i++);
  spec.dat_max_resolution = at(i++);
  spec.use_pixel_noise = at(i++) != 0;
  spec.num_style_domains = at(i++);
  if (i != v.size()) throw FormatError("generator spec snapshot has trailing values");
  spec.validate();
  return spec;
}

// ---- LayerCodes ---------------------------------------------------------------

LayerCodes LayerCodes::uniform(const Tensor& s, const Tensor& c, std::size_t layers) {
  return {std::vector<Tensor>(layers, s), std::vector<Tensor>(layers, c)};
}

std::size_t LayerCodes::batch() const {
  if (style.empty()) throw ContractError("empty layer codes");
  return style.front().dim(0);
}

// ---- generator ------------------------------------------------------------------

ParamSet init_generator(const GeneratorSpec& spec, Rng& rng) {
  spec.validate();
  ParamSet p;
  // style mapping: shared trunk plus one head per domain
  std::size_t width = spec.dim_z_s;
  for (std::size_t i = 0; i + 1 < spec.mapping_depth; ++i) {
    add_linear(p, "map_s.l" + std::to_string(i), spec.dim_s, width, kHe, rng);
    width = spec.dim_s;
  }
  for (std::size_t k = 0; k < spec.num_style_domains; ++k) {
    add_linear(p, "map_s.head" + std::to_string(k), spec.dim_s, width, 1.0, rng);
  }
  width = spec.dim_z_c;
  for (std::size_t i = 0; i < spec.mapping_depth; ++i) {
    add_linear(p, "map_c.l" + std::to_string(i), spec.dim_c, width,
               i + 1 < spec.mapping_depth ? kHe : 1.0, rng);
    width = spec.dim_c;
  }

  add_param(p, "g.const", {1, spec.channels.front(), 4, 4}, 1.0, rng);
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t out = spec.layer_channels(l);
    const std::size_t in = (l == 0 || l % 2 == 1) ? out : spec.channels[l / 2 - 1];
    const std::size_t res = spec.layer_resolution(l);
    add_conv(p, layer_name(l, "conv"), out, in, 3, kHe, rng);
    if (spec.use_pixel_noise) add_param(p, layer_name(l, "noise"), {out}, 0.0, rng);
    if (spec.layer_has_dat(l)) {
      add_param(p, layer_name(l, "beta"), {}, 0.0, rng);
      add_linear(p, layer_name(l, "attn"), res * res, spec.dim_c, 1.0, rng);
    }
    add_linear(p, layer_name(l, "style_scale"), out, spec.dim_s, 1.0, rng, 1.0);
    add_linear(p, layer_name(l, "style_bias"), out, spec.dim_s, 1.0, rng, 0.0);
  }
  add_conv(p, "g.to_rgb", 3, spec.channels.back(), 1, 1.0, rng, 0.5);
  return p;
}

Tensor map_style(const GeneratorSpec& spec, const ParamSet& params, const Tensor& z_s,
                 const std::vector<std::size_t>& domains) {
  if (z_s.rank() != 2 || z_s.dim(1) != spec.dim_z_s) {
    throw DimensionError("map_style: expected [N," + std::to_string(spec.dim_z_s) + "], got " +
                         shape_str(z_s.shape()));
  }
  Tensor h = z_s;
  for (std::size_t i = 0; i + 1 < spec.mapping_depth; ++i) {
    h = leaky_relu(layers::linear(h, linear_of(params, "map_s.l" + std::to_string(i))),
                   layers::kLeakySlope);
  }
  if (spec.num_style_domains == 1) {
    for (auto d : domains) {
      if (d != 0) throw ContractError("map_style: unknown domain index " + std::to_string(d));
    }
    return layers::linear(h, linear_of(params, "map_s.head0"));
  }
  if (domains.size() != z_s.dim(0)) {
    throw ContractError("map_style: expected one domain index per sample");
  }
  Tensor out;
  for (std::size_t k = 0; k < spec.num_style_domains; ++k) {
    std::vector<double> mask(z_s.dim(0) * spec.dim_s, 0.0);
    bool used = false;
    for (std::size_t i = 0; i < domains.size(); ++i) {
      if (domains[i] >= spec.num_style_domains) {
        throw ContractError("map_style: unknown domain index " + std::to_string(domains[i]));
      }
      if (domains[i] == k) {
        std::fill_n(mask.begin() + static_cast<long>(i * spec.dim_s), spec.dim_s, 1.0);
        used = true;
      }
    }
    if (!used) continue;
    Tensor head = layers::linear(h, linear_of(params, "map_s.head" + std::to_string(k)));
    Tensor part = head * Tensor::from(head.shape(), std::move(mask));
    out = out.defined() ? out + part : part;
  }
  return out;
}

layers::MappingNet content_mapping_net(const GeneratorSpec& spec, const ParamSet& params) {
  layers::MappingNet net;
  for (std::size_t i = 0; i < spec.mapping_depth; ++i) {
    net.layers.push_back(linear_of(params, "map_c.l" + std::to_string(i)));
  }
  return net;
}

Tensor map_content(const GeneratorSpec& spec, const ParamSet& params, const Tensor& z_c) {
  if (z_c.rank() != 2 || z_c.dim(1) != spec.dim_z_c) {
    throw DimensionError("map_content: expected [N," + std::to_string(spec.dim_z_c) +
                         "], got " + shape_str(z_c.shape()));
  }
  return layers::mapping_forward(z_c, content_mapping_net(spec, params));
}

layers::DATParams dat_params(const GeneratorSpec& spec, const ParamSet& params,
                             std::size_t layer) {
  if (!spec.layer_has_dat(layer)) {
    throw ContractError("layer " + std::to_string(layer) + " carries no DAT");
  }
  const std::size_t res = spec.layer_resolution(layer);
  return {param(params, layer_name(layer, "beta")), param(params, layer_name(layer, "attn.w")),
          param(params, layer_name(layer, "attn.b")), res, res};
}

Tensor generator_forward(const GeneratorSpec& spec, const ParamSet& params,
                         const LayerCodes& codes, const GeneratorOptions& options) {
  const std::size_t layers_n = spec.num_layers();
  if (codes.style.size() != layers_n || codes.content.size() != layers_n) {
    throw DimensionError("generator_forward: expected codes for " + std::to_string(layers_n) +
                         " layers, got " + std::to_string(codes.style.size()) + "/" +
                         std::to_string(codes.content.size()));
  }
  const std::size_t n = codes.batch();
  for (std::size_t l = 0; l < layers_n; ++l) {
    if (codes.style[l].shape() != Shape{n, spec.dim_s} ||
        codes.content[l].shape() != Shape{n, spec.dim_c}) {
      throw DimensionError("generator_forward: layer " + std::to_string(l) + " codes " +
                           shape_str(codes.style[l].shape()) + "/" +
                           shape_str(codes.content[l].shape()) + " do not match the spec");
    }
  }
  for (const auto& [layer, map] : options.attention_override) {
    if (layer >= layers_n || !spec.layer_has_dat(layer)) {
      throw ContractError("attention override for layer " + std::to_string(layer) +
                          ", which has no DAT");
    }
  }
  if (options.trace) *options.trace = GeneratorTrace{};

  const Tensor& constant = param(params, "g.const");
  Tensor x = expand(constant, {n, constant.dim(1), 4, 4});
  for (std::size_t l = 0; l < layers_n; ++l) {
    if (l % 2 == 0 && l > 0) x = upsample2x(x);
    x = conv_layer(params, layer_name(l, "conv"), x, 1);
    if (spec.use_pixel_noise && l < options.noise.size() && options.noise[l].defined()) {
      x = layers::noise_inject_nchw(x, options.noise[l], param(params, layer_name(l, "noise")));
    }
    Tensor d;
    if (spec.layer_has_dat(l)) {
      auto ov = options.attention_override.find(l);
      if (ov != options.attention_override.end()) {
        d = ov->second;
      } else {
        d = layers::attention_map(codes.content[l], dat_params(spec, params, l), l).d;
      }
      x = layers::dat_nchw(x, d, param(params, layer_name(l, "beta")));
    }
    Tensor s_scale = layers::linear(codes.style[l], linear_of(params, layer_name(l, "style_scale")));
    Tensor s_bias = layers::linear(codes.style[l], linear_of(params, layer_name(l, "style_bias")));
    x = layers::adain_nchw(x, {s_scale, s_bias, layers::kInstanceNormEps});
    x = leaky_relu(x, layers::kLeakySlope);
    if (options.trace) {
      options.trace->attention.push_back(d);
      options.trace->adain_scale.push_back(s_scale);
      options.trace->adain_bias.push_back(s_bias);
    }
  }
  return conv_layer(params, "g.to_rgb", x, 1);
}

std::vector<Tensor> sample_noise(const GeneratorSpec& spec, std::size_t batch, Rng& rng) {
  std::vector<Tensor> noise;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t r = spec.layer_resolution(l);
    noise.push_back(Tensor::from({batch, r, r}, rng.normal_vector(batch * r * r)));
  }
  return noise;
}

// ---- encoder / discriminator --------------------------------------------------

EncoderSpec EncoderSpec::mirror(const GeneratorSpec& gen, std::size_t heads,
                                std::size_t out_dim) {
  EncoderSpec spec;
  spec.resolutions = gen.resolutions;
  spec.channels = gen.channels;
  spec.heads = heads;
  spec.out_dim = out_dim;
  spec.validate();
  return spec;
}

void EncoderSpec::validate() const {
  if (resolutions.empty() || resolutions.front() != 4) {
    throw ValidationError("encoder resolutions: must start at 4");
  }
  for (std::size_t i = 1; i < resolutions.size(); ++i) {
    if (resolutions[i] != 2 * resolutions[i - 1]) {
      throw ValidationError("encoder resolutions: must double at every step");
    }
  }
  if (channels.size() != resolutions.size()) {
    throw ValidationError("encoder channels: need one width per resolution");
  }
  if (heads == 0) throw ValidationError("encoder heads: must be at least 1");
  if (out_dim == 0) throw ValidationError("encoder out_dim: must be positive");
}

std::vector<double> EncoderSpec::to_vector() const {
  std::vector<double> v{1.0, static_cast<double>(resolutions.size())};
  for (auto r : resolutions) v.push_back(static_cast<double>(r));
  for (auto c : channels) v.push_back(static_cast<double>(c));
  v.push_back(static_cast<double>(heads));
  v.push_back(static_cast<double>(out_dim));
  return v;
}

EncoderSpec EncoderSpec::from_vector(const std::vector<double>& v) {
  auto at = [&v](std::size_t i) {
    if (i >= v.size()) throw FormatError("encoder spec snapshot is truncated");
    return static_cast<std::size_t>(v[i]);
  };
  if (at(0) != 1) throw FormatError("unsupported encoder spec snapshot version");
  const std::size_t n = at(1);
  EncoderSpec spec;
  spec.resolutions.assign(n, 0);
  spec.channels.assign(n, 0);
  std::size_t i = 2;
  for (std::size_t k = 0; k < n; ++k) spec.resolutions[k] = at(i++);
  for (std::size_t k = 0; k < n; ++k) spec.channels[k] = at(i++);
  spec.heads = at(i++);
  spec.out_dim = at(i++);
  if (i != v.size()) throw FormatError("encoder spec snapshot has trailing values");
  spec.validate();
  return spec;
}

ParamSet init_encoder(const EncoderSpec& spec, const std::string& prefix, Rng& rng) {
  spec.validate();
  ParamSet p;
  const std::size_t top = spec.resolutions.size() - 1;
  add_conv(p, prefix + ".from_rgb", spec.channels[top], 3, 1, kHe, rng);
  for (std::size_t i = top; i > 0; --i) {
    const std::string block = prefix + ".b" + std::to_string(spec.resolutions[i]);
    add_conv(p, block + ".conv", spec.channels[i], spec.channels[i], 3, kHe, rng);
    add_conv(p, block + ".down", spec.channels[i - 1], spec.channels[i], 3, kHe, rng);
  }
  add_conv(p, prefix + ".b4.conv", spec.channels[0], spec.channels[0], 3, kHe, rng);
  add_linear(p, prefix + ".fc", spec.channels[0], spec.channels[0] * 16, kHe, rng);
  add_linear(p, prefix + ".head", spec.heads * spec.out_dim, spec.channels[0], 1.0, rng);
  return p;
}

Tensor encoder_forward(const EncoderSpec& spec, const ParamSet& params,
                       const std::string& prefix, const Tensor& image,
                       const std::vector<std::size_t>& domains) {
  const std::size_t r = spec.input_resolution();
  if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != r || image.dim(3) != r) {
    throw ContractError("encoder: expected images [N,3," + std::to_string(r) + "," +
                        std::to_string(r) + "], got " + shape_str(image.shape()));
  }
  const std::size_t top = spec.resolutions.size() - 1;
  const double slope = layers::kLeakySlope;
  Tensor x = leaky_relu(conv_layer(params, prefix + ".from_rgb", image, 1), slope);
  for (std::size_t i = top; i > 0; --i) {
    const std::string block = prefix + ".b" + std::to_string(spec.resolutions[i]);
    x = leaky_relu(conv_layer(params, block + ".conv", x, 1), slope);
    x = leaky_relu(conv_layer(params, block + ".down", x, 2), slope);
  }
  x = leaky_relu(conv_layer(params, prefix + ".b4.conv", x, 1), slope);
  const std::size_t n = image.dim(0);
  x = reshape(x, {n, spec.channels[0] * 16});
  x = leaky_relu(layers::linear(x, linear_of(params, prefix + ".fc")), slope);
  Tensor out = layers::linear(x, linear_of(params, prefix + ".head"));
  return select_heads(out, spec.heads, spec.out_dim, domains, "encoder");
}

Tensor discriminator_forward(const EncoderSpec& spec, const ParamSet& params,
                             const std::string& prefix, const Tensor& image,
                             const std::vector<std::size_t>& domains) {
  if (spec.out_dim != 1) throw ContractError("discriminator: out_dim must be 1");
  Tensor scores = encoder_forward(spec, params, prefix, image, domains);
  return reshape(scores, {image.dim(0)});
}

// ---- truncation -----------------------------------------------------------------

Tensor truncate(const Tensor& w, double psi, const Tensor& w_mean) {
  if (!(psi >= 0.0 && psi <= 1.0)) {
    throw ContractError("truncate: psi must lie in [0,1], got " + std::to_string(psi));
  }
  const std::size_t d = w.shape().back();
  if (w_mean.shape() != Shape{d} || (w.rank() != 1 && w.rank() != 2)) {
    throw DimensionError("truncate: code " + shape_str(w.shape()) + " vs mean " +
                         shape_str(w_mean.shape()));
  }
  return w_mean + (w - w_mean) * psi;
}

Tensor mean_style(const GeneratorSpec& spec, const ParamSet& params, std::size_t domain,
                  std::size_t samples, std::uint64_t seed) {
  NoGradGuard no_grad;
  Rng rng(derive_seed(seed, "mean_style", domain));
  Tensor z = Tensor::from({samples, spec.dim_z_s}, rng.normal_vector(samples * spec.dim_z_s));
  Tensor s = map_style(spec, params, z, std::vector<std::size_t>(samples, domain));
  return reshape(scale(sum_to(s, {1, spec.dim_s}), 1.0 / static_cast<double>(samples)),
                 {spec.dim_s});
}

// ---- GeneratorModel -------------------------------------------------------------

GeneratorModel::GeneratorModel(GeneratorSpec spec, ParamSet params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
}

Tensor GeneratorModel::sample_z_style(Rng& rng, std::size_t n) const {
  return Tensor::from({n, spec_.dim_z_s}, rng.normal_vector(n * spec_.dim_z_s));
}

Tensor GeneratorModel::sample_z_content(Rng& rng, std::size_t n) const {
  return Tensor::from({n, spec_.dim_z_c}, rng.normal_vector(n * spec_.dim_z_c));
}

Tensor GeneratorModel::style_codes(const Tensor& z_s, std::size_t domain) const {
  return map_style(spec_, params_, z_s, std::vector<std::size_t>(z_s.dim(0), domain));
}

Tensor GeneratorModel::content_codes(const Tensor& z_c) const {
  return map_content(spec_, params_, z_c);
}

Tensor GeneratorModel::render(const Tensor& s, const Tensor& c,
                              const GeneratorOptions& options) const {
  return generator_forward(spec_, params_, LayerCodes::uniform(s, c, spec_.num_layers()),
                           options);
}

Tensor GeneratorModel::render(const LayerCodes& codes, const GeneratorOptions& options) const {
  return generator_forward(spec_, params_, codes, options);
}

}  // namespace dgan
