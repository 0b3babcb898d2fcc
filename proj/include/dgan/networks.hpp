#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dgan/layers.hpp"
#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

/// Named parameters of one or more networks. Sorted by name, which fixes the
/// iteration order everywhere (optimizer, checkpoints, hashing).
using ParamSet = std::map<std::string, Tensor>;

/// Copy of `params` whose tensors are leaves with the requested grad flag.
ParamSet as_leaves(const ParamSet& params, bool requires_grad);
/// Subset of `params` whose names start with `prefix`.
ParamSet select_prefix(const ParamSet& params, const std::string& prefix);
/// Order-sensitive 64-bit digest of names, shapes and payload bits.
std::uint64_t hash_params(const ParamSet& params);

struct GeneratorSpec {
  std::vector<std::size_t> resolutions{4, 8, 16, 32};
  std::vector<std::size_t> channels{128, 128, 64, 32};
  std::size_t dim_z_s = 64;
  std::size_t dim_z_c = 64;
  std::size_t dim_s = 64;
  std::size_t dim_c = 64;
  std::size_t mapping_depth = 4;
  std::size_t dat_max_resolution = 32;
  bool use_pixel_noise = false;
  std::size_t num_style_domains = 1;

  /// Throws ValidationError naming the offending field.
  void validate() const;

  /// Two DAT+AdaIN layers per resolution block.
  std::size_t num_layers() const { return 2 * resolutions.size(); }
  std::size_t output_resolution() const { return resolutions.back(); }
  std::size_t layer_resolution(std::size_t layer) const;
  std::size_t layer_channels(std::size_t layer) const;
  bool layer_has_dat(std::size_t layer) const;

  /// Flat numeric snapshot stored in checkpoints.
  std::vector<double> to_vector() const;
  static GeneratorSpec from_vector(const std::vector<double>& v);

  bool operator==(const GeneratorSpec&) const = default;
};

/// Per-layer mapped codes. One style code s_l [N,dim_s] and one content code
/// c_l [N,dim_c] per generator layer.
struct LayerCodes {
  std::vector<Tensor> style;
  std::vector<Tensor> content;

  static LayerCodes uniform(const Tensor& s, const Tensor& c, std::size_t layers);
  std::size_t batch() const;
};

/// Intermediate tensors captured during a generator pass.
struct GeneratorTrace {
  std::vector<Tensor> attention;    // d per layer ([N,H,W]); null without DAT
  std::vector<Tensor> adain_scale;  // [N,C] per layer
  std::vector<Tensor> adain_bias;   // [N,C] per layer
};

struct GeneratorOptions {
  /// Per-layer pixel noise [N,H,W]; ignored unless the spec enables noise.
  std::vector<Tensor> noise;
  /// Replaces the computed attention map at a layer. [H,W] or [N,H,W].
  std::map<std::size_t, Tensor> attention_override;
  GeneratorTrace* trace = nullptr;
};

ParamSet init_generator(const GeneratorSpec& spec, Rng& rng);

/// z_s [N,dim_z_s] -> s [N,dim_s] through the shared trunk and the head of
/// each sample's domain.
Tensor map_style(const GeneratorSpec& spec, const ParamSet& params, const Tensor& z_s,
                 const std::vector<std::size_t>& domains);
/// z_c [N,dim_z_c] -> c [N,dim_c].
Tensor map_content(const GeneratorSpec& spec, const ParamSet& params, const Tensor& z_c);

/// Content mapping as a standalone MLP view over the parameter set.
layers::MappingNet content_mapping_net(const GeneratorSpec& spec, const ParamSet& params);
layers::DATParams dat_params(const GeneratorSpec& spec, const ParamSet& params,
                             std::size_t layer);

/// Renders [N,3,R,R] images.
Tensor generator_forward(const GeneratorSpec& spec, const ParamSet& params,
                         const LayerCodes& codes, const GeneratorOptions& options = {});

/// Samples per-layer pixel noise for a batch.
std::vector<Tensor> sample_noise(const GeneratorSpec& spec, std::size_t batch, Rng& rng);

/// Convolutional stack shared by the discriminator and the inversion encoders:
/// 1x1 from-RGB, stride-2 downsampling down to 4x4, a dense layer and
/// `heads` output heads of width `out_dim`.
struct EncoderSpec {
  std::vector<std::size_t> resolutions{4, 8, 16, 32};
  std::vector<std::size_t> channels{128, 128, 64, 32};
  std::size_t heads = 1;
  std::size_t out_dim = 1;

  /// Mirror of a generator's resolution/channel schedule.
  static EncoderSpec mirror(const GeneratorSpec& gen, std::size_t heads, std::size_t out_dim);
  void validate() const;
  std::size_t input_resolution() const { return resolutions.back(); }

  std::vector<double> to_vector() const;
  static EncoderSpec from_vector(const std::vector<double>& v);
  bool operator==(const EncoderSpec&) const = default;
};

ParamSet init_encoder(const EncoderSpec& spec, const std::string& prefix, Rng& rng);

/// [N,3,R,R] -> [N,out_dim] from each sample's head. `domains` may be empty
/// when the net has a single head (it is then ignored).
Tensor encoder_forward(const EncoderSpec& spec, const ParamSet& params,
                       const std::string& prefix, const Tensor& image,
                       const std::vector<std::size_t>& domains = {});

/// Raw logits [N].
Tensor discriminator_forward(const EncoderSpec& spec, const ParamSet& params,
                             const std::string& prefix, const Tensor& image,
                             const std::vector<std::size_t>& domains = {});

inline constexpr double kDefaultTruncationPsi = 0.7;

/// w_mean + psi (w - w_mean). w [N,d] or [d], w_mean [d].
Tensor truncate(const Tensor& w, double psi, const Tensor& w_mean);

/// Mean mapped style code of one domain over `samples` draws.
Tensor mean_style(const GeneratorSpec& spec, const ParamSet& params, std::size_t domain,
                  std::size_t samples, std::uint64_t seed);

/// Generator with its mapping networks behind a (z -> codes -> image) surface.
class GeneratorModel {
 public:
  GeneratorModel(GeneratorSpec spec, ParamSet params);

  const GeneratorSpec& spec() const { return spec_; }
  const ParamSet& params() const { return params_; }

  Tensor sample_z_style(Rng& rng, std::size_t n) const;
  Tensor sample_z_content(Rng& rng, std::size_t n) const;
  Tensor style_codes(const Tensor& z_s, std::size_t domain) const;
  Tensor content_codes(const Tensor& z_c) const;
  Tensor render(const Tensor& s, const Tensor& c, const GeneratorOptions& options = {}) const;
  Tensor render(const LayerCodes& codes, const GeneratorOptions& options = {}) const;

 private:
  GeneratorSpec spec_;
  ParamSet params_;
};

}  // namespace dgan
