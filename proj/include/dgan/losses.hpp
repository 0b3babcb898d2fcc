#pragma once

#include <cstddef>
#include <vector>

#include "dgan/metrics.hpp"
#include "dgan/networks.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

inline constexpr double kDefaultDsLambda = 0.3;
inline constexpr double kDefaultGammaR1 = 10.0;
inline constexpr double kDefaultLambdaLat = 1.0;
inline constexpr double kDefaultLambdaAdv = 0.1;
inline constexpr double kDefaultLambdaReg = 2.0;

struct LossWeights {
  double lambda_ds = kDefaultDsLambda;
  double gamma_r1 = kDefaultGammaR1;
  double lambda_lat = kDefaultLambdaLat;
  double lambda_adv = kDefaultLambdaAdv;
  double lambda_reg = kDefaultLambdaReg;
  /// Use the mean squared code error instead of summed Euclidean norms in the
  /// latent loss.
  bool latent_squared = false;

  void validate() const;
};

/// mean softplus(-fake_score)
Tensor adv_loss_g(const Tensor& fake_score);

struct DiscriminatorLoss {
  Tensor total;
  Tensor data_term;  // softplus terms only
  Tensor r1;         // (gamma/2) E||grad D(x_real)||^2
};

/// Non-saturating discriminator loss with the R1 penalty. `real_images` must
/// be the graph leaf `real_score` was computed from, with requires_grad set.
DiscriminatorLoss adv_loss_d(const Tensor& real_score, const Tensor& fake_score,
                             const Tensor& real_images, double gamma);

/// Diversity-sensitive hinge max(lambda - meanAbs(img1 - img2), 0), applied
/// per pair and averaged over the batch.
Tensor ds_loss(const Tensor& img1, const Tensor& img2, double lambda);

Tensor total_loss_g(const Tensor& adv, const Tensor& ds);

/// ||s - s_f|| + ||c - c_f|| averaged over the batch (or the mean squared
/// error of both when `squared`).
Tensor inversion_latent_loss(const Tensor& s, const Tensor& s_f, const Tensor& c,
                             const Tensor& c_f, bool squared = false);

/// MSE + perceptual + lambda_lat L_latent + lambda_adv softplus(-D(x_rec)).
Tensor inversion_encoder_loss(const Tensor& x_real, const Tensor& x_rec,
                              const Tensor& latent_term, const Tensor& disc_score,
                              const LossWeights& weights, const FeatureExtractor& fx);

/// Style and content encoders used by inversion. Parameters live under the
/// "se." and "ce." prefixes of one set.
struct InversionEncoders {
  EncoderSpec style_spec;
  EncoderSpec content_spec;
  ParamSet params;

  static InversionEncoders init(const GeneratorSpec& gen, Rng& rng);
  Tensor encode_style(const Tensor& images, const std::vector<std::size_t>& domains) const;
  Tensor encode_content(const Tensor& images) const;
};

/// Per-image Euclidean pixel distance + perceptual of (x_real, G(s,c)) plus lambda_reg-weighted distances of
/// s and c to the encodings of G(s,c).
Tensor latent_opt_loss(const Tensor& s, const Tensor& c, const Tensor& x_real,
                       const GeneratorModel& generator, const InversionEncoders& encoders,
                       const std::vector<std::size_t>& domains, double lambda_reg,
                       const FeatureExtractor& fx);

Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace dgan
