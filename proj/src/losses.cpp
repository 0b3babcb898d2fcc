#include "dgan/losses.hpp"

#include "dgan/error.hpp"

namespace dgan {

namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() <= 1) return reshape(x, {1, x.numel()});
  return x;
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Per-sample Euclidean norm of the rows of a [N,...] difference.
Tensor row_norms(const Tensor& diff) { return sqrt(sum_trailing(square(diff), 1)); }

}  // namespace

void LossWeights::validate() const {
  if (lambda_ds < 0) throw ValidationError("lambda_ds: must be >= 0");
  if (gamma_r1 < 0) throw ValidationError("gamma_r1: must be >= 0");
  if (lambda_lat < 0) throw ValidationError("lambda_lat: must be >= 0");
  if (lambda_adv < 0) throw ValidationError("lambda_adv: must be >= 0");
  if (lambda_reg < 0) throw ValidationError("lambda_reg: must be >= 0");
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mse");
  return mean(square(a - b));
}

Tensor adv_loss_g(const Tensor& fake_score) { return mean(softplus(-fake_score)); }

DiscriminatorLoss adv_loss_d(const Tensor& real_score, const Tensor& fake_score,
                             const Tensor& real_images, double gamma) {
  if (gamma < 0) throw ContractError("adv_loss_d: gamma must be >= 0");
  DiscriminatorLoss out;
  out.data_term = mean(softplus(-real_score)) + mean(softplus(fake_score));
  if (gamma == 0.0) {
    out.r1 = Tensor::scalar(0.0);
  } else {
    if (!real_images.requires_grad()) {
      throw ContractError("adv_loss_d: real images must require grad for the R1 penalty");
    }
    Tensor g = grad(sum(real_score), {real_images}, /*create_graph=*/true)[0];
    const double n = static_cast<double>(real_images.dim(0));
    out.r1 = sum(square(g)) * (0.5 * gamma / n);
  }
  out.total = out.data_term + out.r1;
  return out;
}

Tensor ds_loss(const Tensor& img1, const Tensor& img2, double lambda) {
  require_same(img1, img2, "ds_loss");
  if (lambda < 0) throw ContractError("ds_loss: lambda must be >= 0");
  Tensor a = img1.rank() == 3 ? reshape(img1, {1, img1.numel()}) : as_batch(img1);
  Tensor b = img2.rank() == 3 ? reshape(img2, {1, img2.numel()}) : as_batch(img2);
  const double per_sample = static_cast<double>(a.numel() / a.dim(0));
  Tensor mean_abs = scale(sum_trailing(abs(a - b), 1), 1.0 / per_sample);
  Tensor hinge = leaky_relu((-mean_abs) + lambda, 0.0);
  return mean(hinge);
}

Tensor total_loss_g(const Tensor& adv, const Tensor& ds) {
  if (adv.numel() != 1 || ds.numel() != 1) throw DimensionError("total_loss_g: expects scalars");
  return adv + ds;
}

Tensor inversion_latent_loss(const Tensor& s, const Tensor& s_f, const Tensor& c,
                             const Tensor& c_f, bool squared) {
  require_same(s, s_f, "inversion_latent_loss");
  require_same(c, c_f, "inversion_latent_loss");
  if (squared) return mse(s, s_f) + mse(c, c_f);
  return mean(row_norms(as_batch(s) - as_batch(s_f))) + mean(row_norms(as_batch(c) - as_batch(c_f)));
}

Tensor inversion_encoder_loss(const Tensor& x_real, const Tensor& x_rec,
                              const Tensor& latent_term, const Tensor& disc_score,
                              const LossWeights& weights, const FeatureExtractor& fx) {
  if (weights.lambda_lat < 0 || weights.lambda_adv < 0) {
    throw ContractError("inversion_encoder_loss: loss weights must be >= 0");
  }
  return mse(x_real, x_rec) + perceptual_distance(x_real, x_rec, fx) +
         latent_term * weights.lambda_lat + adv_loss_g(disc_score) * weights.lambda_adv;
}

InversionEncoders InversionEncoders::init(const GeneratorSpec& gen, Rng& rng) {
  InversionEncoders enc{EncoderSpec::mirror(gen, gen.num_style_domains, gen.dim_s),
                        EncoderSpec::mirror(gen, 1, gen.dim_c), {}};
  Rng style_rng = rng.child("se");
  Rng content_rng = rng.child("ce");
  enc.params = init_encoder(enc.style_spec, "se", style_rng);
  enc.params.merge(init_encoder(enc.content_spec, "ce", content_rng));
  return enc;
}

Tensor InversionEncoders::encode_style(const Tensor& images,
                                       const std::vector<std::size_t>& domains) const {
  return encoder_forward(style_spec, params, "se", images, domains);
}

Tensor InversionEncoders::encode_content(const Tensor& images) const {
  return encoder_forward(content_spec, params, "ce", images);
}

Tensor latent_opt_loss(const Tensor& s, const Tensor& c, const Tensor& x_real,
                       const GeneratorModel& generator, const InversionEncoders& encoders,
                       const std::vector<std::size_t>& domains, double lambda_reg,
                       const FeatureExtractor& fx) {
  if (lambda_reg < 0) throw ContractError("latent_opt_loss: lambda_reg must be >= 0");
  Tensor x = generator.render(s, c);
  Tensor loss = mean(row_norms(x_real - x)) + perceptual_distance(x_real, x, fx);
  if (lambda_reg > 0) {
    Tensor s_enc = encoders.encode_style(x, domains);
    Tensor c_enc = encoders.encode_content(x);
    loss = loss + mean(row_norms(s - s_enc)) * lambda_reg + mean(row_norms(c - c_enc)) * lambda_reg;
  }
  return loss;
}

}  // namespace dgan
