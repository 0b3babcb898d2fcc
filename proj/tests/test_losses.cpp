#include <doctest.h>

#include <cmath>

#include "dgan/error.hpp"
#include "dgan/losses.hpp"
#include "helpers.hpp"

using namespace dgan;
using namespace dgan::test;

namespace {

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

// D(x) = <w, x> per sample.
Tensor linear_disc(const Tensor& x, const Tensor& w) {
  return sum_trailing(x * expand(reshape(w, {1, w.numel()}), {x.dim(0), w.numel()}), 1);
}

}  // namespace

TEST_CASE("generator adversarial loss examples") {
  CHECK(adv_loss_g(Tensor::from({1}, {0})).item() == doctest::Approx(std::log(2.0)));
  CHECK(adv_loss_g(Tensor::from({3}, {-1, 0, 1})).item() ==
        doctest::Approx((softplus_ref(1) + std::log(2.0) + softplus_ref(-1)) / 3).epsilon(1e-14));
  double prev = adv_loss_g(Tensor::from({1}, {-5})).item();
  for (double s = -4.5; s <= 40; s += 0.5) {
    const double cur = adv_loss_g(Tensor::from({1}, {s})).item();
    CHECK(cur < prev);
    CHECK(cur >= 0);
    prev = cur;
  }
  CHECK(adv_loss_g(Tensor::from({1}, {40})).item() < 1e-15);
}

TEST_CASE("discriminator loss examples") {
  Tensor real = Tensor::zeros({4, 3}, true);
  Tensor zero_score = sum_trailing(real, 1) * 0.0;
  auto l = adv_loss_d(zero_score, Tensor::zeros({4}), real, 10.0);
  CHECK(l.r1.item() == 0.0);
  CHECK(l.total.item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(adv_loss_d(zero_score, Tensor::zeros({4}), real, -1.0), ContractError);
  CHECK_THROWS_AS(adv_loss_d(zero_score, Tensor::zeros({4}), Tensor::zeros({4, 3}), 1.0),
                  ContractError);
}

TEST_CASE("R1 equals (gamma/2)||w||^2 for a linear discriminator") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor w = randn({6}, rng);
    Tensor x = randn({5, 6}, rng, 1.0, true);
    const double gamma = 0.5 + 10 * rng.uniform(0, 1);
    auto l = adv_loss_d(linear_disc(x, w), randn({5}, rng), x, gamma);
    double w2 = 0;
    for (double v : w.data()) w2 += v * v;
    CHECK(l.r1.item() == doctest::Approx(0.5 * gamma * w2).epsilon(1e-12));
  }
}

TEST_CASE("doubling gamma doubles only the penalty") {
  Rng rng(3);
  Tensor w = randn({4}, rng);
  Tensor x = randn({3, 4}, rng, 1.0, true);
  Tensor fake = randn({3}, rng);
  auto a = adv_loss_d(linear_disc(x, w), fake, x, 2.0);
  auto b = adv_loss_d(linear_disc(x, w), fake, x, 4.0);
  CHECK(a.data_term.item() == b.data_term.item());
  CHECK(b.r1.item() == doctest::Approx(2 * a.r1.item()).epsilon(1e-14));
}

TEST_CASE("discriminator data terms are monotone in the scores") {
  Rng rng(4);
  Tensor x = Tensor::zeros({1, 2}, true);
  auto data = [&](double real, double fake) {
    return adv_loss_d(Tensor::from({1}, {real}), Tensor::from({1}, {fake}), x, 0.0).data_term.item();
  };
  for (double s = -5; s < 5; s += 0.5) {
    CHECK(data(0, s + 0.5) > data(0, s));
    CHECK(data(s + 0.5, 0) < data(s, 0));
  }
}

TEST_CASE("R1 penalty is differentiable w.r.t. discriminator weights") {
  GeneratorSpec gen = mini_spec();
  EncoderSpec d = EncoderSpec::mirror(gen, 1, 1);
  Rng rng(5);
  ParamSet params = as_leaves(init_encoder(d, "d", rng), false);
  Tensor real = randn({2, 3, 8, 8}, rng);
  Tensor fake = randn({2, 3, 8, 8}, rng);
  for (const char* name : {"d.from_rgb.w", "d.head.w", "d.b8.conv.b"}) {
    auto f = [&](const Tensor& v) {
      ParamSet p = params;
      p[name] = v;
      Tensor x = real.as_leaf(true);
      return adv_loss_d(discriminator_forward(d, p, "d", x), discriminator_forward(d, p, "d", fake),
                        x, 10.0)
          .total;
    };
    CHECK(grad_check(f, params.at(name)) < 1e-5);
  }
}

TEST_CASE("ds loss examples") {
  Rng rng(6);
  Tensor a = randu({2, 3, 4, 4}, rng, 0, 1);
  CHECK(ds_loss(a, a, 0.3).item() == doctest::Approx(0.3).epsilon(1e-15));
  Tensor b = a + 0.5;
  CHECK(ds_loss(a, b, 0.3).item() == 0.0);
  CHECK(kDefaultDsLambda == 0.3);
  CHECK_THROWS_AS(ds_loss(a, randu({2, 3, 4, 2}, rng, 0, 1), 0.3), DimensionError);
}

TEST_CASE("ds loss applies the hinge per pair") {
  Tensor a = Tensor::zeros({2, 1, 2, 2});
  Tensor b = Tensor::from({2, 1, 2, 2}, {0.5, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.1});
  // Pair 0 exceeds lambda, pair 1 contributes 0.3 - 0.1.
  CHECK(ds_loss(a, b, 0.3).item() == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("ds loss stays within [0, lambda]") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const double lambda = rng.uniform(0, 1);
    Tensor a = randu({3, 3, 4, 4}, rng, 0, 1), b = randu({3, 3, 4, 4}, rng, 0, 1);
    const double v = ds_loss(a, b, lambda).item();
    CHECK(v >= 0.0);
    CHECK(v <= lambda);
    CHECK(v < lambda);
  }
}

TEST_CASE("ds loss gradient") {
  Rng rng(7);
  Tensor a = randu({2, 3, 4, 4}, rng, 0, 1);
  // Offsets bounded away from zero keep |a - b| off its kink.
  std::vector<double> off(a.numel());
  for (auto& o : off) o = (rng.uniform(0, 1) < 0.5 ? -1 : 1) * rng.uniform(0.01, 0.08);
  Tensor b = a + Tensor::from(a.shape(), off);
  CHECK(grad_check([&](const Tensor& v) { return ds_loss(v, b, 0.3); }, a) < 1e-5);
}

TEST_CASE("total loss is the sum") {
  CHECK(total_loss_g(Tensor::scalar(0.7), Tensor::scalar(0.3)).item() == doctest::Approx(1.0));
  CHECK(total_loss_g(Tensor::scalar(0.7), Tensor::scalar(0)).item() == 0.7);
  CHECK(total_loss_g(Tensor::scalar(0), Tensor::scalar(0.3)).item() == 0.3);
}

TEST_CASE("latent loss examples") {
  Rng rng(8);
  Tensor s = randn({1, 2}, rng), c = randn({1, 3}, rng);
  CHECK(inversion_latent_loss(s, s, c, c).item() == 0.0);
  Tensor s_f = s - Tensor::from({1, 2}, {3, 4});
  CHECK(inversion_latent_loss(s, s_f, c, c).item() == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(inversion_latent_loss(s_f, s, c, c).item() == inversion_latent_loss(s, s_f, c, c).item());
  CHECK(inversion_latent_loss(s, s_f, c, c, true).item() == doctest::Approx(12.5).epsilon(1e-14));
  CHECK_THROWS_AS(inversion_latent_loss(s, c, c, c), DimensionError);
}

TEST_CASE("latent loss gradient") {
  Rng rng(9);
  Tensor s = randn({3, 4}, rng), sf = randn({3, 4}, rng), c = randn({3, 2}, rng), cf = randn({3, 2}, rng);
  CHECK(grad_check([&](const Tensor& v) { return inversion_latent_loss(v, sf, c, cf); }, s) < 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return inversion_latent_loss(s, sf, c, v); }, cf) < 1e-5);
}

TEST_CASE("encoder loss vanishes at a perfect reconstruction") {
  Rng rng(10);
  Tensor x = randu({2, 3, 8, 8}, rng, 0, 1);
  LossWeights w;
  CHECK(w.lambda_lat == 1.0);
  CHECK(w.lambda_adv == 0.1);
  CHECK(w.lambda_reg == 2.0);
  auto fx = FeatureExtractor::random_conv();
  const double v = inversion_encoder_loss(x, x, Tensor::scalar(0), Tensor::full({2}, 60.0), w, fx).item();
  CHECK(v >= 0.0);
  CHECK(v < 1e-25);
  LossWeights bad;
  bad.lambda_adv = -1;
  CHECK_THROWS_AS(inversion_encoder_loss(x, x, Tensor::scalar(0), Tensor::zeros({2}), bad, fx),
                  ContractError);
}

TEST_CASE("encoder loss terms have correct gradients") {
  Rng rng(11);
  Tensor x = randu({1, 3, 8, 8}, rng, 0, 1);
  Tensor rec = randu({1, 3, 8, 8}, rng, 0, 1);
  LossWeights w;
  auto fx = FeatureExtractor::random_conv();
  auto fid = FeatureExtractor::identity();
  Tensor score = randn({1}, rng);
  Tensor lat = Tensor::scalar(0.4);
  CHECK(grad_check([&](const Tensor& v) { return mse(x, v); }, rec) < 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return perceptual_distance(x, v, fx); }, rec) < 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return inversion_encoder_loss(x, v, lat, score, w, fid); }, rec) < 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return inversion_encoder_loss(x, rec, v, score, w, fx); }, lat) < 1e-5);
  CHECK(grad_check([&](const Tensor& v) { return inversion_encoder_loss(x, rec, lat, v, w, fx); }, score) < 1e-5);
}

TEST_CASE("latent optimisation loss") {
  GeneratorSpec spec = mini_spec(2);
  Rng rng(12);
  GeneratorModel g(spec, as_leaves(with_beta(spec, init_generator(spec, rng), 0.5), false));
  InversionEncoders enc = InversionEncoders::init(spec, rng);
  enc.params = as_leaves(enc.params, false);
  auto fx = FeatureExtractor::random_conv();
  Tensor s = randn({1, spec.dim_s}, rng), c = randn({1, spec.dim_c}, rng);
  Tensor x = g.render(s, c);

  CHECK(latent_opt_loss(s, c, x, g, enc, {1}, 0.0, fx).item() == 0.0);

  // With lambda_reg > 0 the extra terms are the code-to-encoding distances.
  const double with_reg = latent_opt_loss(s, c, x, g, enc, {1}, 2.0, fx).item();
  const double expect = 2.0 * (l2(s - enc.encode_style(x, {1})).item() + l2(c - enc.encode_content(x)).item());
  CHECK(with_reg == doctest::Approx(expect).epsilon(1e-12));

  Tensor target = randu({1, 3, 8, 8}, rng, 0, 1);
  double sq = 0;
  for (std::size_t i = 0; i < target.numel(); ++i) sq += std::pow(target.data()[i] - x.data()[i], 2);
  const double pixel = latent_opt_loss(s, c, target, g, enc, {1}, 0.0, fx).item() -
                       perceptual_distance(target, x, fx).item();
  CHECK(pixel == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));

  CHECK(grad_check([&](const Tensor& v) { return latent_opt_loss(v, c, target, g, enc, {1}, 2.0, fx); }, s) < 1e-4);
  CHECK(grad_check([&](const Tensor& v) { return latent_opt_loss(s, v, target, g, enc, {0}, 2.0, fx); }, c) < 1e-4);
}

TEST_CASE("loss weight validation names the field") {
  LossWeights w;
  w.validate();
  w.gamma_r1 = -1;
  CHECK_THROWS_WITH_AS(w.validate(), doctest::Contains("gamma_r1"), ValidationError);
  w = {};
  w.lambda_ds = -0.1;
  CHECK_THROWS_WITH_AS(w.validate(), doctest::Contains("lambda_ds"), ValidationError);
}
