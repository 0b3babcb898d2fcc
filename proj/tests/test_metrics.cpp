#include <doctest.h>

#include <cmath>

#include "dgan/error.hpp"
#include "dgan/metrics.hpp"
#include "helpers.hpp"

using namespace dgan;
using namespace dgan::test;

namespace {

// G(s, c) = k s, or a constant when `constant` is set.
class LinearGenerator final : public CodeGenerator {
 public:
  explicit LinearGenerator(double k = 1.0, bool constant = false) : k_(k), constant_(constant) {}
  std::size_t style_dim() const override { return 8; }
  std::size_t content_dim() const override { return 4; }
  Tensor sample_style(Rng& rng, std::size_t n) const override {
    return Tensor::from({n, 8}, rng.normal_vector(n * 8));
  }
  Tensor sample_content(Rng& rng, std::size_t n) const override {
    return Tensor::from({n, 4}, rng.normal_vector(n * 4));
  }
  Tensor synthesize(const Tensor& s, const Tensor& c) const override {
    if (constant_) return Tensor::full({s.dim(0), 3, 4, 4}, 0.25);
    (void)c;
    return s * k_;
  }

 private:
  double k_;
  bool constant_;
};

// Wraps a generator and swaps the order of each pair of style draws.
class SwappedStyles final : public CodeGenerator {
 public:
  explicit SwappedStyles(const CodeGenerator& inner) : inner_(inner) {}
  std::size_t style_dim() const override { return inner_.style_dim(); }
  std::size_t content_dim() const override { return inner_.content_dim(); }
  Tensor sample_style(Rng& rng, std::size_t n) const override {
    if (pending_.defined()) {
      Tensor out = pending_;
      pending_ = Tensor{};
      return out;
    }
    Tensor first = inner_.sample_style(rng, n);
    pending_ = first;
    return inner_.sample_style(rng, n);
  }
  Tensor sample_content(Rng& rng, std::size_t n) const override {
    return inner_.sample_content(rng, n);
  }
  Tensor synthesize(const Tensor& s, const Tensor& c) const override {
    return inner_.synthesize(s, c);
  }

 private:
  const CodeGenerator& inner_;
  mutable Tensor pending_;
};

GaussianStats stats_1d(double mu, double var) { return {{mu}, {var}, 10}; }

PPLConfig ppl_config(PPLMode mode) {
  PPLConfig c;
  c.mode = mode;
  c.n_samples = 2000;
  c.inner = 10;
  c.outer = 200;
  return c;
}

}  // namespace

TEST_CASE("perceptual distance examples") {
  Rng rng(1);
  auto fx = FeatureExtractor::random_conv();
  for (int i = 0; i < 10; ++i) {
    Tensor x = randu({2, 3, 8, 8}, rng, 0, 1), y = randu({2, 3, 8, 8}, rng, 0, 1);
    CHECK(perceptual_distance(x, x, fx).item() == 0.0);
    const double dxy = perceptual_distance(x, y, fx).item();
    CHECK(dxy > 0.0);
    CHECK(dxy == perceptual_distance(y, x, fx).item());
  }
  Tensor x = randu({3, 3, 4, 4}, rng, 0, 1), y = randu({3, 3, 4, 4}, rng, 0, 1);
  Tensor per = perceptual_distances(x, y, FeatureExtractor::identity());
  for (std::size_t n = 0; n < 3; ++n) {
    double acc = 0;
    for (std::size_t i = 0; i < 48; ++i) {
      const double d = x.data()[n * 48 + i] - y.data()[n * 48 + i];
      acc += d * d;
    }
    CHECK(per.at({n}) == doctest::Approx(acc).epsilon(1e-14));
  }
  CHECK_THROWS_AS(perceptual_distance(x, randu({3, 3, 4, 2}, rng, 0, 1), fx), DimensionError);
}

TEST_CASE("feature extractor is frozen and seeded") {
  Rng rng(2);
  Tensor x = randu({2, 3, 16, 16}, rng, 0, 1);
  CHECK(bitwise_equal(FeatureExtractor::random_conv(3).features(x),
                      FeatureExtractor::random_conv(3).features(x)));
  CHECK(max_abs_diff(FeatureExtractor::random_conv(3).features(x),
                     FeatureExtractor::random_conv(4).features(x)) > 0);
}

TEST_CASE("ppl of a constant generator is zero") {
  LinearGenerator g(1.0, true);
  for (PPLMode m : {PPLMode::W, PPLMode::Ws, PPLMode::Wc}) {
    PPLConfig c = ppl_config(m);
    c.n_samples = 100;
    c.outer = 10;
    CHECK(ppl(g, c, 1, FeatureExtractor::random_conv()) == 0.0);
  }
}

TEST_CASE("ppl of a linear generator matches 2k") {
  // Independent Monte Carlo of E||s1 - s2||^2 for comparison.
  Rng rng(99);
  double acc = 0;
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) {
    auto a = rng.normal_vector(8), b = rng.normal_vector(8);
    for (int j = 0; j < 8; ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  }
  const double reference = acc / draws;
  CHECK(std::abs(reference - 16.0) < 0.3);

  LinearGenerator g;
  const double value = ppl(g, ppl_config(PPLMode::Ws), 7, FeatureExtractor::identity());
  // Std error with 2000 samples is about 8 / sqrt(2000) = 0.18.
  CHECK(std::abs(value - 16.0) < 0.9);
  CHECK(std::abs(value - reference) < 1.0);
  CHECK(ppl(g, ppl_config(PPLMode::Wc), 7, FeatureExtractor::identity()) == 0.0);
  CHECK(PPLConfig{}.eps == 1e-4);
}

TEST_CASE("ppl scales with the square of the output scale") {
  LinearGenerator g1(1.0), g3(3.0);
  for (PPLMode m : {PPLMode::W, PPLMode::Ws}) {
    const double a = ppl(g1, ppl_config(m), 5, FeatureExtractor::identity());
    const double b = ppl(g3, ppl_config(m), 5, FeatureExtractor::identity());
    CHECK(b == doctest::Approx(9.0 * a).epsilon(1e-6));
  }
}

TEST_CASE("ppl is invariant to swapping the interpolation endpoints") {
  GeneratorSpec spec = mini_spec();
  Rng rng(3);
  GeneratorModel model(spec, as_leaves(with_beta(spec, init_generator(spec, rng), 0.5), false));
  ModelCodeGenerator g(model);
  SwappedStyles swapped(g);
  PPLConfig c = ppl_config(PPLMode::Ws);
  c.inner = 5;
  c.outer = 40;
  auto fx = FeatureExtractor::random_conv();
  const double a = ppl(g, c, 11, fx);
  const double b = ppl(swapped, c, 11, fx);
  CHECK(a > 0);
  CHECK(std::abs(a - b) < 0.15 * a);
}

TEST_CASE("ppl is deterministic and validates its config") {
  LinearGenerator g;
  PPLConfig c = ppl_config(PPLMode::W);
  c.n_samples = 50;
  CHECK(ppl(g, c, 3, FeatureExtractor::identity()) == ppl(g, c, 3, FeatureExtractor::identity()));
  c.eps = 0;
  CHECK_THROWS(ppl(g, c, 3, FeatureExtractor::identity()));
  CHECK(parse_ppl_mode("ws") == PPLMode::Ws);
  CHECK(to_string(PPLMode::Wc) == "Wc");
  CHECK_THROWS_AS(parse_ppl_mode("wz"), ValidationError);
}

TEST_CASE("feature statistics examples") {
  GaussianStats s = feature_stats_from_features(Tensor::from({2, 2}, {0, 0, 2, 0}));
  CHECK(s.mu == std::vector<double>{1, 0});
  CHECK(s.sigma == std::vector<double>{2, 0, 0, 0});
  CHECK(s.n == 2);

  Rng rng(4);
  Tensor img = randu({1, 3, 8, 8}, rng, 0, 1);
  Tensor twice = Tensor::from({2, 3, 8, 8}, [&] {
    auto v = img.to_vector();
    v.insert(v.end(), v.begin(), v.end());
    return v;
  }());
  for (double v : feature_stats(twice, FeatureExtractor::random_conv()).sigma) CHECK(v == 0.0);
  CHECK_THROWS_AS(feature_stats(img, FeatureExtractor::random_conv()), ContractError);
}

TEST_CASE("streaming statistics match a two-pass computation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor f = randn({40, 5}, rng, 3.0) + 100.0;
    GaussianStats s = feature_stats_from_features(f);
    Mat m = to_mat(f);
    Eigen::RowVectorXd mu = m.colwise().mean();
    Mat centered = m.rowwise() - mu;
    Mat cov = centered.transpose() * centered / 39.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(std::abs(s.mu[i] - mu[i]) < 1e-10);
      for (int j = 0; j < 5; ++j) {
        CHECK(std::abs(s.sigma[i * 5 + j] - cov(i, j)) < 1e-10);
        CHECK(s.sigma[i * 5 + j] == s.sigma[j * 5 + i]);
      }
    }
  }
}

TEST_CASE("frechet distance examples") {
  CHECK(frechet_distance(stats_1d(0, 1), stats_1d(1, 4)) == doctest::Approx(2.0).epsilon(1e-12));
  GaussianStats a{{0, 1, 2}, {1, 0, 0, 0, 4, 0, 0, 0, 9}, 10};
  GaussianStats b{{1, 1, 0}, {4, 0, 0, 0, 1, 0, 0, 0, 0.25}, 10};
  // Per-dimension (mu diff)^2 + (sigma diff)^2.
  const double expect = (1 + 1) + (0 + 1) + (4 + 6.25);
  CHECK(frechet_distance(a, b) == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(frechet_distance(a, stats_1d(0, 1)), DimensionError);
  GaussianStats bad{{0, 0}, {1, 0, 0, -1}, 10};
  CHECK_THROWS_AS(frechet_distance(bad, bad), NumericError);
}

TEST_CASE("frechet distance is zero on itself and symmetric") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    GaussianStats a = feature_stats_from_features(randn({30, 6}, rng));
    GaussianStats b = feature_stats_from_features(randn({30, 6}, rng, 2.0) + 0.5);
    CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);
    CHECK(frechet_distance(a, b) > 0);
  }
}

TEST_CASE("diversity examples") {
  LinearGenerator constant(1.0, true);
  DiversityCounts counts{5, 4, Pairing::AllPairs};
  auto fx = FeatureExtractor::random_conv();
  for (auto m : {DiversityMode::Both, DiversityMode::StyleOnly, DiversityMode::ContentOnly}) {
    CHECK(diversity_score(constant, m, counts, 1, fx) == 0.0);
  }

  GeneratorSpec spec = mini_spec();
  Rng rng(5);
  GeneratorModel zero(spec, as_leaves(with_beta(spec, init_generator(spec, rng), 0.0), false));
  ModelCodeGenerator g0(zero);
  CHECK(diversity_score(g0, DiversityMode::ContentOnly, counts, 2, fx) == 0.0);
  CHECK(diversity_score(g0, DiversityMode::StyleOnly, counts, 2, fx) > 0.0);

  GeneratorModel one(spec, with_beta(spec, zero.params(), 1.0));
  ModelCodeGenerator g1(one);
  CHECK(diversity_score(g1, DiversityMode::ContentOnly, counts, 2, fx) > 0.0);
  CHECK(diversity_score(g1, DiversityMode::Both, counts, 2, fx) ==
        diversity_score(g1, DiversityMode::Both, counts, 2, fx));

  // Linear generator, identity features: all-pairs distance averages E||s_i - s_j||^2 = 16.
  LinearGenerator lin;
  DiversityCounts many{400, 6, Pairing::AllPairs};
  CHECK(std::abs(diversity_score(lin, DiversityMode::StyleOnly, many, 3, FeatureExtractor::identity()) - 16) < 1.0);
  many.pairing = Pairing::Consecutive;
  CHECK(std::abs(diversity_score(lin, DiversityMode::StyleOnly, many, 3, FeatureExtractor::identity()) - 16) < 1.2);
  CHECK_THROWS_AS(diversity_score(lin, DiversityMode::Both, {1, 1}, 3, fx), ContractError);
}

TEST_CASE("metric CSV rows") {
  TempDir dir("metrics");
  const std::string path = dir.file("m.csv");
  append_metric_rows(path, {{"ppl", "w", 1.5, 100, 7}});
  append_metric_rows(path, {{"fid", "-", 0.25, 50, 7}});
  CHECK(read_text(path) == "metric,mode,value,n_samples,seed\nppl,w,1.5,100,7\nfid,-,0.25,50,7\n");
  CHECK_THROWS_AS(append_metric_rows(dir.file("no/such/dir.csv"), {}), IoError);
}
