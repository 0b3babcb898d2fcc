#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "dgan/error.hpp"
#include "dgan/layers.hpp"
#include "helpers.hpp"

using namespace dgan;
using namespace dgan::layers;
using namespace dgan::test;

namespace {

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::from({n}, std::move(v));
}

DATParams random_dat(std::size_t h, std::size_t w, std::size_t dim_c, Rng& rng) {
  return DATParams{Tensor::scalar(0.0), randn({h * w, dim_c}, rng), randn({h * w}, rng), h, w};
}

// Column statistics of a [rows, cols] matrix (population std).
std::pair<Eigen::VectorXd, Eigen::VectorXd> column_stats(const Mat& m) {
  Eigen::VectorXd mu = m.colwise().mean();
  Eigen::VectorXd sd(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    sd[j] = std::sqrt((m.col(j).array() - mu[j]).square().mean());
  }
  return {mu, sd};
}

}  // namespace

TEST_CASE("adain examples") {
  Tensor x = Tensor::from({2, 1}, {1, 3});
  Tensor y = adain_forward(x, {vec({2}), vec({5}), 1e-8});
  CHECK(y.at({0, 0}) == doctest::Approx(3).epsilon(1e-7));
  CHECK(y.at({1, 0}) == doctest::Approx(7).epsilon(1e-7));

  Tensor standard = Tensor::from({4, 1}, {-1, 1, -1, 1});
  CHECK(max_abs_diff(adain_forward(standard, {vec({1}), vec({0}), 1e-8}), standard) < 1e-7);

  CHECK_THROWS_AS(adain_forward(x, {vec({1, 1}), vec({0, 0}), 1e-8}), DimensionError);
  CHECK_THROWS_AS(adain_forward(x, {vec({1}), vec({0}), 0.0}), ContractError);
}

TEST_CASE("adain output statistics equal bias and |scale| up to the stabilizer") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor x = randn({64, 8}, rng);
    Tensor s = randn({8}, rng), b = randn({8}, rng);
    auto [mu_in, sd_in] = column_stats(to_mat(x));
    auto [mu, sd] = column_stats(to_mat(adain_forward(x, {s, b, 1e-8})));
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::abs(mu[j] - b.at({j})) < 1e-9);
      // Population std is |scale| sigma / (sigma + eps).
      const double expect = std::abs(s.at({j})) * sd_in[j] / (sd_in[j] + 1e-8);
      CHECK(std::abs(sd[j] - expect) < 1e-12);
      CHECK(std::abs(sd[j] - std::abs(s.at({j}))) < 1e-7);
    }
  }
}

TEST_CASE("adain statistics hold for small-sigma inputs") {
  for (double sigma : {1e-3, 1e-2, 1e-1}) {
    Rng rng(21);
    Tensor x = randn({32, 4}, rng, sigma);
    Tensor s = randn({4}, rng), b = randn({4}, rng);
    auto [mu_in, sd_in] = column_stats(to_mat(x));
    auto [mu, sd] = column_stats(to_mat(adain_forward(x, {s, b, 1e-8})));
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(std::abs(mu[j] - b.at({j})) < 1e-6);
      const double expect = std::abs(s.at({j})) * sd_in[j] / (sd_in[j] + 1e-8);
      CHECK(std::abs(sd[j] - expect) < 1e-12);
    }
  }
}

TEST_CASE("adain batched and matrix layouts agree per instance") {
  Rng rng(4);
  Tensor x = randn({2, 3, 4, 5}, rng);
  Tensor s = randn({2, 3}, rng), b = randn({2, 3}, rng);
  Tensor y = adain_nchw(x, {s, b, 1e-8});
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> rows(20 * 3), sv(3), bv(3);
    for (std::size_t c = 0; c < 3; ++c) {
      sv[c] = s.at({n, c});
      bv[c] = b.at({n, c});
      for (std::size_t p = 0; p < 20; ++p) rows[p * 3 + c] = x.at({n, c, p / 5, p % 5});
    }
    Tensor ym = adain_forward(Tensor::from({20, 3}, rows), {vec(sv), vec(bv), 1e-8});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 20; ++p)
        CHECK(std::abs(ym.at({p, c}) - y.at({n, c, p / 5, p % 5})) < 1e-12);
  }
}

TEST_CASE("attention_map examples") {
  Rng rng(1);
  DATParams zero{Tensor::scalar(0), Tensor::zeros({6, 3}), Tensor::zeros({6}), 2, 3};
  auto d = attention_map(randn({3}, rng), zero);
  CHECK(d.d.shape() == Shape{2, 3});
  for (double v : d.d.data()) CHECK(v == 0.5);

  DATParams hot{Tensor::scalar(0), Tensor::zeros({6, 3}), Tensor::full({6}, 20.0), 2, 3};
  const Tensor saturated = attention_map(randn({3}, rng), hot).d;
  for (double v : saturated.data()) CHECK(v > 0.9999);

  DATParams p = random_dat(4, 4, 5, rng);
  Tensor c = randn({5}, rng);
  Eigen::VectorXd pre = to_mat(p.map_weight) * Eigen::Map<const Eigen::VectorXd>(c.data().data(), 5) +
                        Eigen::Map<const Eigen::VectorXd>(p.map_bias.data().data(), 16);
  Tensor dm = attention_map(c, p, 3).d;
  for (std::size_t i = 0; i < 16; ++i)
    CHECK(std::abs(dm.at({i / 4, i % 4}) - 1.0 / (1.0 + std::exp(-pre[i]))) < 1e-14);
  CHECK(attention_map(c, p, 3).source_layer == 3);

  CHECK_THROWS_AS(attention_map(randn({4}, rng), p), DimensionError);
  CHECK_THROWS_AS(attention_map(c, DATParams{Tensor::scalar(0), p.map_weight, p.map_bias, 3, 4}),
                  DimensionError);
}

TEST_CASE("attention_map is strictly inside the unit interval and differentiable") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    DATParams p = random_dat(3, 3, 4, rng);
    Tensor c = randn({4}, rng, 2.0);
    const Tensor dm = attention_map(c, p).d;
    for (double v : dm.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    Tensor probe = randn({3, 3}, rng);
    CHECK(grad_check([&](const Tensor& v) { return sum(attention_map(v, p).d * probe); }, c) <
          1e-5);
  }
}

TEST_CASE("dat examples") {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  DiffAttentionMap d{Tensor::from({1, 2}, {0.5, 1.0}), 0};
  CHECK(dat_forward(x, d, Tensor::scalar(1)).to_vector() == std::vector<double>{1.5, 3, 6, 8});
  CHECK(bitwise_equal(dat_forward(x, d, Tensor::scalar(0)), x));
  CHECK_THROWS_AS(dat_forward(x, DiffAttentionMap{Tensor::zeros({3, 1}), 0}, Tensor::scalar(1)),
                  DimensionError);
}

TEST_CASE("dat equals the dense (I + beta diag(d)) X product") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    Tensor x = randn({16, 8}, rng);
    Tensor dv = randu({4, 4}, rng, 0.0, 1.0);
    const double beta = rng.normal() * 2.0;
    Eigen::VectorXd dd = Eigen::Map<const Eigen::VectorXd>(dv.data().data(), 16);
    Mat a = Mat::Identity(16, 16);
    a.diagonal() += beta * dd;
    Mat ref = a * to_mat(x);
    Mat got = to_mat(dat_forward(x, {dv, 0}, Tensor::scalar(beta)));
    CHECK((ref - got).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(bitwise_equal(dat_forward(x, {dv, 0}, Tensor::scalar(0.0)), x));
  }
}

TEST_CASE("dat batched layout matches the matrix layout") {
  Rng rng(2);
  Tensor x = randn({2, 3, 2, 2}, rng);
  Tensor d = randu({2, 2, 2}, rng, 0.0, 1.0);
  Tensor y = dat_nchw(x, d, Tensor::scalar(0.7));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          CHECK(y.at({n, c, i, j}) ==
                doctest::Approx((1 + 0.7 * d.at({n, i, j})) * x.at({n, c, i, j})).epsilon(1e-14));
  CHECK_THROWS_AS(dat_nchw(x, Tensor::zeros({3, 3}), Tensor::scalar(1)), DimensionError);
}

TEST_CASE("combined transform equals the dense A X T + R") {
  Rng rng(3);
  Tensor x = randn({9, 4}, rng);
  Tensor dv = randu({3, 3}, rng, 0.0, 1.0);
  Tensor s = randn({4}, rng), b = randn({4}, rng);
  const double beta = 0.8;
  Mat a = Mat::Identity(9, 9);
  a.diagonal() += beta * Eigen::Map<const Eigen::VectorXd>(dv.data().data(), 9);
  Mat t = Mat::Zero(4, 4);
  t.diagonal() = Eigen::Map<const Eigen::VectorXd>(s.data().data(), 4);
  Mat r = Eigen::VectorXd::Ones(9) * Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), 4);
  Mat ref = a * to_mat(x) * t + r;
  Mat got = to_mat(combined_transform(x, {dv, 0}, Tensor::scalar(beta), {s, b, 1e-8}));
  CHECK((ref - got).cwiseAbs().maxCoeff() < 1e-12);

  Tensor same = combined_transform(x, {dv, 0}, Tensor::scalar(0), {Tensor::ones({4}), Tensor::zeros({4}), 1e-8});
  CHECK(max_abs_diff(same, x) == 0.0);
}

TEST_CASE("row and column diagonal scalings commute") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Tensor x = randn({12, 5}, rng);
    Tensor dv = randu({3, 4}, rng, 0.0, 1.0);
    Tensor s = randn({5}, rng);
    Tensor beta = Tensor::scalar(rng.normal());
    Tensor row_first = dat_forward(x, {dv, 0}, beta) * s;
    Tensor col_first = dat_forward(x * s, {dv, 0}, beta);
    CHECK(max_abs_diff(row_first, col_first) < 1e-12);
  }
}

TEST_CASE("mapping examples") {
  MappingNet id{{Linear{Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})}}};
  Tensor z = vec({0.3, -1.2});
  CHECK(mapping_forward(z, id).to_vector() == z.to_vector());

  MappingNet zero{{Linear{Tensor::zeros({3, 2}), Tensor::zeros({3})},
                   Linear{Tensor::zeros({2, 3}), vec({4, 5})}}};
  CHECK(mapping_forward(z, zero).to_vector() == std::vector<double>{4, 5});
  Rng rng(5);
  CHECK(mapping_forward(randn({7, 2}, rng), zero).at({6, 1}) == 5);

  MappingNet net = make_mapping_net({4, 6, 3}, rng);
  CHECK(net.input_width() == 4);
  CHECK(net.output_width() == 3);
  Tensor zz = randn({5, 4}, rng);
  Mat h = to_mat(zz) * to_mat(net.layers[0].weight).transpose();
  h.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(net.layers[0].bias.data().data(), 6);
  h = h.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; });
  Mat out = h * to_mat(net.layers[1].weight).transpose();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(net.layers[1].bias.data().data(), 3);
  CHECK((out - to_mat(mapping_forward(zz, net))).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(mapping_forward(randn({3}, rng), net), DimensionError);
  CHECK_THROWS_AS(make_mapping_net({4}, rng), ContractError);
}

TEST_CASE("noise examples") {
  Rng rng(6);
  Tensor x = randn({6, 3}, rng);
  CHECK(bitwise_equal(noise_inject(x, randn({6}, rng), Tensor::zeros({3})), x));
  CHECK(bitwise_equal(noise_inject(x, Tensor::zeros({6}), randn({3}, rng)), x));
  CHECK_THROWS_AS(noise_inject(x, Tensor::zeros({5}), Tensor::zeros({3})), DimensionError);

  Tensor delta = noise_inject(x, randn({6}, rng), randn({3}, rng)) - x;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_mat(delta));
  auto sv = svd.singularValues();
  CHECK(sv[0] > 1e-3);
  CHECK(sv[1] < 1e-12 * sv[0]);
}

TEST_CASE("noise is additive while dat is multiplicative") {
  Rng rng(7);
  Tensor x = randn({8, 3}, rng);
  Tensor dv = randu({2, 4}, rng, 0.0, 1.0);
  Tensor noise = randn({8}, rng), s = randn({3}, rng);
  const double k = 3.0;
  Tensor beta = Tensor::scalar(0.9);
  Tensor dat_delta = dat_forward(x, {dv, 0}, beta) - x;
  Tensor dat_delta_k = dat_forward(x * k, {dv, 0}, beta) - x * k;
  CHECK(max_abs_diff(dat_delta_k, dat_delta * k) < 1e-12);
  Tensor noise_delta = noise_inject(x, noise, s) - x;
  Tensor noise_delta_k = noise_inject(x * k, noise, s) - x * k;
  CHECK(max_abs_diff(noise_delta_k, noise_delta) < 1e-12);
}

TEST_CASE("layer gradients pass finite-difference checks") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    Tensor x = randn({6, 3}, rng);
    Tensor s = randn({3}, rng), b = randn({3}, rng);
    Tensor probe = randn({6, 3}, rng);
    Tensor dv = randu({2, 3}, rng, 0.05, 0.95);
    CHECK(grad_check([&](const Tensor& v) { return sum(adain_forward(v, {s, b, 1e-8}) * probe); }, x) < 1e-5);
    CHECK(grad_check([&](const Tensor& v) { return sum(adain_forward(x, {v, b, 1e-8}) * probe); }, s) < 1e-5);
    CHECK(grad_check([&](const Tensor& v) { return sum(adain_forward(x, {s, v, 1e-8}) * probe); }, b) < 1e-5);
    CHECK(grad_check([&](const Tensor& v) { return sum(dat_forward(v, {dv, 0}, Tensor::scalar(0.4)) * probe); }, x) < 1e-5);
    CHECK(grad_check([&](const Tensor& v) { return sum(dat_forward(x, {v, 0}, Tensor::scalar(0.4)) * probe); }, dv) < 1e-5);
    CHECK(grad_check([&](const Tensor& v) { return sum(dat_forward(x, {dv, 0}, v) * probe); }, Tensor::scalar(0.3)) < 1e-5);
    Tensor noise = randn({6}, rng);
    CHECK(grad_check([&](const Tensor& v) { return sum(noise_inject(x, noise, v) * probe); }, s) < 1e-5);
    MappingNet net = make_mapping_net({3, 4, 2}, rng, false);
    Tensor z = randn({2, 3}, rng);
    CHECK(grad_check([&](const Tensor& v) { return sum(square(mapping_forward(v, net))); }, z) < 1e-5);
    CHECK(grad_check(
              [&](const Tensor& v) {
                MappingNet m = net;
                m.layers[0].weight = v;
                return sum(square(mapping_forward(z, m)));
              },
              net.layers[0].weight) < 1e-5);
    DATParams p = random_dat(2, 3, 4, rng);
    Tensor c = randn({4}, rng);
    CHECK(grad_check(
              [&](const Tensor& v) {
                DATParams q = p;
                q.map_weight = v;
                return sum(dat_forward(x, attention_map(c, q), Tensor::scalar(0.6)) * probe);
              },
              p.map_weight) < 1e-5);
  }
}
