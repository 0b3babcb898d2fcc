#include "dgan/metrics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dgan/error.hpp"
#include "dgan/layers.hpp"

namespace dgan {

namespace {

Tensor as_image_batch(const Tensor& x) {
  if (x.rank() == 3) return reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)});
  return x;
}

Tensor lerp_rows(const Tensor& from, const Tensor& to, const std::vector<double>& t) {
  // from + t_i (to - from), row by row
  const std::size_t n = from.dim(0), d = from.numel() / n;
  auto a = from.data(), b = to.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = a[i * d + j] + t[i] * (b[i * d + j] - a[i * d + j]);
    }
  }
  return Tensor::from(from.shape(), std::move(out));
}

Tensor repeat_row(const Tensor& row, std::size_t n) {
  return expand(reshape(row, {1, row.numel()}), {n, row.numel()});
}

}  // namespace

// ---- features -----------------------------------------------------------------

FeatureExtractor FeatureExtractor::identity() { return FeatureExtractor{}; }

FeatureExtractor FeatureExtractor::random_conv(std::uint64_t seed) {
  FeatureExtractor fx;
  fx.identity_ = false;
  fx.seed_ = seed;
  Rng rng(derive_seed(seed, "feature_extractor"));
  const std::size_t widths[] = {3, 16, 16, 32};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t in = widths[i], out = widths[i + 1];
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * 9));
    fx.kernels_.push_back(Tensor::from({out, in, 3, 3}, rng.normal_vector(out * in * 9, stddev)));
  }
  return fx;
}

Tensor FeatureExtractor::features(const Tensor& images) const {
  if (identity_) {
    const std::size_t n = images.rank() <= 1 ? 1 : images.dim(0);
    return reshape(images, {n, images.numel() / n});
  }
  Tensor x = as_image_batch(images);
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw DimensionError("feature extractor expects RGB images, got " + shape_str(images.shape()));
  }
  const std::size_t strides[] = {1, 2, 2};
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    if (x.dim(2) < 3 && strides[i] == 2) break;
    x = leaky_relu(conv2d(x, kernels_[i], strides[i], 1), layers::kLeakySlope);
  }
  // Scale so the distance is a per-feature average rather than a raw sum.
  const std::size_t n = x.dim(0), f = x.numel() / n;
  return scale(reshape(x, {n, f}), 1.0 / std::sqrt(static_cast<double>(f)));
}

Tensor perceptual_distances(const Tensor& x, const Tensor& y, const FeatureExtractor& fx) {
  if (x.shape() != y.shape()) {
    throw DimensionError("perceptual_distance: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
  }
  Tensor fa = fx.features(x), fb = fx.features(y);
  return sum_trailing(square(fa - fb), 1);
}

Tensor perceptual_distance(const Tensor& x, const Tensor& y, const FeatureExtractor& fx) {
  return mean(perceptual_distances(x, y, fx));
}

// ---- generator adapter ----------------------------------------------------------

Tensor ModelCodeGenerator::sample_style(Rng& rng, std::size_t n) const {
  NoGradGuard no_grad;
  return model_.style_codes(model_.sample_z_style(rng, n), domain_);
}

Tensor ModelCodeGenerator::sample_content(Rng& rng, std::size_t n) const {
  NoGradGuard no_grad;
  return model_.content_codes(model_.sample_z_content(rng, n));
}

Tensor ModelCodeGenerator::synthesize(const Tensor& s, const Tensor& c) const {
  NoGradGuard no_grad;
  return model_.render(s, c);
}

// ---- PPL ------------------------------------------------------------------------

std::string to_string(PPLMode mode) {
  switch (mode) {
    case PPLMode::W: return "W";
    case PPLMode::Ws: return "Ws";
    case PPLMode::Wc: return "Wc";
  }
  return "?";
}

PPLMode parse_ppl_mode(const std::string& text) {
  if (text == "W" || text == "w") return PPLMode::W;
  if (text == "Ws" || text == "ws") return PPLMode::Ws;
  if (text == "Wc" || text == "wc") return PPLMode::Wc;
  throw ValidationError("ppl mode: expected W, Ws or Wc, got '" + text + "'");
}

void PPLConfig::validate() const {
  if (!(eps > 0)) throw ValidationError("ppl_eps: must be positive");
  if (eps >= 1) throw ValidationError("ppl_eps: must be below 1");
  if (n_samples == 0 || inner == 0 || outer == 0 || batch == 0) {
    throw ValidationError("ppl counts: must be positive");
  }
}

double ppl(const CodeGenerator& gen, const PPLConfig& config, std::uint64_t seed,
           const FeatureExtractor& fx) {
  config.validate();
  NoGradGuard no_grad;
  Rng root(derive_seed(seed, "ppl:" + to_string(config.mode)));
  const double inv_eps2 = 1.0 / (config.eps * config.eps);

  // Every evaluation unit: a fixed code (for Ws/Wc) and a number of draws of
  // the varying code(s). The joint mode uses one unit of n_samples draws.
  const bool joint = config.mode == PPLMode::W;
  const std::size_t units = joint ? 1 : config.outer;
  const std::size_t per_unit = joint ? config.n_samples : config.inner;

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t u = 0; u < units; ++u) {
    Rng unit_rng = root.child("unit", u);
    Tensor fixed_s, fixed_c;
    if (config.mode == PPLMode::Ws) fixed_c = gen.sample_content(unit_rng, 1);
    if (config.mode == PPLMode::Wc) fixed_s = gen.sample_style(unit_rng, 1);
    for (std::size_t start = 0; start < per_unit; start += config.batch) {
      const std::size_t n = std::min(config.batch, per_unit - start);
      Rng rng = unit_rng.child("batch", start);
      std::vector<double> t(n), t_eps(n);
      for (std::size_t i = 0; i < n; ++i) {
        t[i] = rng.uniform(0.0, 1.0 - config.eps);
        t_eps[i] = t[i] + config.eps;
      }
      Tensor sa, sb, ca, cb;
      if (config.mode != PPLMode::Wc) {
        Tensor s1 = gen.sample_style(rng, n), s2 = gen.sample_style(rng, n);
        // t s1 + (1-t) s2
        sa = lerp_rows(s2, s1, t);
        sb = lerp_rows(s2, s1, t_eps);
      } else {
        sa = sb = repeat_row(fixed_s, n);
      }
      if (config.mode != PPLMode::Ws) {
        Tensor c1 = gen.sample_content(rng, n), c2 = gen.sample_content(rng, n);
        ca = lerp_rows(c2, c1, t);
        cb = lerp_rows(c2, c1, t_eps);
      } else {
        ca = cb = repeat_row(fixed_c, n);
      }
      Tensor d = perceptual_distances(gen.synthesize(sa, ca), gen.synthesize(sb, cb), fx);
      for (double v : d.data()) total += v * inv_eps2;
      count += n;
    }
  }
  const double value = total / static_cast<double>(count);
  if (!std::isfinite(value)) throw NumericError("ppl: non-finite estimate");
  return value;
}

// ---- Frechet distance -------------------------------------------------------------

GaussianStats feature_stats_from_features(const Tensor& features) {
  if (features.rank() != 2) {
    throw DimensionError("feature_stats: expected [N,F] features, got " +
                         shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  if (n < 2) throw ContractError("feature_stats: need at least 2 samples, got " + std::to_string(n));
  // Welford's streaming update of mean and co-moment.
  GaussianStats st;
  st.n = n;
  st.mu.assign(d, 0.0);
  std::vector<double> comoment(d * d, 0.0), delta(d);
  auto x = features.data();
  for (std::size_t k = 0; k < n; ++k) {
    const double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < d; ++i) {
      delta[i] = x[k * d + i] - st.mu[i];
      st.mu[i] += delta[i] * inv;
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double after_i = x[k * d + i] - st.mu[i];
      for (std::size_t j = 0; j < d; ++j) comoment[i * d + j] += after_i * delta[j];
    }
  }
  st.sigma.resize(d * d);
  const double denom = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      // symmetrise away rounding asymmetry
      st.sigma[i * d + j] = 0.5 * (comoment[i * d + j] + comoment[j * d + i]) * denom;
    }
  }
  return st;
}

GaussianStats feature_stats(const Tensor& images, const FeatureExtractor& fx) {
  NoGradGuard no_grad;
  return feature_stats_from_features(fx.features(images));
}

namespace {

constexpr double kEigenClip = -1e-8;

Eigen::MatrixXd as_matrix(const GaussianStats& s) {
  const auto d = static_cast<Eigen::Index>(s.dim());
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = s.sigma[static_cast<std::size_t>(i * d + j)];
  }
  return m;
}

Eigen::VectorXd clipped_eigenvalues(const Eigen::VectorXd& values, const char* what) {
  Eigen::VectorXd out = values;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    if (out(i) < kEigenClip) {
      throw NumericError(std::string("frechet_distance: ") + what +
                         " has eigenvalue " + std::to_string(out(i)) + " below tolerance");
    }
    out(i) = std::max(out(i), 0.0);
  }
  return out;
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim() || a.sigma.size() != a.dim() * a.dim() ||
      b.sigma.size() != b.dim() * b.dim()) {
    throw DimensionError("frechet_distance: dimension mismatch " + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()));
  }
  const Eigen::MatrixXd sa = as_matrix(a), sb = as_matrix(b);
  if ((sa - sa.transpose()).cwiseAbs().maxCoeff() > 1e-10 ||
      (sb - sb.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw NumericError("frechet_distance: covariance is not symmetric");
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double diff = a.mu[i] - b.mu[i];
    mean_term += diff * diff;
  }
  // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}); the inner
  // product is symmetric PSD, so both roots come from eigendecompositions.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(sa);
  if (eig_a.info() != Eigen::Success) throw NumericError("frechet_distance: eigensolver failed");
  const Eigen::VectorXd root_vals = clipped_eigenvalues(eig_a.eigenvalues(), "sigma_a").cwiseSqrt();
  const Eigen::MatrixXd root_a =
      eig_a.eigenvectors() * root_vals.asDiagonal() * eig_a.eigenvectors().transpose();
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_m(inner, Eigen::EigenvaluesOnly);
  if (eig_m.info() != Eigen::Success) throw NumericError("frechet_distance: eigensolver failed");
  const double trace_root = clipped_eigenvalues(eig_m.eigenvalues(), "product").cwiseSqrt().sum();
  const double value = mean_term + sa.trace() + sb.trace() - 2.0 * trace_root;
  if (!std::isfinite(value)) throw NumericError("frechet_distance: non-finite result");
  return value;
}

// ---- diversity ----------------------------------------------------------------------

std::string to_string(DiversityMode mode) {
  switch (mode) {
    case DiversityMode::Both: return "both";
    case DiversityMode::StyleOnly: return "style_only";
    case DiversityMode::ContentOnly: return "content_only";
  }
  return "?";
}

double diversity_score(const CodeGenerator& gen, DiversityMode mode,
                       const DiversityCounts& counts, std::uint64_t seed,
                       const FeatureExtractor& fx) {
  if (counts.groups == 0 || counts.per_group < 2) {
    throw ContractError("diversity_score: need at least one group of two images");
  }
  NoGradGuard no_grad;
  Rng root(derive_seed(seed, "diversity:" + to_string(mode)));
  const std::size_t m = counts.per_group;
  double total = 0.0;
  for (std::size_t g = 0; g < counts.groups; ++g) {
    Rng rng = root.child("group", g);
    Tensor s = mode == DiversityMode::ContentOnly ? repeat_row(gen.sample_style(rng, 1), m)
                                                  : gen.sample_style(rng, m);
    Tensor c = mode == DiversityMode::StyleOnly ? repeat_row(gen.sample_content(rng, 1), m)
                                                : gen.sample_content(rng, m);
    Tensor feats = fx.features(gen.synthesize(s, c));
    const std::size_t f = feats.dim(1);
    auto v = feats.data();
    auto dist = [&](std::size_t i, std::size_t j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < f; ++k) {
        const double diff = v[i * f + k] - v[j * f + k];
        acc += diff * diff;
      }
      return acc;
    };
    double group_sum = 0.0;
    std::size_t pairs = 0;
    if (counts.pairing == Pairing::AllPairs) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j, ++pairs) group_sum += dist(i, j);
      }
    } else {
      for (std::size_t i = 0; i + 1 < m; i += 2, ++pairs) group_sum += dist(i, i + 1);
    }
    total += group_sum / static_cast<double>(pairs);
  }
  return total / static_cast<double>(counts.groups);
}

// ---- CSV ----------------------------------------------------------------------------

std::string metric_csv_header() { return "metric,mode,value,n_samples,seed"; }

std::string to_csv(const MetricRow& row) {
  std::ostringstream os;
  os << row.metric << ',' << row.mode << ',' << std::setprecision(17) << row.value << ','
     << row.n_samples << ',' << row.seed;
  return os.str();
}

void append_metric_rows(const std::string& path, const std::vector<MetricRow>& rows) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const bool fresh = !fs::exists(path, ec) || fs::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open '" + path + "' for appending");
  if (fresh) out << metric_csv_header() << '\n';
  for (const auto& row : rows) out << to_csv(row) << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace dgan
