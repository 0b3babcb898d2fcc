#pragma once

// Disentanglement and quality metrics: perceptual path length over the joint,
// style and content code spaces, a Frechet distance between Gaussian feature
// summaries, and pairwise diversity scores.
//
// The perceptual distance is pluggable. The default extractor is a frozen
// random conv stack drawn from a fixed seed; `FeatureExtractor::identity()`
// flattens pixels, which makes several metrics analytically tractable.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dgan/networks.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

class FeatureExtractor {
 public:
  static FeatureExtractor identity();
  /// Three 3x3 conv layers (two of them stride 2) with leaky-ReLU, weights
  /// drawn once from `seed` and never trained.
  static FeatureExtractor random_conv(std::uint64_t seed = 0x5eed);

  /// [N,...] -> [N,F]. Differentiable w.r.t. the images.
  Tensor features(const Tensor& images) const;
  bool is_identity() const { return identity_; }
  std::uint64_t seed() const { return seed_; }

 private:
  bool identity_ = true;
  std::uint64_t seed_ = 0;
  std::vector<Tensor> kernels_;
};

/// Per-sample squared feature distance [N]. Single images ([C,H,W]) are
/// treated as a batch of one.
Tensor perceptual_distances(const Tensor& x, const Tensor& y, const FeatureExtractor& fx);
/// Mean of perceptual_distances.
Tensor perceptual_distance(const Tensor& x, const Tensor& y, const FeatureExtractor& fx);

/// What the metrics need from a generator: code samplers in the mapped spaces
/// and a renderer. Implementations must be deterministic.
class CodeGenerator {
 public:
  virtual ~CodeGenerator() = default;
  virtual std::size_t style_dim() const = 0;
  virtual std::size_t content_dim() const = 0;
  virtual Tensor sample_style(Rng& rng, std::size_t n) const = 0;
  virtual Tensor sample_content(Rng& rng, std::size_t n) const = 0;
  virtual Tensor synthesize(const Tensor& s, const Tensor& c) const = 0;
};

/// Adapter over a trained model; codes are mapped from Gaussian z.
class ModelCodeGenerator final : public CodeGenerator {
 public:
  explicit ModelCodeGenerator(const GeneratorModel& model, std::size_t domain = 0)
      : model_(model), domain_(domain) {}
  std::size_t style_dim() const override { return model_.spec().dim_s; }
  std::size_t content_dim() const override { return model_.spec().dim_c; }
  Tensor sample_style(Rng& rng, std::size_t n) const override;
  Tensor sample_content(Rng& rng, std::size_t n) const override;
  Tensor synthesize(const Tensor& s, const Tensor& c) const override;

 private:
  const GeneratorModel& model_;
  std::size_t domain_;
};

enum class PPLMode { W, Ws, Wc };
std::string to_string(PPLMode mode);
PPLMode parse_ppl_mode(const std::string& text);

inline constexpr double kDefaultPPLEpsilon = 1e-4;

struct PPLConfig {
  PPLMode mode = PPLMode::W;
  double eps = kDefaultPPLEpsilon;
  /// Samples for the joint mode.
  std::size_t n_samples = 1000;
  /// Fixed-code modes: `outer` fixed codes, `inner` draws of the varying code each.
  std::size_t inner = 10;
  std::size_t outer = 100;
  std::size_t batch = 50;

  void validate() const;
  std::size_t total_samples() const { return mode == PPLMode::W ? n_samples : inner * outer; }
};

/// (1/eps^2) E[d(G(lerp(t)), G(lerp(t+eps)))], t ~ U[0, 1-eps].
double ppl(const CodeGenerator& gen, const PPLConfig& config, std::uint64_t seed,
           const FeatureExtractor& fx);

struct GaussianStats {
  std::vector<double> mu;
  std::vector<double> sigma;  // row-major dim x dim
  std::size_t n = 0;

  std::size_t dim() const { return mu.size(); }
};

/// Sample mean and unbiased covariance of feature rows [N,F], N >= 2.
GaussianStats feature_stats_from_features(const Tensor& features);
GaussianStats feature_stats(const Tensor& images, const FeatureExtractor& fx);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

enum class DiversityMode { Both, StyleOnly, ContentOnly };
std::string to_string(DiversityMode mode);

enum class Pairing { AllPairs, Consecutive };

struct DiversityCounts {
  std::size_t groups = 25;
  std::size_t per_group = 8;
  Pairing pairing = Pairing::AllPairs;
};

/// Mean pairwise perceptual distance within groups of samples. StyleOnly fixes
/// the content code per group, ContentOnly fixes the style code, Both varies
/// everything.
double diversity_score(const CodeGenerator& gen, DiversityMode mode,
                       const DiversityCounts& counts, std::uint64_t seed,
                       const FeatureExtractor& fx);

/// One CSV row of a metric report: metric,mode,value,n_samples,seed.
struct MetricRow {
  std::string metric;
  std::string mode;
  double value = 0.0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

std::string metric_csv_header();
std::string to_csv(const MetricRow& row);
/// Appends rows, writing the header first when the file is new or empty.
void append_metric_rows(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace dgan
