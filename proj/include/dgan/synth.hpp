#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dgan/tensor.hpp"

namespace dgan {

/// Filled, anti-aliased ellipses on solid backgrounds. Position, rotation and
/// aspect are content factors; foreground/background hue and the domain label
/// are style factors. Each domain owns a disjoint foreground hue band.
struct SynthSpec {
  std::size_t resolution = 32;
  std::size_t n_images = 2000;
  std::size_t num_domains = 2;
  double center_min = 0.25;
  double center_max = 0.75;
  double ratio_min = 0.5;
  double ratio_max = 1.0;
  /// Semi-major axis as a fraction of the image side.
  double major_fraction = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthFactors {
  double center_x = 0;  // fraction of width
  double center_y = 0;  // fraction of height
  double theta = 0;     // [0, pi)
  double ratio = 1;     // minor / major
  double fg_hue = 0;    // [0,1)
  double bg_hue = 0;
  std::size_t domain = 0;
};

struct SynthDataset {
  Tensor images;  // [N,3,R,R] in [0,1]
  std::vector<SynthFactors> factors;

  std::vector<std::size_t> labels() const;
  /// Rows [first, first+count) as a batch.
  Tensor batch(const std::vector<std::size_t>& indices) const;
};

/// Foreground hue interval [lo, hi) of a domain.
std::pair<double, double> domain_hue_band(std::size_t domain, std::size_t num_domains);

SynthDataset synth_dataset(const SynthSpec& spec);
/// Renders a single image [3,R,R] plus its coverage mask [R*R].
Tensor render_ellipse(const SynthFactors& f, std::size_t resolution,
                      double major_fraction, std::vector<double>* coverage = nullptr);

/// HSV (all in [0,1]) to RGB and back.
void hsv_to_rgb(double h, double s, double v, double rgb[3]);
void rgb_to_hsv(const double rgb[3], double& h, double& s, double& v);

/// Foreground estimate of a rendered or generated image [3,R,R]. The
/// background colour is the per-channel median of the border pixels; pixels
/// at least half as far from it as the farthest pixel form the foreground.
struct EllipseMeasurement {
  double centroid_x = 0;  // pixels, pixel centres at j + 0.5
  double centroid_y = 0;
  double fg_hue = 0;
  double contrast = 0;  // largest RGB distance from the background
};

EllipseMeasurement measure_ellipse(const Tensor& image);
/// Distance on the hue circle, in [0, 0.5].
double hue_distance(double a, double b);

/// Writes factors as CSV: index,center_x,center_y,theta,ratio,fg_hue,bg_hue,domain.
void write_factor_table(const std::string& path, const std::vector<SynthFactors>& factors);

/// Mirrors each image left-right when its flag is set.
Tensor flip_horizontal(const Tensor& images, const std::vector<bool>& flags);

}  // namespace dgan
