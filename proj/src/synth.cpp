#include "dgan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include "dgan/error.hpp"
#include "dgan/rng.hpp"

namespace dgan {

namespace {

constexpr int kSupersample = 4;
constexpr double kFgSaturation = 0.85, kFgValue = 0.95;
constexpr double kBgSaturation = 0.45, kBgValue = 0.35;
constexpr double kBandMargin = 0.05;

}  // namespace

void SynthSpec::validate() const {
  if (resolution < 8) throw ContractError("synth: resolution must be at least 8");
  if (n_images == 0) throw ContractError("synth: n_images must be positive");
  if (num_domains == 0) throw ContractError("synth: num_domains must be positive");
  if (!(0.0 <= center_min && center_min <= center_max && center_max <= 1.0)) {
    throw ContractError("synth: center range must lie in [0,1]");
  }
  if (!(0.0 < ratio_min && ratio_min <= ratio_max && ratio_max <= 1.0)) {
    throw ContractError("synth: axis ratio range must lie in (0,1]");
  }
  if (!(major_fraction > 0.0 && major_fraction <= 0.5)) {
    throw ContractError("synth: major_fraction must lie in (0,0.5]");
  }
}

std::pair<double, double> domain_hue_band(std::size_t domain, std::size_t num_domains) {
  const double width = 1.0 / static_cast<double>(num_domains);
  const double lo = static_cast<double>(domain) * width;
  const double margin = num_domains > 1 ? kBandMargin : 0.0;
  return {lo, lo + width - margin};
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

void rgb_to_hsv(const double rgb[3], double& h, double& s, double& v) {
  const double mx = std::max({rgb[0], rgb[1], rgb[2]});
  const double mn = std::min({rgb[0], rgb[1], rgb[2]});
  const double delta = mx - mn;
  v = mx;
  s = mx > 0 ? delta / mx : 0.0;
  if (delta <= 0) {
    h = 0.0;
    return;
  }
  if (mx == rgb[0]) {
    h = (rgb[1] - rgb[2]) / delta;
  } else if (mx == rgb[1]) {
    h = 2.0 + (rgb[2] - rgb[0]) / delta;
  } else {
    h = 4.0 + (rgb[0] - rgb[1]) / delta;
  }
  h /= 6.0;
  if (h < 0) h += 1.0;
}

Tensor render_ellipse(const SynthFactors& f, std::size_t resolution, double major_fraction,
                      std::vector<double>* coverage) {
  const std::size_t r = resolution;
  const double size = static_cast<double>(r);
  const double a = major_fraction * size, b = a * f.ratio;
  const double cx = f.center_x * size, cy = f.center_y * size;
  const double ct = std::cos(f.theta), st = std::sin(f.theta);
  double fg[3], bg[3];
  hsv_to_rgb(f.fg_hue, kFgSaturation, kFgValue, fg);
  hsv_to_rgb(f.bg_hue, kBgSaturation, kBgValue, bg);
  std::vector<double> pixels(3 * r * r);
  if (coverage) coverage->assign(r * r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      int inside = 0;
      for (int si = 0; si < kSupersample; ++si) {
        for (int sj = 0; sj < kSupersample; ++sj) {
          const double y = static_cast<double>(i) + (si + 0.5) / kSupersample - cy;
          const double x = static_cast<double>(j) + (sj + 0.5) / kSupersample - cx;
          const double u = ct * x + st * y, w = -st * x + ct * y;
          if ((u * u) / (a * a) + (w * w) / (b * b) <= 1.0) ++inside;
        }
      }
      const double cov = inside / static_cast<double>(kSupersample * kSupersample);
      if (coverage) (*coverage)[i * r + j] = cov;
      for (int ch = 0; ch < 3; ++ch) {
        pixels[static_cast<std::size_t>(ch) * r * r + i * r + j] = cov * fg[ch] + (1 - cov) * bg[ch];
      }
    }
  }
  return Tensor::from({3, r, r}, std::move(pixels));
}

SynthDataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  const std::size_t r = spec.resolution, plane = 3 * r * r;
  Rng rng(derive_seed(spec.seed, "synth"));
  SynthDataset ds;
  std::vector<double> all(spec.n_images * plane);
  for (std::size_t n = 0; n < spec.n_images; ++n) {
    SynthFactors f;
    f.center_x = rng.uniform(spec.center_min, spec.center_max);
    f.center_y = rng.uniform(spec.center_min, spec.center_max);
    f.theta = rng.uniform(0.0, std::numbers::pi);
    f.ratio = rng.uniform(spec.ratio_min, spec.ratio_max);
    f.domain = rng.index(spec.num_domains);
    auto [lo, hi] = domain_hue_band(f.domain, spec.num_domains);
    f.fg_hue = rng.uniform(lo, hi);
    f.bg_hue = rng.uniform(0.0, 1.0);
    Tensor img = render_ellipse(f, r, spec.major_fraction);
    std::copy(img.data().begin(), img.data().end(), all.begin() + static_cast<long>(n * plane));
    ds.factors.push_back(f);
  }
  ds.images = Tensor::from({spec.n_images, 3, r, r}, std::move(all));
  return ds;
}

std::vector<std::size_t> SynthDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(factors.size());
  for (const auto& f : factors) out.push_back(f.domain);
  return out;
}

Tensor SynthDataset::batch(const std::vector<std::size_t>& indices) const {
  const std::size_t n = images.dim(0), plane = images.numel() / n;
  std::vector<double> out(indices.size() * plane);
  auto src = images.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n) throw ContractError("dataset index out of range");
    std::copy_n(src.begin() + static_cast<long>(indices[k] * plane), plane,
                out.begin() + static_cast<long>(k * plane));
  }
  Shape shape = images.shape();
  shape[0] = indices.size();
  return Tensor::from(std::move(shape), std::move(out));
}

EllipseMeasurement measure_ellipse(const Tensor& image) {
  Shape s = image.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3 || s[0] != 3 || s[1] < 2 || s[2] < 2) {
    throw DimensionError("measure_ellipse: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t h = s[1], w = s[2], plane = h * w;
  auto px = image.data();
  double bg[3];
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<double> border;
    for (std::size_t j = 0; j < w; ++j) {
      border.push_back(px[ch * plane + j]);
      border.push_back(px[ch * plane + (h - 1) * w + j]);
    }
    for (std::size_t i = 1; i + 1 < h; ++i) {
      border.push_back(px[ch * plane + i * w]);
      border.push_back(px[ch * plane + i * w + w - 1]);
    }
    auto mid = border.begin() + static_cast<long>(border.size() / 2);
    std::nth_element(border.begin(), mid, border.end());
    bg[ch] = *mid;
  }
  std::vector<double> dist(plane);
  double max_dist = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    double d2 = 0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double d = px[ch * plane + p] - bg[ch];
      d2 += d * d;
    }
    dist[p] = std::sqrt(d2);
    max_dist = std::max(max_dist, dist[p]);
  }
  EllipseMeasurement m;
  m.contrast = max_dist;
  m.centroid_x = 0.5 * static_cast<double>(w);
  m.centroid_y = 0.5 * static_cast<double>(h);
  if (max_dist <= 1e-9) {
    double h_, s_, v_;
    rgb_to_hsv(bg, h_, s_, v_);
    m.fg_hue = h_;
    return m;
  }
  double total = 0, sx = 0, sy = 0, rgb[3] = {0, 0, 0};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (dist[p] < 0.5 * max_dist) continue;
      const double wt = dist[p];
      total += wt;
      sx += wt * (static_cast<double>(j) + 0.5);
      sy += wt * (static_cast<double>(i) + 0.5);
      for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch] += wt * px[ch * plane + p];
    }
  }
  m.centroid_x = sx / total;
  m.centroid_y = sy / total;
  for (double& c : rgb) c = std::clamp(c / total, 0.0, 1.0);
  double sat, val;
  rgb_to_hsv(rgb, m.fg_hue, sat, val);
  return m;
}

double hue_distance(double a, double b) {
  const double d = std::fabs(a - b);
  const double r = d - std::floor(d);
  return std::min(r, 1.0 - r);
}

void write_factor_table(const std::string& path, const std::vector<SynthFactors>& factors) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "index,center_x,center_y,theta,ratio,fg_hue,bg_hue,domain\n" << std::setprecision(17);
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto& f = factors[i];
    out << i << ',' << f.center_x << ',' << f.center_y << ',' << f.theta << ',' << f.ratio << ','
        << f.fg_hue << ',' << f.bg_hue << ',' << f.domain << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

Tensor flip_horizontal(const Tensor& images, const std::vector<bool>& flags) {
  if (images.rank() != 4 || flags.size() != images.dim(0)) {
    throw DimensionError("flip_horizontal: expected [N,C,H,W] and one flag per image");
  }
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  std::vector<double> out = images.to_vector();
  for (std::size_t k = 0; k < n; ++k) {
    if (!flags[k]) continue;
    for (std::size_t p = 0; p < c * h; ++p) {
      double* row = out.data() + (k * c * h + p) * w;
      std::reverse(row, row + w);
    }
  }
  return Tensor::from(images.shape(), std::move(out));
}

}  // namespace dgan
