#pragma once

#include <Eigen/Dense>
#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dgan/networks.hpp"
#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan::test {

inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), rng.normal_vector(n, stddev), requires_grad);
}

inline Tensor randu(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat to_mat(const Tensor& t) {
  const std::size_t rows = t.dim(0), cols = t.numel() / rows;
  Mat m(rows, cols);
  auto d = t.data();
  for (std::size_t i = 0; i < rows * cols; ++i) m.data()[i] = d[i];
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::fabs(x[i] - y[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::memcmp(&x[i], &y[i], sizeof(double)) != 0) return false;
  }
  return true;
}

/// Two-block 4->8 generator with narrow widths.
inline GeneratorSpec mini_spec(std::size_t domains = 1) {
  GeneratorSpec s;
  s.resolutions = {4, 8};
  s.channels = {4, 3};
  s.dim_z_s = s.dim_z_c = 3;
  s.dim_s = s.dim_c = 3;
  s.mapping_depth = 2;
  s.dat_max_resolution = 8;
  s.num_style_domains = domains;
  return s;
}

/// Sets every DAT beta of a generator parameter set.
inline ParamSet with_beta(const GeneratorSpec& spec, ParamSet params, double beta) {
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    if (!spec.layer_has_dat(l)) continue;
    params["g.l" + std::to_string(l) + ".beta"] = Tensor::scalar(beta);
  }
  return params;
}

/// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dgan_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace dgan::test
