#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dgan/checkpoint.hpp"
#include "dgan/cli.hpp"
#include "dgan/config.hpp"
#include "dgan/error.hpp"
#include "dgan/layers.hpp"
#include "dgan/metrics.hpp"
#include "dgan/synth.hpp"

namespace py = pybind11;
using namespace dgan;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

GaussianStats stats_of(const Array& mu, const Array& sigma) {
  GaussianStats s;
  s.mu.assign(mu.data(), mu.data() + mu.size());
  s.sigma.assign(sigma.data(), sigma.data() + sigma.size());
  if (sigma.size() != mu.size() * mu.size()) {
    throw DimensionError("covariance must be " + std::to_string(mu.size()) + "x" +
                         std::to_string(mu.size()));
  }
  s.n = 2;
  return s;
}

/// A loaded generator checkpoint.
class PyGenerator {
 public:
  explicit PyGenerator(const std::string& path) : model_(load_generator(load_checkpoint(path))) {}

  Array style_codes(const Array& z, std::size_t domain) const {
    NoGradGuard g;
    return to_array(model_.style_codes(to_tensor(z), domain));
  }
  Array content_codes(const Array& z) const {
    NoGradGuard g;
    return to_array(model_.content_codes(to_tensor(z)));
  }
  Array render(const Array& s, const Array& c) const {
    NoGradGuard g;
    return to_array(model_.render(to_tensor(s), to_tensor(c)));
  }
  Array sample(std::size_t n, std::uint64_t seed, std::size_t domain) const {
    NoGradGuard g;
    Rng rng(seed);
    Tensor zs = model_.sample_z_style(rng, n);
    Tensor zc = model_.sample_z_content(rng, n);
    return to_array(model_.render(model_.style_codes(zs, domain), model_.content_codes(zc)));
  }
  double ppl(const std::string& mode, std::size_t samples, std::uint64_t seed, std::size_t domain) const {
    NoGradGuard g;
    PPLConfig c;
    c.mode = parse_ppl_mode(mode);
    c.n_samples = samples;
    c.outer = std::max<std::size_t>(1, samples / c.inner);
    return dgan::ppl(ModelCodeGenerator(model_, domain), c, seed, FeatureExtractor::random_conv());
  }
  py::dict spec() const {
    const GeneratorSpec& s = model_.spec();
    py::dict d;
    d["resolutions"] = s.resolutions;
    d["channels"] = s.channels;
    d["dim_s"] = s.dim_s;
    d["dim_c"] = s.dim_c;
    d["dim_z_s"] = s.dim_z_s;
    d["dim_z_c"] = s.dim_z_c;
    d["num_layers"] = s.num_layers();
    d["num_style_domains"] = s.num_style_domains;
    return d;
  }

 private:
  GeneratorModel model_;
};

}  // namespace

PYBIND11_MODULE(_dgan, m) {
  m.doc() = "Diagonal-attention GAN core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<IoError>(m, "IoError", PyExc_IOError);

  m.def(
      "adain",
      [](const Array& x, const Array& scale, const Array& bias, double eps) {
        return to_array(layers::adain_forward(to_tensor(x), {to_tensor(scale), to_tensor(bias), eps}));
      },
      py::arg("x"), py::arg("scale"), py::arg("bias"), py::arg("eps") = layers::kInstanceNormEps,
      "Instance-normalise the columns of x [HW,C] and re-affine them.");
  m.def(
      "dat",
      [](const Array& x, const Array& d, double beta) {
        return to_array(layers::dat_forward(to_tensor(x), {to_tensor(d), 0}, Tensor::scalar(beta)));
      },
      py::arg("x"), py::arg("d"), py::arg("beta"), "Row gate (I + beta diag(d)) x.");
  m.def(
      "attention_map",
      [](const Array& c, const Array& weight, const Array& bias, std::size_t h, std::size_t w) {
        layers::DATParams p{Tensor::scalar(0.0), to_tensor(weight), to_tensor(bias), h, w};
        return to_array(layers::attention_map(to_tensor(c), p).d);
      },
      py::arg("c"), py::arg("weight"), py::arg("bias"), py::arg("height"), py::arg("width"),
      "sigmoid(W c + b) as an H x W map.");
  m.def(
      "combined_transform",
      [](const Array& x, const Array& d, double beta, const Array& scale, const Array& bias) {
        return to_array(layers::combined_transform(to_tensor(x), {to_tensor(d), 0}, Tensor::scalar(beta),
                                                   {to_tensor(scale), to_tensor(bias)}));
      },
      py::arg("x"), py::arg("d"), py::arg("beta"), py::arg("scale"), py::arg("bias"));
  m.def(
      "conv2d",
      [](const Array& x, const Array& k, std::size_t stride, std::size_t pad) {
        return to_array(dgan::conv2d(to_tensor(x), to_tensor(k), stride, pad));
      },
      py::arg("x"), py::arg("kernel"), py::arg("stride") = 1, py::arg("pad") = 0);
  m.def(
      "frechet_distance",
      [](const Array& mu1, const Array& s1, const Array& mu2, const Array& s2) {
        return dgan::frechet_distance(stats_of(mu1, s1), stats_of(mu2, s2));
      },
      py::arg("mu1"), py::arg("sigma1"), py::arg("mu2"), py::arg("sigma2"));
  m.def(
      "feature_stats",
      [](const Array& features) {
        GaussianStats s = feature_stats_from_features(to_tensor(features));
        const auto d = static_cast<py::ssize_t>(s.dim());
        Array mu({d}), sigma({d, d});
        std::copy(s.mu.begin(), s.mu.end(), mu.mutable_data());
        std::copy(s.sigma.begin(), s.sigma.end(), sigma.mutable_data());
        return py::make_tuple(mu, sigma);
      },
      py::arg("features"), "Mean and unbiased covariance of feature rows.");
  m.def(
      "synth_dataset",
      [](std::size_t n, std::size_t resolution, std::size_t domains, std::uint64_t seed) {
        SynthSpec s;
        s.n_images = n;
        s.resolution = resolution;
        s.num_domains = domains;
        s.seed = seed;
        SynthDataset ds = synth_dataset(s);
        return py::make_tuple(to_array(ds.images), ds.labels());
      },
      py::arg("n"), py::arg("resolution") = 32, py::arg("domains") = 2, py::arg("seed") = 1);
  m.def(
      "load_checkpoint",
      [](const std::string& path) {
        py::dict out;
        for (const auto& [name, t] : load_checkpoint(path).tensors) out[py::str(name)] = to_array(t);
        return out;
      },
      py::arg("path"));
  m.def(
      "save_checkpoint",
      [](const std::map<std::string, Array>& tensors, const std::string& path) {
        Checkpoint ck;
        for (const auto& [name, a] : tensors) ck.tensors[name] = to_tensor(a);
        save_checkpoint(ck, path);
      },
      py::arg("tensors"), py::arg("path"));
  m.def(
      "config_defaults", [] { return config_to_json(LabConfig{}); },
      "Every config key with its default, as JSON.");
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line; returns (exit code, stdout, stderr).");

  py::class_<PyGenerator>(m, "Generator")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("style_codes", &PyGenerator::style_codes, py::arg("z"), py::arg("domain") = 0)
      .def("content_codes", &PyGenerator::content_codes, py::arg("z"))
      .def("render", &PyGenerator::render, py::arg("s"), py::arg("c"))
      .def("sample", &PyGenerator::sample, py::arg("n"), py::arg("seed") = 0, py::arg("domain") = 0)
      .def("ppl", &PyGenerator::ppl, py::arg("mode") = "W", py::arg("samples") = 1000,
           py::arg("seed") = 0, py::arg("domain") = 0)
      .def_property_readonly("spec", &PyGenerator::spec);
}
