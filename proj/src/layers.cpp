#include "dgan/layers.hpp"

#include <cmath>

#include "dgan/error.hpp"

namespace dgan::layers {

namespace {

// [HW,C] <-> [1,C,HW,1] so the matrix-layout entry points share the batched
// implementation.
Tensor matrix_to_nchw(const Tensor& x) {
  return reshape(transpose(x), {1, x.dim(1), x.dim(0), 1});
}

Tensor nchw_to_matrix(const Tensor& y, std::size_t rows, std::size_t cols) {
  return transpose(reshape(y, {cols, rows}));
}

void require_matrix(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a [HW,C] feature matrix, got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

std::size_t MappingNet::input_width() const {
  if (layers.empty()) throw ContractError("mapping network has no layers");
  return layers.front().weight.dim(1);
}

std::size_t MappingNet::output_width() const {
  if (layers.empty()) throw ContractError("mapping network has no layers");
  return layers.back().weight.dim(0);
}

Tensor linear(const Tensor& x, const Linear& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(layer.weight.shape()));
  }
  return add(matmul(x, transpose(layer.weight)), layer.bias);
}

Tensor adain_nchw(const Tensor& x, const AdaINParams& params) {
  if (x.rank() != 4) throw DimensionError("adain: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (params.eps <= 0) throw ContractError("adain: eps must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1);
  const double inv_hw = 1.0 / static_cast<double>(x.dim(2) * x.dim(3));
  for (const Tensor* p : {&params.scale, &params.bias}) {
    const bool per_channel = p->rank() == 1 && p->dim(0) == c;
    const bool per_instance = p->rank() == 2 && p->dim(0) == n && p->dim(1) == c;
    if (!per_channel && !per_instance) {
      throw DimensionError("adain: channel mismatch, features " + shape_str(x.shape()) +
                           " vs params " + shape_str(p->shape()));
    }
  }
  const Shape stat_shape{n, c, 1, 1};
  Tensor mu = scale(sum_to(x, stat_shape), inv_hw);
  Tensor centered = x - expand(mu, x.shape());
  Tensor var = scale(sum_to(square(centered), stat_shape), inv_hw);
  Tensor inv_sigma = reciprocal(sqrt(var) + params.eps);
  Tensor normalized = centered * expand(inv_sigma, x.shape());
  return normalized * params.scale + params.bias;
}

Tensor adain_forward(const Tensor& x, const AdaINParams& params) {
  require_matrix(x, "adain_forward");
  if (params.scale.shape() != Shape{x.dim(1)} || params.bias.shape() != Shape{x.dim(1)}) {
    throw DimensionError("adain_forward: channel count " + std::to_string(x.dim(1)) +
                         " does not match params " + shape_str(params.scale.shape()));
  }
  return nchw_to_matrix(adain_nchw(matrix_to_nchw(x), params), x.dim(0), x.dim(1));
}

DiffAttentionMap attention_map(const Tensor& c, const DATParams& params,
                               std::size_t source_layer) {
  const std::size_t hw = params.height * params.width;
  if (params.map_weight.rank() != 2 || params.map_weight.dim(0) != hw ||
      params.map_bias.shape() != Shape{hw}) {
    throw DimensionError("attention_map: parameters " + shape_str(params.map_weight.shape()) +
                         " do not produce a " + std::to_string(params.height) + "x" +
                         std::to_string(params.width) + " map");
  }
  const bool single = c.rank() == 1;
  Tensor batch = single ? reshape(c, {1, c.dim(0)}) : c;
  if (batch.rank() != 2 || batch.dim(1) != params.map_weight.dim(1)) {
    throw DimensionError("attention_map: content code " + shape_str(c.shape()) +
                         " does not match map weight " + shape_str(params.map_weight.shape()));
  }
  Tensor d = sigmoid(linear(batch, Linear{params.map_weight, params.map_bias}));
  Shape shape = single ? Shape{params.height, params.width}
                       : Shape{batch.dim(0), params.height, params.width};
  return {reshape(d, shape), source_layer};
}

Tensor dat_nchw(const Tensor& x, const Tensor& d, const Tensor& beta) {
  if (x.rank() != 4) throw DimensionError("dat: expected [N,C,H,W], got " + shape_str(x.shape()));
  if (beta.numel() != 1) throw DimensionError("dat: beta must be a scalar");
  Tensor maps = d.rank() == 2 ? reshape(d, {1, 1, d.dim(0), d.dim(1)})
                              : (d.rank() == 3 ? reshape(d, {d.dim(0), 1, d.dim(1), d.dim(2)})
                                               : Tensor{});
  if (!maps.defined() || (maps.dim(0) != 1 && maps.dim(0) != x.dim(0)) ||
      maps.dim(2) != x.dim(2) || maps.dim(3) != x.dim(3)) {
    throw DimensionError("dat: attention map " + shape_str(d.shape()) +
                         " does not match features " + shape_str(x.shape()));
  }
  Tensor gate = (beta * maps) + 1.0;
  return x * expand(gate, x.shape());
}

Tensor dat_forward(const Tensor& x, const DiffAttentionMap& d, const Tensor& beta) {
  require_matrix(x, "dat_forward");
  if (d.d.numel() != x.dim(0)) {
    throw DimensionError("dat_forward: attention map " + shape_str(d.d.shape()) + " has " +
                         std::to_string(d.d.numel()) + " pixels, features have " +
                         std::to_string(x.dim(0)) + " rows");
  }
  if (beta.numel() != 1) throw DimensionError("dat_forward: beta must be a scalar");
  Tensor gate = (beta * reshape(d.d, {x.dim(0), 1})) + 1.0;
  return x * expand(gate, x.shape());
}

Tensor combined_transform(const Tensor& x, const DiffAttentionMap& d, const Tensor& beta,
                          const AdaINParams& adain) {
  Tensor attended = dat_forward(x, d, beta);
  if (adain.scale.shape() != Shape{x.dim(1)} || adain.bias.shape() != Shape{x.dim(1)}) {
    throw DimensionError("combined_transform: channel count mismatch");
  }
  return attended * adain.scale + adain.bias;
}

Tensor mapping_forward(const Tensor& z, const MappingNet& net) {
  if (net.layers.empty()) throw ContractError("mapping_forward: empty network");
  const bool single = z.rank() == 1;
  Tensor h = single ? reshape(z, {1, z.dim(0)}) : z;
  if (h.rank() != 2 || h.dim(1) != net.input_width()) {
    throw DimensionError("mapping_forward: code " + shape_str(z.shape()) +
                         " does not match input width " + std::to_string(net.input_width()));
  }
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    h = linear(h, net.layers[i]);
    if (i + 1 < net.layers.size()) h = leaky_relu(h, kLeakySlope);
  }
  return single ? reshape(h, {h.dim(1)}) : h;
}

Tensor noise_inject(const Tensor& x, const Tensor& noise, const Tensor& scale) {
  require_matrix(x, "noise_inject");
  if (noise.shape() != Shape{x.dim(0)} || scale.shape() != Shape{x.dim(1)}) {
    throw DimensionError("noise_inject: noise " + shape_str(noise.shape()) + " / scale " +
                         shape_str(scale.shape()) + " do not fit features " +
                         shape_str(x.shape()));
  }
  Tensor outer = matmul(reshape(noise, {x.dim(0), 1}), reshape(scale, {1, x.dim(1)}));
  return x + outer;
}

Tensor noise_inject_nchw(const Tensor& x, const Tensor& noise, const Tensor& scale) {
  if (x.rank() != 4 || noise.rank() != 3 || noise.dim(0) != x.dim(0) ||
      noise.dim(1) != x.dim(2) || noise.dim(2) != x.dim(3) || scale.shape() != Shape{x.dim(1)}) {
    throw DimensionError("noise_inject: noise " + shape_str(noise.shape()) + " / scale " +
                         shape_str(scale.shape()) + " do not fit features " +
                         shape_str(x.shape()));
  }
  Tensor planes = expand(reshape(noise, {x.dim(0), 1, x.dim(2), x.dim(3)}), x.shape());
  return x + planes * scale;
}

MappingNet make_mapping_net(const std::vector<std::size_t>& widths, Rng& rng,
                            bool requires_grad) {
  if (widths.size() < 2) throw ContractError("mapping net needs at least two widths");
  MappingNet net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double stddev = std::sqrt(1.0 / static_cast<double>(widths[i]));
    net.layers.push_back(
        Linear{Tensor::from({widths[i + 1], widths[i]},
                            rng.normal_vector(widths[i] * widths[i + 1], stddev), requires_grad),
               Tensor::zeros({widths[i + 1]}, requires_grad)});
  }
  return net;
}

}  // namespace dgan::layers
