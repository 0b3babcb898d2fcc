#pragma once

// Dense row-major float64 tensors with tape-free reverse-mode differentiation.
//
// Every op records its inputs and a backward closure on the result node. Node
// ids are handed out monotonically, so a result always has a larger id than
// its inputs and reverse id order is a valid topological order. Backward
// closures are written in terms of the same differentiable ops, which makes
// higher-order gradients (the R1 penalty) fall out of `create_graph = true`.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace dgan {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
struct Node;

/// Backward closure: receives the node's own output and the incoming
/// gradient, returns one gradient per input (a null Tensor when the input
/// does not need one).
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  std::uint64_t id() const;
  const std::string& op() const;
  const std::vector<Tensor>& inputs() const;

  /// Same data, cut from the graph.
  Tensor detach() const;
  /// Fresh leaf sharing the data, with the requested grad flag.
  Tensor as_leaf(bool requires_grad) const;

  // Internal construction used by ops.
  static Tensor make(Shape shape, std::shared_ptr<const std::vector<double>> data,
                     std::string op, std::vector<Tensor> inputs, BackwardFn fn);
  static Tensor make(Shape shape, std::vector<double> data, std::string op,
                     std::vector<Tensor> inputs, BackwardFn fn);
  static Tensor from_node(std::shared_ptr<Node> node);

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  std::shared_ptr<const std::vector<double>> data;
  bool requires_grad = false;
  std::string op;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

/// Gradient per node id.
using GradientMap = std::unordered_map<std::uint64_t, Tensor>;

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- elementwise ------------------------------------------------------------
// Binary ops accept equal shapes, a single-element operand against any tensor,
// or a per-channel operand: [C] or [N,C] against [N,C,H,W], and [C] against
// [M,C]. Anything else is a DimensionError.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor softplus(const Tensor& x);
Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor reciprocal(const Tensor& x);

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sum of absolute values.
Tensor l1(const Tensor& x);
/// Euclidean norm; the gradient at the origin is taken as zero.
Tensor l2(const Tensor& x);
/// Sums over every axis past the first `keep` axes; result shape is the kept
/// prefix.
Tensor sum_trailing(const Tensor& x, std::size_t keep);

// ---- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
/// Explicit broadcast: equal rank, each source axis is 1 or matches.
Tensor expand(const Tensor& x, const Shape& shape);
/// Inverse of expand: sums the broadcast axes back down to `shape`.
Tensor sum_to(const Tensor& x, const Shape& shape);

// ---- linear algebra / image ops ---------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, pad;
  std::size_t out_height, out_width;
};

/// Cross-correlation. input [N,C,H,W], kernel [O,C,kh,kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride,
              std::size_t pad);
/// Gradient of conv2d w.r.t. its input (a transposed convolution).
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                         const Conv2dGeometry& geom);
/// Gradient of conv2d w.r.t. its kernel.
Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                          const Conv2dGeometry& geom);

/// Nearest-neighbour 2x upsampling of [N,C,H,W].
Tensor upsample2x(const Tensor& x);
/// Sum over 2x2 blocks of [N,C,H,W] (adjoint of upsample2x).
Tensor downsample_sum2x(const Tensor& x);

// ---- operators --------------------------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator+(const Tensor& x, double v) { return add_scalar(x, v); }
inline Tensor operator+(double v, const Tensor& x) { return add_scalar(x, v); }
inline Tensor operator-(const Tensor& x, double v) { return add_scalar(x, -v); }

// ---- differentiation --------------------------------------------------------

/// Reverse-mode pass from a scalar loss. Returns gradients for every leaf that
/// requires grad. With `create_graph`, the gradients are themselves recorded
/// in the graph and can be differentiated again.
GradientMap backward(const Tensor& loss, bool create_graph = false);

/// Gradients of a scalar loss w.r.t. arbitrary graph nodes. Inputs the loss
/// does not depend on receive zeros.
std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& inputs,
                         bool create_graph = false);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& point, double h = 1e-5);

}  // namespace dgan
