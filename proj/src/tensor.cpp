#include "dgan/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "dgan/error.hpp"

namespace dgan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

// Products run on Eigen-owned storage so that vectorised kernels see the same
// alignment on every call.
RowMat owned(const double* p, std::size_t rows, std::size_t cols) {
  return MapConstMat(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void store(const RowMat& m, double* out) { std::copy(m.data(), m.data() + m.size(), out); }

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;

using Buffer = std::vector<double>;

Shape ones_shape(std::size_t rank) { return Shape(rank, 1); }

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Per-channel broadcast target: reshapes `small` so that `expand` can lift it to
// `big`'s shape; nullopt when the pair is not one of the supported cases.
std::optional<Shape> channel_view(const Shape& big, const Shape& small) {
  if (big.size() == 4 && small.size() == 1 && small[0] == big[1]) {
    return Shape{1, big[1], 1, 1};
  }
  if (big.size() == 4 && small.size() == 2 && small[0] == big[0] && small[1] == big[1]) {
    return Shape{big[0], big[1], 1, 1};
  }
  if (big.size() == 2 && small.size() == 1 && small[0] == big[1]) {
    return Shape{1, big[1]};
  }
  return std::nullopt;
}

// Brings two operands to a common shape under the restricted broadcast rules.
std::pair<Tensor, Tensor> align(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return {a, b};
  if (b.numel() == 1 && (a.numel() != 1 || a.rank() >= b.rank())) {
    return {a, expand(reshape(b, ones_shape(a.rank())), a.shape())};
  }
  if (a.numel() == 1) return {expand(reshape(a, ones_shape(b.rank())), b.shape()), b};
  if (auto view = channel_view(a.shape(), b.shape())) {
    return {a, expand(reshape(b, *view), a.shape())};
  }
  if (auto view = channel_view(b.shape(), a.shape())) {
    return {expand(reshape(a, *view), b.shape()), b};
  }
  throw DimensionError(std::string(op) + ": incompatible broadcast " + shape_str(a.shape()) +
                       " vs " + shape_str(b.shape()));
}

template <class F>
Tensor map_unary(const Tensor& x, const char* op, F f, BackwardFn fn) {
  auto in = x.data();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::make(x.shape(), std::move(out), op, {x}, std::move(fn));
}

Tensor constant_like(const Tensor& x, Buffer values) {
  return Tensor::from(x.shape(), std::move(values));
}

double stable_softplus(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

// 1/x with 0 mapped to 0; used only inside the sqrt derivative so that norms
// have a zero subgradient at the origin.
Tensor safe_reciprocal(const Tensor& x) {
  return map_unary(
      x, "safe_reciprocal", [](double v) { return v == 0.0 ? 0.0 : 1.0 / v; },
      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
        return {neg(mul(g, square(out)))};
      });
}

// ---- convolution kernels ----------------------------------------------------

void im2col(const double* x, const Conv2dGeometry& g, double* col) {
  const std::size_t hw_out = g.out_height * g.out_width;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * hw_out;
        for (std::size_t oi = 0; oi < g.out_height; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          double* dst = row + oi * g.out_width;
          if (ii < 0 || ii >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_width, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(ii) * g.width;
          for (std::size_t oj = 0; oj < g.out_width; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            dst[oj] = (jj < 0 || jj >= static_cast<long>(g.width)) ? 0.0 : src[jj];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const Conv2dGeometry& g, double* x) {
  const std::size_t hw_out = g.out_height * g.out_width;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* xc = x + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const double* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * hw_out;
        for (std::size_t oi = 0; oi < g.out_height; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - static_cast<long>(g.pad);
          if (ii < 0 || ii >= static_cast<long>(g.height)) continue;
          double* dst = xc + static_cast<std::size_t>(ii) * g.width;
          const double* src = row + oi * g.out_width;
          for (std::size_t oj = 0; oj < g.out_width; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - static_cast<long>(g.pad);
            if (jj >= 0 && jj < static_cast<long>(g.width)) dst[jj] += src[oj];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Conv2dGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad == 0;
}

std::size_t patch_size(const Conv2dGeometry& g) {
  return g.in_channels * g.kernel_h * g.kernel_w;
}

Buffer conv_forward_kernel(std::span<const double> x, std::span<const double> k,
                           const Conv2dGeometry& g) {
  const std::size_t hw_out = g.out_height * g.out_width;
  const std::size_t patch = patch_size(g);
  Buffer y(g.batch * g.out_channels * hw_out);
  Buffer col(is_pointwise(g) ? 0 : patch * hw_out);
  const RowMat km = owned(k.data(), g.out_channels, patch);
  RowMat yn(g.out_channels, hw_out);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x.data() + n * g.in_channels * g.height * g.width;
    const double* colp = xn;
    if (!is_pointwise(g)) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    yn.noalias() = km * owned(colp, patch, hw_out);
    store(yn, y.data() + n * g.out_channels * hw_out);
  }
  return y;
}

Buffer conv_input_grad_kernel(std::span<const double> gy, std::span<const double> k,
                              const Conv2dGeometry& g) {
  const std::size_t hw_out = g.out_height * g.out_width;
  const std::size_t patch = patch_size(g);
  const std::size_t in_size = g.in_channels * g.height * g.width;
  Buffer gx(g.batch * in_size, 0.0);
  Buffer col(patch * hw_out);
  const RowMat kt = owned(k.data(), g.out_channels, patch).transpose();
  RowMat cols(patch, hw_out);
  for (std::size_t n = 0; n < g.batch; ++n) {
    cols.noalias() = kt * owned(gy.data() + n * g.out_channels * hw_out, g.out_channels, hw_out);
    if (is_pointwise(g)) {
      store(cols, gx.data() + n * in_size);
    } else {
      store(cols, col.data());
      col2im_add(col.data(), g, gx.data() + n * in_size);
    }
  }
  return gx;
}

Buffer conv_kernel_grad_kernel(std::span<const double> x, std::span<const double> gy,
                               const Conv2dGeometry& g) {
  const std::size_t hw_out = g.out_height * g.out_width;
  const std::size_t patch = patch_size(g);
  Buffer gk(g.out_channels * patch, 0.0);
  Buffer col(is_pointwise(g) ? 0 : patch * hw_out);
  RowMat gkm = RowMat::Zero(g.out_channels, patch);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* xn = x.data() + n * g.in_channels * g.height * g.width;
    const double* colp = xn;
    if (!is_pointwise(g)) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    gkm.noalias() += owned(gy.data() + n * g.out_channels * hw_out, g.out_channels, hw_out) *
                     owned(colp, patch, hw_out).transpose();
  }
  store(gkm, gk.data());
  return gk;
}

Shape input_shape(const Conv2dGeometry& g) {
  return {g.batch, g.in_channels, g.height, g.width};
}
Shape output_shape(const Conv2dGeometry& g) {
  return {g.batch, g.out_channels, g.out_height, g.out_width};
}
Shape kernel_shape(const Conv2dGeometry& g) {
  return {g.out_channels, g.in_channels, g.kernel_h, g.kernel_w};
}

}  // namespace

// ---- shape helpers ----------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::from_node(std::shared_ptr<Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1);
  node->shape = std::move(shape);
  node->data = std::make_shared<const Buffer>(std::move(data));
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return from_node(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}
Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}
Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), Buffer(n, value), requires_grad);
}
Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Tensor Tensor::make(Shape shape, std::shared_ptr<const std::vector<double>> data,
                    std::string op, std::vector<Tensor> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1);
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = std::move(op);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(fn);
  }
  return from_node(std::move(node));
}

Tensor Tensor::make(Shape shape, std::vector<double> data, std::string op,
                    std::vector<Tensor> inputs, BackwardFn fn) {
  return make(std::move(shape), std::make_shared<const Buffer>(std::move(data)),
              std::move(op), std::move(inputs), std::move(fn));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}
std::size_t Tensor::numel() const { return node_->data->size(); }
std::span<const double> Tensor::data() const { return {*node_->data}; }
std::vector<double> Tensor::to_vector() const { return *node_->data; }
double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return (*node_->data)[0];
}
double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("at(): rank mismatch");
  auto strides = strides_of(shape());
  std::size_t off = 0, i = 0;
  for (auto v : index) {
    if (v >= shape()[i]) throw DimensionError("at(): index out of range");
    off += v * strides[i++];
  }
  return (*node_->data)[off];
}
bool Tensor::requires_grad() const { return node_->requires_grad; }
std::uint64_t Tensor::id() const { return node_->id; }
const std::string& Tensor::op() const { return node_->op; }
const std::vector<Tensor>& Tensor::inputs() const { return node_->inputs; }

Tensor Tensor::detach() const { return as_leaf(false); }

Tensor Tensor::as_leaf(bool requires_grad) const {
  auto node = std::make_shared<Node>();
  node->id = g_next_id.fetch_add(1);
  node->shape = node_->shape;
  node->data = node_->data;
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return from_node(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace {
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(g_grad_enabled) {
    g_grad_enabled = enabled;
  }
  ~GradModeGuard() { g_grad_enabled = previous_; }

 private:
  bool previous_;
};
}  // namespace

// ---- elementwise --------------------------------------------------------------

Tensor add(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = align(a0, b0, "add");
  auto x = a.data(), y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make(a.shape(), std::move(out), "add", {a, b},
                      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                        return {g, g};
                      });
}

Tensor sub(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = align(a0, b0, "sub");
  auto x = a.data(), y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make(a.shape(), std::move(out), "sub", {a, b},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {g, in[1].requires_grad() ? neg(g) : Tensor{}};
                      });
}

Tensor mul(const Tensor& a0, const Tensor& b0) {
  auto [a, b] = align(a0, b0, "mul");
  auto x = a.data(), y = b.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make(a.shape(), std::move(out), "mul", {a, b},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {in[0].requires_grad() ? mul(g, in[1]) : Tensor{},
                                in[1].requires_grad() ? mul(g, in[0]) : Tensor{}};
                      });
}

Tensor neg(const Tensor& x) {
  return map_unary(x, "neg", [](double v) { return -v; },
                   [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                     return {neg(g)};
                   });
}

Tensor scale(const Tensor& x, double factor) {
  return map_unary(x, "scale", [factor](double v) { return v * factor; },
                   [factor](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                     return {scale(g, factor)};
                   });
}

Tensor add_scalar(const Tensor& x, double value) {
  return map_unary(x, "add_scalar", [value](double v) { return v + value; },
                   [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                     return {g};
                   });
}

Tensor sigmoid(const Tensor& x) {
  return map_unary(x, "sigmoid", stable_sigmoid,
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     // s' = s (1 - s), expressed on the output node.
                     return {mul(g, mul(out, add_scalar(neg(out), 1.0)))};
                   });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return map_unary(x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
                   [slope](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     const auto in = out.inputs()[0].data();
                     Buffer mask(in.size());
                     for (std::size_t i = 0; i < in.size(); ++i) mask[i] = in[i] > 0 ? 1.0 : slope;
                     return {mul(g, constant_like(g, std::move(mask)))};
                   });
}

Tensor softplus(const Tensor& x) {
  return map_unary(x, "softplus", stable_softplus,
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     return {mul(g, sigmoid(out.inputs()[0]))};
                   });
}

Tensor square(const Tensor& x) {
  return map_unary(x, "square", [](double v) { return v * v; },
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     return {mul(g, scale(out.inputs()[0], 2.0))};
                   });
}

Tensor abs(const Tensor& x) {
  return map_unary(x, "abs", [](double v) { return std::abs(v); },
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     const auto in = out.inputs()[0].data();
                     Buffer sign(in.size());
                     for (std::size_t i = 0; i < in.size(); ++i) {
                       sign[i] = in[i] > 0 ? 1.0 : (in[i] < 0 ? -1.0 : 0.0);
                     }
                     return {mul(g, constant_like(g, std::move(sign)))};
                   });
}

Tensor sqrt(const Tensor& x) {
  return map_unary(x, "sqrt",
                   [](double v) {
                     if (v < 0) throw NumericError("sqrt of negative value");
                     return std::sqrt(v);
                   },
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     return {mul(g, scale(safe_reciprocal(out), 0.5))};
                   });
}

Tensor reciprocal(const Tensor& x) {
  return map_unary(x, "reciprocal", [](double v) { return 1.0 / v; },
                   [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                     return {neg(mul(g, square(out)))};
                   });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  auto in = x.data();
  double total = 0.0;
  for (double v : in) total += v;
  return Tensor::make({}, Buffer{total}, "sum", {x},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        const auto& src = out.inputs()[0];
                        return {expand(reshape(g, ones_shape(src.rank())), src.shape())};
                      });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor l1(const Tensor& x) { return sum(abs(x)); }

Tensor l2(const Tensor& x) { return sqrt(sum(square(x))); }

Tensor sum_trailing(const Tensor& x, std::size_t keep) {
  if (keep > x.rank()) throw DimensionError("sum_trailing: keep exceeds rank");
  Shape kept(x.shape().begin(), x.shape().begin() + static_cast<long>(keep));
  Shape target = kept;
  target.resize(x.rank(), 1);
  return reshape(sum_to(x, target), kept);
}

// ---- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  if (shape == x.shape()) return x;
  return Tensor::make(std::move(shape), x.node()->data, "reshape", {x},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        return {reshape(g, out.inputs()[0].shape())};
                      });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Buffer out(m * n);
  MapMat(out.data(), n, m) = MapConstMat(x.data().data(), m, n).transpose();
  return Tensor::make({n, m}, std::move(out), "transpose", {x},
                      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                        return {transpose(g)};
                      });
}

Tensor expand(const Tensor& x, const Shape& shape) {
  if (x.rank() != shape.size()) {
    throw DimensionError("expand: rank mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (x.shape()[i] != 1 && x.shape()[i] != shape[i]) {
      throw DimensionError("expand: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
  }
  if (x.shape() == shape) return x;
  const std::size_t rank = shape.size();
  auto src_strides = strides_of(x.shape());
  for (std::size_t i = 0; i < rank; ++i) {
    if (x.shape()[i] == 1) src_strides[i] = 0;
  }
  const std::size_t total = shape_numel(shape);
  const std::size_t inner = shape.back();
  const std::size_t inner_stride = src_strides.back();
  Buffer out(total);
  auto in = x.data();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) out[base + j] = in[src + j * inner_stride];
    // advance the odometer over all axes but the last
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < shape[ax]) {
        src += src_strides[ax];
        break;
      }
      src -= src_strides[ax] * (shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return Tensor::make(shape, std::move(out), "expand", {x},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        return {sum_to(g, out.inputs()[0].shape())};
                      });
}

Tensor sum_to(const Tensor& x, const Shape& shape) {
  if (x.rank() != shape.size()) {
    throw DimensionError("sum_to: rank mismatch " + shape_str(x.shape()) + " -> " +
                         shape_str(shape));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] != 1 && shape[i] != x.shape()[i]) {
      throw DimensionError("sum_to: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
  }
  if (x.shape() == shape) return x;
  const std::size_t rank = shape.size();
  const Shape& big = x.shape();
  auto dst_strides = strides_of(shape);
  for (std::size_t i = 0; i < rank; ++i) {
    if (shape[i] == 1) dst_strides[i] = 0;
  }
  const std::size_t total = x.numel();
  const std::size_t inner = big.back();
  const std::size_t inner_stride = dst_strides.back();
  Buffer out(shape_numel(shape), 0.0);
  auto in = x.data();
  std::vector<std::size_t> idx(rank, 0);
  std::size_t dst = 0;
  for (std::size_t base = 0; base < total; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) out[dst + j * inner_stride] += in[base + j];
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      if (++idx[ax] < big[ax]) {
        dst += dst_strides[ax];
        break;
      }
      dst -= dst_strides[ax] * (big[ax] - 1);
      idx[ax] = 0;
    }
  }
  return Tensor::make(shape, std::move(out), "sum_to", {x},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        return {expand(g, out.inputs()[0].shape())};
                      });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer out(m * n);
  RowMat prod(m, n);
  prod.noalias() = owned(a.data().data(), m, k) * owned(b.data().data(), k, n);
  store(prod, out.data());
  return Tensor::make({m, n}, std::move(out), "matmul", {a, b},
                      [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {in[0].requires_grad() ? matmul(g, transpose(in[1])) : Tensor{},
                                in[1].requires_grad() ? matmul(transpose(in[0]), g) : Tensor{}};
                      });
}

// ---- convolution ------------------------------------------------------------

namespace {

Tensor conv2d_with(const Tensor& input, const Tensor& kernel, const Conv2dGeometry& g) {
  Buffer y = conv_forward_kernel(input.data(), kernel.data(), g);
  return Tensor::make(output_shape(g), std::move(y), "conv2d", {input, kernel},
                      [g](const Tensor& out, const Tensor& gy) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {in[0].requires_grad() ? conv2d_input_grad(gy, in[1], g) : Tensor{},
                                in[1].requires_grad() ? conv2d_kernel_grad(in[0], gy, g) : Tensor{}};
                      });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw DimensionError("conv2d expects input [N,C,H,W] and kernel [O,C,kh,kw], got " +
                         shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: channel mismatch " + shape_str(input.shape()) + " vs " +
                         shape_str(kernel.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) throw ContractError("conv2d: kernel sizes must be odd");
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h + 2 * pad < kh || w + 2 * pad < kw) {
    throw DimensionError("conv2d: non-positive output size for input " +
                         shape_str(input.shape()) + " and kernel " + shape_str(kernel.shape()));
  }
  Conv2dGeometry g{input.dim(0), input.dim(1), h, w, kernel.dim(0), kh, kw, stride, pad,
                   (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
  return conv2d_with(input, kernel, g);
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel,
                         const Conv2dGeometry& g) {
  if (grad_out.shape() != output_shape(g) || kernel.shape() != kernel_shape(g)) {
    throw DimensionError("conv2d_input_grad: geometry mismatch");
  }
  Buffer gx = conv_input_grad_kernel(grad_out.data(), kernel.data(), g);
  return Tensor::make(input_shape(g), std::move(gx), "conv2d_input_grad", {grad_out, kernel},
                      [g](const Tensor& out, const Tensor& G) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {in[0].requires_grad() ? conv2d_with(G, in[1], g) : Tensor{},
                                in[1].requires_grad() ? conv2d_kernel_grad(G, in[0], g) : Tensor{}};
                      });
}

Tensor conv2d_kernel_grad(const Tensor& input, const Tensor& grad_out,
                          const Conv2dGeometry& g) {
  if (input.shape() != input_shape(g) || grad_out.shape() != output_shape(g)) {
    throw DimensionError("conv2d_kernel_grad: geometry mismatch");
  }
  Buffer gk = conv_kernel_grad_kernel(input.data(), grad_out.data(), g);
  return Tensor::make(kernel_shape(g), std::move(gk), "conv2d_kernel_grad", {input, grad_out},
                      [g](const Tensor& out, const Tensor& G) -> std::vector<Tensor> {
                        const auto& in = out.inputs();
                        return {in[0].requires_grad() ? conv2d_input_grad(in[1], G, g) : Tensor{},
                                in[1].requires_grad() ? conv2d_with(in[0], G, g) : Tensor{}};
                      });
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("upsample2x expects [N,C,H,W]");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Buffer out(planes * 4 * h * w);
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
  }
  return Tensor::make({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(out), "upsample2x", {x},
                      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                        return {downsample_sum2x(g)};
                      });
}

Tensor downsample_sum2x(const Tensor& x) {
  if (x.rank() != 4 || x.dim(2) % 2 || x.dim(3) % 2) {
    throw DimensionError("downsample_sum2x expects [N,C,H,W] with even H and W");
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Buffer out(planes * h * w, 0.0);
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * 4 * h * w;
    double* dst = out.data() + p * h * w;
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
  }
  return Tensor::make({x.dim(0), x.dim(1), h, w}, std::move(out), "downsample_sum2x", {x},
                      [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                        return {upsample2x(g)};
                      });
}

// ---- differentiation ----------------------------------------------------------

namespace {

// Runs the reverse sweep. `keep` selects which node ids survive in the result;
// an empty predicate keeps every leaf.
GradientMap reverse_sweep(const Tensor& loss, bool create_graph,
                          const std::unordered_set<std::uint64_t>* keep) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
  }
  GradientMap result;
  if (!loss.requires_grad()) return result;

  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<std::uint64_t> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node()};
  seen.insert(loss.id());
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : node->inputs) {
      if (in.defined() && in.requires_grad() && seen.insert(in.id()).second) {
        stack.push_back(in.node());
      }
    }
    order.push_back(std::move(node));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  GradModeGuard mode(create_graph);
  GradientMap pending;
  pending[loss.id()] = Tensor::ones(loss.shape());

  for (const auto& node : order) {
    auto it = pending.find(node->id);
    if (it == pending.end()) continue;
    Tensor g = std::move(it->second);
    pending.erase(it);
    const bool is_leaf = !node->backward;
    if (keep ? keep->count(node->id) > 0 : is_leaf) result[node->id] = g;
    if (is_leaf) continue;

    auto grads = node->backward(Tensor::from_node(node), g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const auto& in = node->inputs[i];
      if (i >= grads.size() || !grads[i].defined() || !in.requires_grad()) continue;
      if (grads[i].shape() != in.shape()) {
        throw DimensionError("internal: gradient shape " + shape_str(grads[i].shape()) +
                             " for input " + shape_str(in.shape()) + " of op " + node->op);
      }
      auto slot = pending.find(in.id());
      if (slot == pending.end()) {
        pending.emplace(in.id(), grads[i]);
      } else {
        slot->second = add(slot->second, grads[i]);
      }
    }
  }
  return result;
}

}  // namespace

GradientMap backward(const Tensor& loss, bool create_graph) {
  return reverse_sweep(loss, create_graph, nullptr);
}

std::vector<Tensor> grad(const Tensor& loss, const std::vector<Tensor>& inputs,
                         bool create_graph) {
  std::unordered_set<std::uint64_t> keep;
  for (const auto& in : inputs) keep.insert(in.id());
  auto map = reverse_sweep(loss, create_graph, &keep);
  std::vector<Tensor> out;
  out.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = map.find(in.id());
    out.push_back(it != map.end() ? it->second : Tensor::zeros(in.shape()));
  }
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                  double h) {
  Tensor x = point.as_leaf(true);
  Tensor y = f(x);
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  const auto analytic = grad(y, {x})[0].to_vector();

  auto base = point.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from(point.shape(), std::move(plus))).item();
    const double fm = f(Tensor::from(point.shape(), std::move(minus))).item();
    const double numeric = (fp - fm) / (2.0 * h);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace dgan
