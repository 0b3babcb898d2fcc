#pragma once

// Building blocks of the diagonal-attention generator.
//
// Feature maps appear in two layouts. The matrix layout X in R^{HW x C} (one
// row per pixel, one column per channel) is what the algebra is stated in and
// is what the single-instance functions below accept. The batched networks
// work on [N,C,H,W] tensors through the *_nchw variants, which compute exactly
// the same per-instance maps.

#include <cstddef>
#include <vector>

#include "dgan/rng.hpp"
#include "dgan/tensor.hpp"

namespace dgan::layers {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInstanceNormEps = 1e-8;

struct AdaINParams {
  Tensor scale;  // diagonal of T, [C] (or [N,C] for batched use)
  Tensor bias;   // rows of R, [C] (or [N,C])
  double eps = kInstanceNormEps;
};

struct DiffAttentionMap {
  Tensor d;  // [H,W] or [N,H,W], entries in (0,1)
  std::size_t source_layer = 0;
};

struct DATParams {
  Tensor beta;        // scalar
  Tensor map_weight;  // [HW, dim_c]
  Tensor map_bias;    // [HW]
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Affine layer with weight stored as [out, in].
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct MappingNet {
  std::vector<Linear> layers;

  std::size_t input_width() const;
  std::size_t output_width() const;
};

/// x [N,in] -> [N,out].
Tensor linear(const Tensor& x, const Linear& layer);

/// Instance-normalise every column of X [HW,C] and re-affine it with the
/// style-driven scale and bias.
Tensor adain_forward(const Tensor& x, const AdaINParams& params);
/// x [N,C,H,W]; scale/bias [N,C] or [C].
Tensor adain_nchw(const Tensor& x, const AdaINParams& params);

/// d = sigmoid(W c + b) reshaped row-major to H x W. c is [dim_c] (gives an
/// [H,W] map) or [N,dim_c] (gives [N,H,W]).
DiffAttentionMap attention_map(const Tensor& c, const DATParams& params,
                               std::size_t source_layer = 0);

/// y_i = (1 + beta d_i) x_i for every pixel row of X [HW,C].
Tensor dat_forward(const Tensor& x, const DiffAttentionMap& d, const Tensor& beta);
/// x [N,C,H,W], d [N,H,W] or [H,W].
Tensor dat_nchw(const Tensor& x, const Tensor& d, const Tensor& beta);

/// A X T + R with A = I + beta diag(d), T = diag(scale), R = bias rows.
Tensor combined_transform(const Tensor& x, const DiffAttentionMap& d, const Tensor& beta,
                          const AdaINParams& adain);

/// MLP with leaky-ReLU(0.2) between layers and no activation after the last.
Tensor mapping_forward(const Tensor& z, const MappingNet& net);

/// Y = X + noise (x) scale. X [HW,C], noise [HW], scale [C].
Tensor noise_inject(const Tensor& x, const Tensor& noise, const Tensor& scale);
/// x [N,C,H,W], noise [N,H,W], scale [C].
Tensor noise_inject_nchw(const Tensor& x, const Tensor& noise, const Tensor& scale);

/// Random MLP of the given layer widths, fan-in scaled.
MappingNet make_mapping_net(const std::vector<std::size_t>& widths, Rng& rng,
                            bool requires_grad = true);

}  // namespace dgan::layers
