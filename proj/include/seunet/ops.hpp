#pragma once

// Differentiable operators. Each function computes its forward value eagerly and,
// when recording, registers the matching vector-Jacobian product on the active tape.
// FeatureMaps are (batch, channels, height, width); TokenSequences are
// (batch, tokens, embedding).

#include <cstdint>
#include <vector>

#include "seunet/autograd.hpp"
#include "seunet/tensor.hpp"

namespace seunet {

enum class Mode { kTrain, kEval };

/// Square-kernel convolution geometry.
struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 3;
  Index stride = 1;
  Index padding = 0;
  bool has_bias = true;

  void validate() const;
  /// floor((extent - kernel + 2*padding) / stride) + 1
  Index conv_output_extent(Index extent) const;
  /// (extent - 1)*stride - 2*padding + kernel
  Index transposed_output_extent(Index extent) const;
};

/// Running statistics and hyperparameters of a batch normalisation layer.
/// The learned scale and shift live in Parameters owned by the layer.
template <typename T>
struct NormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.1);

  explicit NormState(Index channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

enum class Activation { kRelu, kGelu, kSigmoid };

/// Thread-local instrumentation for attention: how many query-key scores were formed.
struct AttentionStats {
  std::int64_t score_entries = 0;
  std::int64_t head_evaluations = 0;
};
AttentionStats& attention_stats();
void reset_attention_stats();

namespace ops {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);

template <typename T> Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T> Var<T> permute(const Var<T>& a, const std::vector<Index>& order);
/// Swaps the two trailing axes.
template <typename T> Var<T> transpose_last(const Var<T>& a);

/// Batched matrix product [.., m, k]·[.., k, n]; batch axes broadcast numpy-style.
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);

template <typename T> Var<T> relu(const Var<T>& x);
/// Exact form x·Φ(x).
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> activation(const Var<T>& x, Activation kind);

template <typename T> Var<T> softmax_lastdim(const Var<T>& x);

/// Per-token affine map x·W + b with W of shape [d_in, d_out]. `bias` may be undefined.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Normalises over the trailing axis, then applies gamma/beta of shape [d].
template <typename T>
Var<T> layernorm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T epsilon = T(1e-5));

/// Cross-correlation with zero padding. weight [C_out, C_in, E, E], bias [C_out] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias);

/// Adjoint of conv2d. weight [C_in, C_out, E, E], bias [C_out] or undefined.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const ConvSpec& spec, const Var<T>& weight, const Var<T>& bias);

/// 2×2 window, stride 2. Gradient goes to the first maximum of each window.
template <typename T> Var<T> maxpool2d(const Var<T>& x);

/// Train mode uses batch statistics and updates `state`; eval mode uses the running statistics.
template <typename T>
Var<T> batchnorm2d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormState<T>& state, Mode mode);

/// Integer-factor bilinear upsampling, half-pixel centres, edge clamped.
template <typename T> Var<T> bilinear_resize(const Var<T>& x, Index factor);

template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// softmax(q·kᵀ/√d)·v over the two trailing axes; leading axes must agree exactly.
/// q [.., N, d], k [.., M, d], v [.., M, d_v]. Probabilities are recomputed in backward
/// instead of stored, and very long sequences are processed in row blocks.
template <typename T>
Var<T> scaled_dot_product_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

/// The same computation spelled out with matmul / scale / softmax_lastdim.
template <typename T>
Var<T> attention_reference(const Var<T>& q, const Var<T>& k, const Var<T>& v);

/// Attention probabilities softmax(q·kᵀ/√d), for inspection only.
template <typename T> Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k);

}  // namespace ops

namespace kernels {

/// Numerically stable row softmax; `in` and `out` may alias.
template <typename T> void softmax_rows(const T* in, T* out, Index rows, Index cols);

/// Samples an `in` extent at `out` positions with half-pixel centres.
struct AxisSample {
  Index lo;
  Index hi;
  double frac;
};
std::vector<AxisSample> bilinear_axis(Index in, Index out);

/// Non-differentiable bilinear resize of a (C, H, W) or (B, C, H, W) tensor to arbitrary extents.
template <typename T> Tensor<T> resize_bilinear(const Tensor<T>& x, Index out_h, Index out_w);
/// Nearest-neighbour resize, same layout rules as resize_bilinear.
template <typename T> Tensor<T> resize_nearest(const Tensor<T>& x, Index out_h, Index out_w);

}  // namespace kernels

}  // namespace seunet
