#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dimlight/tensor/tape.h"
#include "dimlight/tensor/tensor.h"

// Differentiable tensor operations. Every op records itself on the active
// Tape<T> when at least one input requires a gradient.
//
// Binary elementwise ops broadcast per axis: extents must be equal or one of
// them must be 1. There is no other implicit broadcasting.

namespace dimlight::ops {

// ---- elementwise ---------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
/// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// log(1 + e^x), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

// Scalar reference versions of the activations, shared by kernels and tests.
template <typename T> T sigmoid_scalar(T x);
template <typename T> T softplus_scalar(T x);
template <typename T> T gelu_scalar(T x);

// ---- reductions ----------------------------------------------------------

/// Sum of all elements, shape (1,1,1,1).
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Mean over the channel axis, shape (b,1,h,w).
template <typename T> Tensor<T> channel_mean(const Tensor<T>& x);
/// Max over the channel axis, shape (b,1,h,w). Gradient goes to the first
/// maximal channel.
template <typename T> Tensor<T> channel_max(const Tensor<T>& x);

// ---- linear maps ---------------------------------------------------------

/// Per-position projection. weight is (out, in, 1, 1); bias (1, out, 1, 1) or
/// undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {});

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// Zero-padded cross-correlation. weight is (out, in/groups, kh, kw); bias
/// (1, out, 1, 1) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {},
                 Conv2dOptions opt = {});

/// Transposed convolution without padding. weight is (in, out, k, k); the
/// output extent is (in - 1) * stride + k, so k == stride == 2 doubles it.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride);

/// Normalizes over channels independently at each (b, y, x).
/// gamma and beta are (1, c, 1, 1).
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// ---- layout --------------------------------------------------------------

/// Splits the channel axis into n equal parts.
template <typename T> std::vector<Tensor<T>> chunk(const Tensor<T>& x, std::size_t n);
/// Joins along the channel axis; all other extents must agree.
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat(std::initializer_list<Tensor<T>> parts);

/// Flattens the spatial grid in the given visiting order:
/// out(b, c, 0, t) = x(b, c, order[t] / w, order[t] % w). Output is (b, c, 1, L).
template <typename T> Tensor<T> gather_positions(const Tensor<T>& seq_or_grid, std::span<const std::uint32_t> order);
/// Inverse of gather_positions for a permutation order: writes sequence
/// element t back to grid position order[t].
template <typename T>
Tensor<T> scatter_positions(const Tensor<T>& seq, std::span<const std::uint32_t> order, std::size_t h,
                            std::size_t w);
/// Reverses the flattened spatial order (row-major).
template <typename T> Tensor<T> reverse_positions(const Tensor<T>& x);
/// Swaps the height and width axes.
template <typename T> Tensor<T> transpose_hw(const Tensor<T>& x);
/// Same data under a new shape with identical element count.
template <typename T> Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

}  // namespace dimlight::ops
