#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dimlight/tensor/tensor.h"

namespace dimlight::sscan {

/// Step sizes below which the zero-order-hold input gain switches to its
/// series expansion.
inline constexpr double kSeriesThreshold = 1e-4;

/// State-space parameters of one scan direction with diagonal state matrix.
///
/// Shapes, for d channels and m states:
///   a_log       (d, m, 1, 1)  stores log(-A), so A = -exp(a_log) < 0
///   d_skip      (1, d, 1, 1)  feedthrough gain D
///   delta_bias  (1, d, 1, 1)  offset P inside the step-size selection
///   proj_delta  (1, d, 1, 1)  rank-1 map channels -> 1 for the step size
///   proj_b      (m, d, 1, 1)  channels -> m input selection
///   proj_c      (m, d, 1, 1)  channels -> m output selection
template <typename T>
struct SSMParams {
  Tensor<T> a_log;
  Tensor<T> d_skip;
  Tensor<T> delta_bias;
  Tensor<T> proj_delta;
  Tensor<T> proj_b;
  Tensor<T> proj_c;

  static SSMParams zeros(std::size_t channels, std::size_t state_size);
  std::size_t channels() const { return d_skip.channels(); }
  std::size_t state_size() const { return a_log.channels(); }
  /// Throws DimensionError when the six tensors disagree on d or m.
  void validate() const;
  std::vector<Tensor<T>*> tensors();
};

inline constexpr std::size_t kDirections = 4;

/// Independent parameter groups for the four cross-scan directions.
template <typename T>
using CrossScanParams = std::array<SSMParams<T>, kDirections>;

/// Selected, input-dependent scan operands. Sequences use the canonical
/// (batch, channels, h, w) layout; the scan visits spatial positions in the
/// order supplied alongside (identity for 1-D sequences stored as (b, c, 1, L)).
template <typename T>
struct ScanInputs {
  Tensor<T> u;      // (b, d, h, w)
  Tensor<T> delta;  // (b, d, h, w), strictly positive
  Tensor<T> b_sel;  // (b, m, h, w)
  Tensor<T> c_sel;  // (b, m, h, w)
};

template <typename T>
struct Discretized {
  T a_bar;
  T b_bar;
};

/// Zero-order hold for one diagonal entry:
/// A_bar = exp(delta A), B_bar = (exp(delta A) - 1) / A * B, switching to
/// delta B (1 + delta A / 2) when |delta A| < kSeriesThreshold.
/// Throws ContractError for delta <= 0 or A >= 0.
template <typename T>
Discretized<T> discretize(T delta, T a, T b);

/// delta = softplus(P + f_A(x)) broadcast to every channel, B = f_B(x),
/// C = f_C(x). Differentiable.
template <typename T>
ScanInputs<T> selection(const Tensor<T>& x, const SSMParams<T>& params);

/// Reference recurrence, one position at a time:
///   h_t = A_bar h_{t-1} + B_bar u_t,  y_t = C_t h_t + D u_t + bias_t,  h_0 = 0.
/// An empty order means row-major identity order. Not differentiable.
template <typename T>
Tensor<T> selective_scan_seq(const ScanInputs<T>& in, const SSMParams<T>& params, const Tensor<T>& local_bias = {},
                             std::span<const std::uint32_t> order = {});

/// Same recurrence as selective_scan_seq, processed in blocks of positions
/// with the state carried across block boundaries and the inner loops
/// vectorized over channels and states. Differentiable in every operand.
template <typename T>
Tensor<T> selective_scan_fast(const ScanInputs<T>& in, const SSMParams<T>& params,
                              const Tensor<T>& local_bias = {}, std::span<const std::uint32_t> order = {});

/// Visiting orders of the four scan directions over an h x w grid:
/// 0 row-major, 1 reversed row-major, 2 column-major, 3 reversed column-major.
std::array<std::vector<std::uint32_t>, kDirections> cross_scan_orders(std::size_t h, std::size_t w);

/// Flattens x (b, c, h, w) into the four directional sequences (b, c, 1, h*w).
template <typename T>
std::array<Tensor<T>, kDirections> cross_scan_2d(const Tensor<T>& x);

/// Inverse-permutes each directional sequence back to the grid and sums them.
template <typename T>
Tensor<T> cross_merge_2d(const std::array<Tensor<T>, kDirections>& seqs, std::size_t h, std::size_t w);

enum class ScanMode {
  kFull,      // selective scan in all four directions
  kSkipOnly,  // recurrence disabled, only the D feedthrough remains
};

/// Four-direction selective scan over a feature grid. Each direction runs
/// selection and scan with its own parameters and a quarter of local_bias;
/// the four outputs are returned to grid layout and summed (plain sum), so
/// the result carries local_bias exactly once.
template <typename T>
Tensor<T> ssm_2d(const Tensor<T>& x, const CrossScanParams<T>& params, const Tensor<T>& local_bias = {},
                 ScanMode mode = ScanMode::kFull);

}  // namespace dimlight::sscan
