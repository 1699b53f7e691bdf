#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dimlight/model/config.h"
#include "dimlight/sscan/scan.h"
#include "dimlight/tensor/tensor.h"

namespace dimlight::model {

/// Weight plus optional bias. Linear layers store weights as (out, in, 1, 1).
template <typename T>
struct ConvParams {
  Tensor<T> w;
  Tensor<T> b;
  bool defined() const { return w.defined(); }
};

template <typename T>
struct LessmParams {
  ConvParams<T> in_proj;    // linear C' -> 2 * expand * C'
  ConvParams<T> x_proj;     // linear on branch 1
  ConvParams<T> dw;         // depthwise 3x3 on branch 1
  sscan::CrossScanParams<T> ssm;
  ConvParams<T> bias_conv;  // 3x3 prior -> expand * C'; undefined without local bias
  Tensor<T> ln_g, ln_b;     // after the scan
  ConvParams<T> z_proj;     // linear on branch 2
  ConvParams<T> out_proj;   // linear expand * C' -> C'
};

template <typename T>
struct IrskParams {
  std::vector<ConvParams<T>> dw;  // cascaded depthwise convs, one per kernel size
  ConvParams<T> gate;             // 3x3 prior -> K * C'; undefined without prior
  ConvParams<T> fuse_dw;          // depthwise 3x3 on the fused map
  ConvParams<T> out;              // 1x1 C' -> C'
};

template <typename T>
struct GlssbParams {
  Tensor<T> ln1_g, ln1_b;
  LessmParams<T> lessm;
  Tensor<T> ln2_g, ln2_b;
  IrskParams<T> irsk;  // empty when IRSK is disabled
};

template <typename T>
struct NetParams {
  std::array<ConvParams<T>, kScales> prior;  // 3x3 5 -> C, then stride-2 convs to 2C, 4C
  ConvParams<T> stem;                        // 3x3, 3 -> C
  std::array<std::vector<GlssbParams<T>>, kScales - 1> enc;
  std::array<ConvParams<T>, kScales - 1> down;  // stride-2 3x3, doubling width
  std::vector<GlssbParams<T>> mid;
  std::array<ConvParams<T>, kScales - 1> up;    // transposed 2x2 stride 2, halving width
  std::array<ConvParams<T>, kScales - 1> fuse;  // 1x1 over [upsampled, skip]
  std::array<std::vector<GlssbParams<T>>, kScales - 1> dec;
  ConvParams<T> head;  // 3x3, C -> 3
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

/// Illumination prior: concat(L, mean_c(L), max_c(L)), (b, 5, h, w).
template <typename T>
Tensor<T> compute_prior(const Tensor<T>& low);

/// Prior features at the three scales, widths C, 2C, 4C.
template <typename T>
std::array<Tensor<T>, kScales> prior_pyramid(const Tensor<T>& lp, const std::array<ConvParams<T>, kScales>& convs);

/// Local-enhanced scan module. `f` is already layer-normalized. `prior` may be
/// undefined, in which case no local bias is added.
template <typename T>
Tensor<T> lessm_forward(const Tensor<T>& f, const Tensor<T>& prior, const LessmParams<T>& p, bool scan_enabled);

/// Prior-gated cascade of depthwise convs. Without a gate conv (or prior) the
/// gates are 1.
template <typename T>
Tensor<T> irsk_forward(const Tensor<T>& x, const Tensor<T>& prior, const IrskParams<T>& p);

/// M = LESSM(LN(F)) + F; out = IRSK(LN(M)) + M, the second step skipped when
/// the block has no IRSK parameters.
template <typename T>
Tensor<T> glssb_forward(const Tensor<T>& f, const Tensor<T>& prior, const GlssbParams<T>& p, bool scan_enabled);

struct InitOptions {
  // Identity start: N = L for a fresh implicit-mode model.
  bool zero_head = true;
};

template <typename T>
class Network {
 public:
  explicit Network(ModelConfig config);

  /// Deterministic in (seed, options) and independent of T up to rounding:
  /// values are drawn in double and cast.
  void init(std::uint64_t seed, const InitOptions& options = {});

  /// low: (b, 3, h, w) with h, w divisible by 4. Differentiable.
  Tensor<T> forward(const Tensor<T>& low) const;

  const ModelConfig& config() const { return config_; }
  NetParams<T>& params() { return params_; }
  const NetParams<T>& params() const { return params_; }

  /// Every trainable tensor with a stable hierarchical name, in a fixed order.
  std::vector<NamedTensor<T>> parameters() const;
  std::size_t parameter_count() const;

  template <typename U>
  Network<U> cast() const;

 private:
  ModelConfig config_;
  NetParams<T> params_;
};

/// Parameter total of a config.
std::size_t count_parameters(const ModelConfig& config);

/// For the scan-free variant of `config`: input pixels that can influence an
/// output pixel p lie in [p + lo, p + hi] along each axis.
struct SupportInterval {
  long lo = 0;
  long hi = 0;
};
SupportInterval conv_support(const ModelConfig& config);

}  // namespace dimlight::model
