#pragma once

#include <cstdint>
#include <vector>

#include "dimlight/tensor/tensor.h"

namespace dimlight::training {

/// mean |pred - target|. Shapes must match exactly. Differentiable.
Tensor<float> mae_loss(const Tensor<float>& pred, const Tensor<float>& target);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  std::uint64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(const std::vector<Tensor<float>>& params);
};

/// One bias-corrected Adam update of every parameter from its gradient
/// buffer. Throws ContractError when a parameter has no gradient or the
/// state does not mirror the parameter shapes.
void adam_step(const std::vector<Tensor<float>>& params, AdamState& state, double lr, const AdamOptions& options);

/// lr_min + (lr_init - lr_min) (1 + cos(pi iter / total)) / 2, reaching lr_init
/// at 0 and lr_min at total exactly; iterations past total give lr_min.
double cosine_lr(std::size_t iter, std::size_t total, double lr_init, double lr_min);

}  // namespace dimlight::training
