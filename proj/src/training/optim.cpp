#include "dimlight/training/optim.h"

#include <cmath>
#include <numbers>

#include "dimlight/errors.h"
#include "dimlight/tensor/ops.h"

namespace dimlight::training {

Tensor<float> mae_loss(const Tensor<float>& pred, const Tensor<float>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae_loss: prediction " + to_string(pred.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  return ops::mean(ops::abs(ops::sub(pred, target)));
}

AdamState AdamState::zeros_like(const std::vector<Tensor<float>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(const std::vector<Tensor<float>>& params, AdamState& state, double lr, const AdamOptions& options) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (state.m[i].shape() != params[i].shape() || state.v[i].shape() != params[i].shape()) {
      throw ContractError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(options.beta1);
  const float b2 = static_cast<float>(options.beta2);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(options.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(options.beta2, t)));
  const float step = static_cast<float>(lr);
  const float eps = static_cast<float>(options.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<float> p = params[i];
    auto w = p.data();
    auto g = p.grad();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step * (m[j] * c1) / (std::sqrt(v[j] * c2) + eps);
    }
  }
}

double cosine_lr(std::size_t iter, std::size_t total, double lr_init, double lr_min) {
  if (iter >= total) return lr_min;
  const double c = std::cos(std::numbers::pi * static_cast<double>(iter) / static_cast<double>(total));
  return lr_init - 0.5 * (lr_init - lr_min) * (1.0 - c);
}

}  // namespace dimlight::training
