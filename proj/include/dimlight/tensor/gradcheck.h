#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dimlight/tensor/tensor.h"

namespace dimlight::gradcheck {

/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
double relative_error(double analytic, double numeric);

struct Options {
  double step = 1e-4;
  /// Entries probed per tensor; 0 probes every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct Report {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  /// Human-readable location of the worst entry ("tensor 2, index 17").
  std::string worst;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Compares reverse-mode gradients of a scalar loss against central finite
/// differences (f(v + h) - f(v - h)) / 2h, evaluated in 64-bit.
///
/// `loss` must rebuild the loss from the current values of `wrt` on every
/// call. The tensors in `wrt` are marked as requiring gradients; their values
/// are restored after probing.
Report check(const std::string& name, const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> wrt,
             const Options& options = {});

}  // namespace dimlight::gradcheck
