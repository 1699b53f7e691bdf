#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dimlight/tensor/gradcheck.h"

namespace dimlight::model {

inline constexpr double kGradientTolerance = 1e-3;

/// 64-bit finite-difference checks of every differentiable op, the scan
/// kernels, and a C=8 network on a 16x16 input. Operand values are drawn
/// from `seed` and kept away from the kinks of abs and channel_max.
/// `progress` sees each report as it completes.
std::vector<gradcheck::Report> gradient_suite(std::uint64_t seed,
                                              const std::function<void(const gradcheck::Report&)>& progress = {});

}  // namespace dimlight::model
