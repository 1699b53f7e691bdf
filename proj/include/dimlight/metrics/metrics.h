#pragma once

#include "dimlight/tensor/tensor.h"

namespace dimlight::metrics {

constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over all values jointly (dynamic range 1). Capped at
/// kPsnrCap, which is also the result for identical inputs.
double psnr(const Tensor<float>& pred, const Tensor<float>& target);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 = 0.01, K2 = 0.03, range 1)
/// over valid windows only, averaged over every window, channel and image.
/// Throws DataError when an image is smaller than the window.
double ssim(const Tensor<float>& pred, const Tensor<float>& target);

}  // namespace dimlight::metrics
