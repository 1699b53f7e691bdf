#pragma once

#include <cstdint>
#include <random>
#include <utility>

#include "dimlight/tensor/tensor.h"

namespace dimlight::data {

struct DegradeParams {
  double gamma = 2.5;
  double scale = 0.5;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;
};

/// low = clamp(high^gamma * scale + N(0, sigma^2), 0, 1) with independent
/// noise per value, deterministic in params.seed.
Tensor<float> synth_degrade(const Tensor<float>& high, const DegradeParams& params);

/// Inclusive ranges the per-image degradation parameters are drawn from.
struct DegradeRanges {
  std::pair<double, double> gamma{2.0, 3.5};
  std::pair<double, double> scale{0.3, 0.7};
  std::pair<double, double> noise_sigma{0.01, 0.05};

  /// Throws ConfigError unless lo <= hi, gamma >= 1, 0 < scale <= 1, sigma >= 0.
  void validate() const;
};

DegradeParams sample_degrade(const DegradeRanges& ranges, std::mt19937_64& rng);

/// Procedural clean image (1, 3, h, w): a colour gradient with soft-edged,
/// striped ellipses and rectangles. Deterministic in seed.
Tensor<float> render_scene(std::size_t h, std::size_t w, std::uint64_t seed);

}  // namespace dimlight::data
