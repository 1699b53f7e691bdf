#include "dimlight/data/synth.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "dimlight/errors.h"
#include "dimlight/values.h"

namespace dimlight::data {

Tensor<float> synth_degrade(const Tensor<float>& high, const DegradeParams& params) {
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor<float> low(high.shape());
  auto src = high.data();
  auto dst = low.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    double v = std::pow(static_cast<double>(src[i]), params.gamma) * params.scale;
    if (params.noise_sigma > 0.0) v += params.noise_sigma * noise(rng);
    dst[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return low;
}

void DegradeRanges::validate() const {
  auto check = [](const char* key, std::pair<double, double> r) {
    if (!(r.first <= r.second)) {
      throw ConfigError(std::string(key) + " range must satisfy lower <= upper, got " +
                        values::format_double(r.first) + "," + values::format_double(r.second));
    }
  };
  check("gamma", gamma);
  check("scale", scale);
  check("sigma", noise_sigma);
  if (gamma.first < 1.0) throw ConfigError("gamma range must stay >= 1 (darkening)");
  if (!(scale.first > 0.0) || scale.second > 1.0) throw ConfigError("scale range must lie in (0, 1]");
  if (noise_sigma.first < 0.0) throw ConfigError("sigma range must be non-negative");
}

DegradeParams sample_degrade(const DegradeRanges& ranges, std::mt19937_64& rng) {
  auto draw = [&rng](std::pair<double, double> r) {
    return r.first == r.second ? r.first : std::uniform_real_distribution<double>(r.first, r.second)(rng);
  };
  DegradeParams p;
  p.gamma = draw(ranges.gamma);
  p.scale = draw(ranges.scale);
  p.noise_sigma = draw(ranges.noise_sigma);
  p.seed = rng();
  return p;
}

Tensor<float> render_scene(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto colour = [&] { return std::array<double, 3>{0.1 + 0.85 * u(rng), 0.1 + 0.85 * u(rng), 0.1 + 0.85 * u(rng)}; };
  const double hh = static_cast<double>(h), ww = static_cast<double>(w);

  std::vector<double> img(3 * h * w);
  const auto c0 = colour(), c1 = colour();
  const double angle = 2.0 * std::numbers::pi * u(rng);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double t = 0.5 + 0.5 * ((x / ww - 0.5) * dx + (y / hh - 0.5) * dy) * std::numbers::sqrt2;
      for (std::size_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = c0[c] + (c1[c] - c0[c]) * t;
    }
  }

  const int shapes = 5 + static_cast<int>(u(rng) * 6);
  for (int s = 0; s < shapes; ++s) {
    const bool ellipse = u(rng) < 0.5;
    const double cy = u(rng) * hh, cx = u(rng) * ww;
    const double ry = (0.08 + 0.25 * u(rng)) * hh, rx = (0.08 + 0.25 * u(rng)) * ww;
    const auto col = colour();
    const double freq = 2.0 * std::numbers::pi / (4.0 + 12.0 * u(rng));
    const double stripe = 0.15 * u(rng);
    const double phase = 2.0 * std::numbers::pi * u(rng);
    const double rot = std::numbers::pi * u(rng);
    const double alpha = 0.6 + 0.4 * u(rng);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double py = (y - cy) / ry, px = (x - cx) / rx;
        // Signed distance-like value in units of the smaller radius, <0 inside.
        const double d = ellipse ? (std::sqrt(px * px + py * py) - 1.0) : (std::max(std::abs(px), std::abs(py)) - 1.0);
        const double edge = d * std::min(rx, ry);
        const double cover = alpha * std::clamp(0.5 - edge / 1.5, 0.0, 1.0);
        if (cover <= 0.0) continue;
        const double tex = 1.0 + stripe * std::sin(freq * (x * std::cos(rot) + y * std::sin(rot)) + phase);
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = img[(c * h + y) * w + x];
          v = v * (1.0 - cover) + std::clamp(col[c] * tex, 0.0, 1.0) * cover;
        }
      }
    }
  }
  Tensor<float> out(Shape{1, 3, h, w});
  for (std::size_t i = 0; i < img.size(); ++i) out.data()[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return out;
}

}  // namespace dimlight::data
