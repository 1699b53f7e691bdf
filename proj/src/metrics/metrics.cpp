#include "dimlight/metrics/metrics.h"

#include <array>
#include <cmath>
#include <vector>

#include "dimlight/errors.h"

namespace dimlight::metrics {
namespace {

constexpr std::size_t kWin = 11;

void check_pair(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shapes differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWin; ++i) {
    const double d = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Separable valid-region filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                 const std::array<double, kWin>& g) {
  const std::size_t oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWin; ++k) acc += g[k] * in[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kWin; ++k) acc += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Tensor<float>& pred, const Tensor<float>& target) {
  check_pair(pred, target, "psnr");
  if (pred.numel() == 0) throw DataError("psnr of an empty image");
  double sse = 0.0;
  auto a = pred.data();
  auto b = target.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor<float>& pred, const Tensor<float>& target) {
  check_pair(pred, target, "ssim");
  const auto [n, c, h, w] = pred.shape();
  if (h < kWin || w < kWin) {
    throw DataError("ssim needs images of at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  const auto g = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t plane = h * w;
  std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = pred.data()[p * plane + i];
      y[i] = target.data()[p * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
    const auto exx = filter_valid(xx, h, w, g), eyy = filter_valid(yy, h, w, g), exy = filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i];
      const double vy = eyy[i] - my[i] * my[i];
      const double cxy = exy[i] - mx[i] * my[i];
      total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    count += mx.size();
  }
  return total / static_cast<double>(count);
}

}  // namespace dimlight::metrics
