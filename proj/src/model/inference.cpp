#include "dimlight/model/inference.h"

#include "dimlight/errors.h"

namespace dimlight::model {
namespace {

// Index into [0, n) reflected about both borders.
std::size_t mirror(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

Tensor<float> pad_reflect(const Tensor<float>& x, std::size_t multiple) {
  if (multiple == 0) throw ContractError("pad_reflect: multiple must be positive");
  const auto [n, c, h, w] = x.shape();
  const std::size_t ph = round_up(h, multiple), pw = round_up(w, multiple);
  if (ph == h && pw == w) return x;
  Tensor<float> out(Shape{n, c, ph, pw});
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = x.data().data() + p * h * w;
    float* dst = out.data().data() + p * ph * pw;
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = mirror(y, h);
      for (std::size_t xx = 0; xx < pw; ++xx) dst[y * pw + xx] = src[sy * w + mirror(xx, w)];
    }
  }
  return out;
}

Tensor<float> crop(const Tensor<float>& x, std::size_t h, std::size_t w) {
  const auto [n, c, xh, xw] = x.shape();
  if (h > xh || w > xw) throw DimensionError("crop window larger than " + dimlight::to_string(x.shape()));
  if (h == xh && w == xw) return x;
  Tensor<float> out(Shape{n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = x.data().data() + (p * xh + y) * xw;
      std::copy(src, src + w, out.data().data() + (p * h + y) * w);
    }
  }
  return out;
}

Tensor<float> enhance(const Network<float>& net, const Tensor<float>& low) {
  return crop(net.forward(pad_reflect(low, 4)), low.height(), low.width());
}

}  // namespace dimlight::model
