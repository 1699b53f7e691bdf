#include "dimlight/training/sampler.h"

#include <algorithm>

#include "dimlight/errors.h"

namespace dimlight::training {

Tensor<float> dihedral(const Tensor<float>& patch, unsigned transform) {
  const auto [n, c, h, w] = patch.shape();
  if (h != w) throw DimensionError("dihedral transforms need a square patch, got " + to_string(patch.shape()));
  const std::size_t s = h;
  const bool flip = transform >= 4;
  const unsigned turns = transform % 4;
  Tensor<float> out(patch.shape());
  for (std::size_t p = 0; p < n * c; ++p) {
    const float* src = patch.data().data() + p * s * s;
    float* dst = out.data().data() + p * s * s;
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        // Output (y, x) pulls from the source location that lands there.
        std::size_t sy = y, sx = x;
        for (unsigned t = 0; t < turns; ++t) {
          const std::size_t ny = sx, nx = s - 1 - sy;
          sy = ny;
          sx = nx;
        }
        if (flip) sx = s - 1 - sx;
        dst[y * s + x] = src[sy * s + sx];
      }
    }
  }
  return out;
}

namespace {

Tensor<float> crop_patch(const Tensor<float>& img, std::size_t y0, std::size_t x0, std::size_t p) {
  const auto [n, c, h, w] = img.shape();
  Tensor<float> out(Shape{1, c, p, p});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < p; ++y) {
      const float* src = img.data().data() + (k * h + y0 + y) * w + x0;
      std::copy(src, src + p, out.data().data() + (k * p + y) * p);
    }
  }
  return out;
}

}  // namespace

Batch sample_batch(const std::vector<data::PairedSample>& dataset, std::mt19937_64& rng, std::size_t batch_size,
                   std::size_t patch_size) {
  if (dataset.empty()) throw DataError("cannot sample from an empty dataset");
  for (const auto& s : dataset) {
    if (s.low.height() < patch_size || s.low.width() < patch_size) {
      throw DataError("image pair '" + s.id + "' is " + std::to_string(s.low.height()) + "x" +
                      std::to_string(s.low.width()) + ", smaller than the " + std::to_string(patch_size) +
                      " pixel patch");
    }
  }
  const std::size_t p = patch_size;
  Batch b{Tensor<float>(Shape{batch_size, 3, p, p}), Tensor<float>(Shape{batch_size, 3, p, p}), {}, {}};
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<unsigned> pick_t(0, 7);
  const std::size_t plane = 3 * p * p;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t idx = pick(rng);
    const auto& s = dataset[idx];
    const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, s.low.height() - p)(rng);
    const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, s.low.width() - p)(rng);
    const unsigned t = pick_t(rng);
    const auto lo = dihedral(crop_patch(s.low, y0, x0, p), t);
    const auto hi = dihedral(crop_patch(s.high, y0, x0, p), t);
    std::copy(lo.data().begin(), lo.data().end(), b.low.data().begin() + i * plane);
    std::copy(hi.data().begin(), hi.data().end(), b.high.data().begin() + i * plane);
    b.source.push_back(idx);
    b.transform.push_back(t);
  }
  return b;
}

}  // namespace dimlight::training
