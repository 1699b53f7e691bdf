#include "dimlight/tensor/ops.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace dimlight::ops {
namespace {

template <typename T>
void check_finite([[maybe_unused]] const Tensor<T>& t, [[maybe_unused]] const char* op) {
#ifdef DIMLIGHT_CHECK_FINITE
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite value produced by ") + op);
  }
#endif
}

template <typename T, typename Fn>
void record(Tensor<T>& out, Fn&& fn) {
  record_op(out, std::forward<Fn>(fn));
}

template <typename T>
std::span<T> grad_of(const Tensor<T>& t) {
  return t.requires_grad() ? t.ensure_grad() : std::span<T>{};
}

// ---- broadcasting --------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out{};
  for (int i = 0; i < 4; ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out[i] = a[i];
    } else if (a[i] == 1) {
      out[i] = b[i];
    } else {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
  }
  return out;
}

std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  std::array<std::size_t, 4> st{s[1] * s[2] * s[3], s[2] * s[3], s[3], 1};
  for (int i = 0; i < 4; ++i) {
    if (s[i] == 1 && out[i] != 1) st[i] = 0;
  }
  return st;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const auto ta = broadcast_strides(sa, out);
  const auto tb = broadcast_strides(sb, out);
  std::size_t o = 0;
  for (std::size_t n = 0; n < out[0]; ++n) {
    for (std::size_t c = 0; c < out[1]; ++c) {
      for (std::size_t y = 0; y < out[2]; ++y) {
        const std::size_t ia = n * ta[0] + c * ta[1] + y * ta[2];
        const std::size_t ib = n * tb[0] + c * tb[1] + y * tb[2];
        for (std::size_t x = 0; x < out[3]; ++x, ++o) f(o, ia + x * ta[3], ib + x * tb[3]);
      }
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
  const Shape shape = broadcast_shape(a.shape(), b.shape(), name);
  Tensor<T> out(shape);
  auto o = out.data();
  auto da = a.data();
  auto db = b.data();
  if (a.shape() == b.shape()) {
    const std::size_t n = o.size();
    switch (kind) {
      case BinaryKind::kAdd:
        for (std::size_t i = 0; i < n; ++i) o[i] = da[i] + db[i];
        break;
      case BinaryKind::kSub:
        for (std::size_t i = 0; i < n; ++i) o[i] = da[i] - db[i];
        break;
      case BinaryKind::kMul:
        for (std::size_t i = 0; i < n; ++i) o[i] = da[i] * db[i];
        break;
    }
  } else {
    switch (kind) {
      case BinaryKind::kAdd:
        for_each_broadcast(shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = da[ia] + db[ib];
        });
        break;
      case BinaryKind::kSub:
        for_each_broadcast(shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = da[ia] - db[ib];
        });
        break;
      case BinaryKind::kMul:
        for_each_broadcast(shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
          o[i] = da[ia] * db[ib];
        });
        break;
    }
  }
  check_finite(out, name);
  if (grad_enabled<T>({&a, &b})) {
    record(out, [a, b, shape, kind](std::span<const T> g) mutable {
      auto ga = grad_of(a);
      auto gb = grad_of(b);
      auto va = a.data();
      auto vb = b.data();
      const T sign_b = kind == BinaryKind::kSub ? T(-1) : T(1);
      for_each_broadcast(shape, a.shape(), b.shape(), [&](std::size_t i, std::size_t ia, std::size_t ib) {
        if (kind == BinaryKind::kMul) {
          if (!ga.empty()) ga[ia] += g[i] * vb[ib];
          if (!gb.empty()) gb[ib] += g[i] * va[ia];
        } else {
          if (!ga.empty()) ga[ia] += g[i];
          if (!gb.empty()) gb[ib] += sign_b * g[i];
        }
      });
    });
  }
  return out;
}

// out = f(x); backward scales by df(x, out).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df, const char* name) {
  Tensor<T> out(x.shape());
  auto o = out.data();
  auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(v[i]);
  check_finite(out, name);
  if (grad_enabled<T>({&x})) {
    Tensor<T> saved = out;
    record(out, [x, saved, df](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      auto v = x.data();
      auto o = saved.data();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(v[i], o[i]);
    });
  }
  return out;
}

void require_same_outer(const Shape& a, const Shape& b, const char* op) {
  if (a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
    throw DimensionError(std::string(op) + ": extents " + to_string(a) + " and " + to_string(b) +
                         " differ outside the channel axis");
  }
}

}  // namespace

// ---- elementwise ---------------------------------------------------------

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T gelu_scalar(T x) {
  const T k = T(0.79788456080286535588);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(k * (x + T(0.044715) * x * x * x)));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kAdd, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kSub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinaryKind::kMul, "mul");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary(x, [](T v) { return -v; }, [](T, T) { return T(-1); }, "neg");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T o) { return o; }, "exp");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); }, "abs");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return sigmoid_scalar(v); }, [](T, T o) { return o * (T(1) - o); }, "sigmoid");
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      },
      "silu");
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return gelu_scalar(v); },
      [](T v, T) {
        const T k = T(0.79788456080286535588);
        const T t = std::tanh(k * (v + T(0.044715) * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * T(0.044715) * v * v);
      },
      "gelu");
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary(x, [](T v) { return softplus_scalar(v); }, [](T v, T) { return sigmoid_scalar(v); }, "softplus");
}

// ---- reductions ----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out(Shape{1, 1, 1, 1});
  T acc = T(0);
  for (T v : x.data()) acc += v;
  out.data()[0] = acc;
  check_finite(out, "sum");
  if (grad_enabled<T>({&x})) {
    record(out, [x](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      for (T& v : gx) v += g[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  const auto [nb, nc, h, w] = x.shape();
  if (nc == 0) throw DimensionError("channel_mean over zero channels");
  const std::size_t hw = h * w;
  Tensor<T> out(Shape{nb, 1, h, w});
  auto o = out.data();
  auto v = x.data();
  const T inv = T(1) / static_cast<T>(nc);
  for (std::size_t b = 0; b < nb; ++b) {
    T* orow = o.data() + b * hw;
    for (std::size_t c = 0; c < nc; ++c) {
      const T* irow = v.data() + (b * nc + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) orow[p] += irow[p];
    }
    for (std::size_t p = 0; p < hw; ++p) orow[p] *= inv;
  }
  if (grad_enabled<T>({&x})) {
    record(out, [x, nb, nc, hw, inv](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t c = 0; c < nc; ++c) {
          T* grow = gx.data() + (b * nc + c) * hw;
          const T* orow = g.data() + b * hw;
          for (std::size_t p = 0; p < hw; ++p) grow[p] += orow[p] * inv;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  const auto [nb, nc, h, w] = x.shape();
  if (nc == 0) throw DimensionError("channel_max over zero channels");
  const std::size_t hw = h * w;
  Tensor<T> out(Shape{nb, 1, h, w});
  std::vector<std::uint32_t> arg(nb * hw, 0);
  auto o = out.data();
  auto v = x.data();
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t p = 0; p < hw; ++p) o[b * hw + p] = v[b * nc * hw + p];
    for (std::size_t c = 1; c < nc; ++c) {
      const T* irow = v.data() + (b * nc + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        if (irow[p] > o[b * hw + p]) {
          o[b * hw + p] = irow[p];
          arg[b * hw + p] = static_cast<std::uint32_t>(c);
        }
      }
    }
  }
  if (grad_enabled<T>({&x})) {
    record(out, [x, arg = std::move(arg), nb, nc, hw](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      for (std::size_t b = 0; b < nb; ++b) {
        for (std::size_t p = 0; p < hw; ++p) gx[(b * nc + arg[b * hw + p]) * hw + p] += g[b * hw + p];
      }
    });
  }
  return out;
}

// ---- linear maps ---------------------------------------------------------

namespace {

// C[m, p] += sum_k A(m, k) * B[k, p] with A(m, k) = A[m * a_rs + k * a_cs].
// B and C are row-major with row length P.
template <typename T>
void gemm_acc(std::size_t M, std::size_t K, std::size_t P, const T* A, std::size_t a_rs, std::size_t a_cs,
              const T* B, T* C) {
  constexpr std::size_t kBlock = 256;
  for (std::size_t p0 = 0; p0 < P; p0 += kBlock) {
    const std::size_t pn = std::min(kBlock, P - p0);
    std::size_t m = 0;
    for (; m + 4 <= M; m += 4) {
      T* c0 = C + m * P + p0;
      T* c1 = c0 + P;
      T* c2 = c1 + P;
      T* c3 = c2 + P;
      for (std::size_t k = 0; k < K; ++k) {
        const T a0 = A[m * a_rs + k * a_cs];
        const T a1 = A[(m + 1) * a_rs + k * a_cs];
        const T a2 = A[(m + 2) * a_rs + k * a_cs];
        const T a3 = A[(m + 3) * a_rs + k * a_cs];
        const T* brow = B + k * P + p0;
#pragma omp simd
        for (std::size_t p = 0; p < pn; ++p) {
          const T bv = brow[p];
          c0[p] += a0 * bv;
          c1[p] += a1 * bv;
          c2[p] += a2 * bv;
          c3[p] += a3 * bv;
        }
      }
    }
    for (; m < M; ++m) {
      T* crow = C + m * P + p0;
      for (std::size_t k = 0; k < K; ++k) {
        const T a = A[m * a_rs + k * a_cs];
        const T* brow = B + k * P + p0;
#pragma omp simd
        for (std::size_t p = 0; p < pn; ++p) crow[p] += a * brow[p];
      }
    }
  }
}

// D[m, k] += sum_p G[m, p] * B[k, p].
template <typename T>
void gemm_dot_acc(std::size_t M, std::size_t K, std::size_t P, const T* G, const T* B, T* D) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* grow = G + m * P;
    for (std::size_t k = 0; k < K; ++k) {
      const T* brow = B + k * P;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < P; ++p) acc += grow[p] * brow[p];
      D[m * K + k] += acc;
    }
  }
}

template <typename T>
void add_row_sums(std::size_t M, std::size_t P, const T* G, T* out) {
  for (std::size_t m = 0; m < M; ++m) {
    const T* grow = G + m * P;
    T acc = T(0);
#pragma omp simd reduction(+ : acc)
    for (std::size_t p = 0; p < P; ++p) acc += grow[p];
    out[m] += acc;
  }
}

template <typename T>
void fill_rows(std::size_t M, std::size_t P, const T* values, T* C) {
  for (std::size_t m = 0; m < M; ++m) std::fill(C + m * P, C + (m + 1) * P, values[m]);
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const auto [nb, cin, h, w] = x.shape();
  const Shape& ws = weight.shape();
  if (ws[1] != cin || ws[2] != 1 || ws[3] != 1) {
    throw DimensionError("linear: weight " + to_string(ws) + " does not accept input " + to_string(x.shape()));
  }
  const std::size_t cout = ws[0];
  if (bias.defined() && bias.shape() != Shape{1, cout, 1, 1}) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " for " + std::to_string(cout) + " outputs");
  }
  const std::size_t hw = h * w;
  Tensor<T> out(Shape{nb, cout, h, w});
  auto o = out.data();
  auto v = x.data();
  auto wv = weight.data();
  for (std::size_t b = 0; b < nb; ++b) {
    T* ob = o.data() + b * cout * hw;
    if (bias.defined()) fill_rows(cout, hw, bias.data().data(), ob);
    gemm_acc(cout, cin, hw, wv.data(), cin, 1, v.data() + b * cin * hw, ob);
  }
  check_finite(out, "linear");
  if (grad_enabled<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, nb, cin, cout, hw](std::span<const T> g) mutable {
      auto gx = grad_of(x);
      auto gw = grad_of(weight);
      auto gbias = bias.defined() ? grad_of(bias) : std::span<T>{};
      auto v = x.data();
      auto wv = weight.data();
      for (std::size_t b = 0; b < nb; ++b) {
        const T* gb = g.data() + b * cout * hw;
        if (!gbias.empty()) add_row_sums(cout, hw, gb, gbias.data());
        if (!gw.empty()) gemm_dot_acc(cout, cin, hw, gb, v.data() + b * cin * hw, gw.data());
        if (!gx.empty()) gemm_acc(cin, cout, hw, wv.data(), 1, cin, gb, gx.data() + b * cin * hw);
      }
    });
  }
  return out;
}

namespace {

// Range of output columns ox whose tap ix = ox * stride + k - pad lies in [0, in).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t stride,
                                                       std::size_t k, std::size_t pad) {
  const long long s = static_cast<long long>(stride);
  const long long off = static_cast<long long>(k) - static_cast<long long>(pad);
  long long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long long hi = (static_cast<long long>(in) - 1 - off);
  hi = hi < 0 ? -1 : hi / s;
  hi = std::min(hi, static_cast<long long>(out) - 1);
  if (hi < lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi) + 1};
}

struct ConvGeometry {
  std::size_t nb, cin, h, w, cout, kh, kw, oh, ow, groups, cin_g, cout_g, stride, pad;
  std::size_t taps() const { return cin_g * kh * kw; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// col[(i, ky, kx), (oy, ox)] = x[i, oy * s + ky - pad, ox * s + kx - pad], zero outside.
template <typename T>
void im2col(const ConvGeometry& gm, const T* x, T* col) {
  const std::size_t plane = gm.oh * gm.ow;
  const std::size_t s = gm.stride;
  for (std::size_t i = 0; i < gm.cin_g; ++i) {
    const T* xp = x + i * gm.h * gm.w;
    for (std::size_t ky = 0; ky < gm.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(gm.oh, gm.h, s, ky, gm.pad);
      for (std::size_t kx = 0; kx < gm.kw; ++kx) {
        const auto [ox0, ox1] = valid_range(gm.ow, gm.w, s, kx, gm.pad);
        T* c = col + ((i * gm.kh + ky) * gm.kw + kx) * plane;
        std::fill(c, c + oy0 * gm.ow, T(0));
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          T* crow = c + oy * gm.ow;
          const T* xrow = xp + (oy * s + ky - gm.pad) * gm.w + kx - gm.pad;
          std::fill(crow, crow + ox0, T(0));
          if (s == 1) {
            std::copy(xrow + ox0, xrow + ox1, crow + ox0);
          } else {
            for (std::size_t ox = ox0; ox < ox1; ++ox) crow[ox] = xrow[ox * s];
          }
          std::fill(crow + ox1, crow + gm.ow, T(0));
        }
        std::fill(c + oy1 * gm.ow, c + plane, T(0));
      }
    }
  }
}

// Adjoint of im2col: gx += scatter(col).
template <typename T>
void col2im_acc(const ConvGeometry& gm, const T* col, T* gx) {
  const std::size_t plane = gm.oh * gm.ow;
  const std::size_t s = gm.stride;
  for (std::size_t i = 0; i < gm.cin_g; ++i) {
    T* gp = gx + i * gm.h * gm.w;
    for (std::size_t ky = 0; ky < gm.kh; ++ky) {
      const auto [oy0, oy1] = valid_range(gm.oh, gm.h, s, ky, gm.pad);
      for (std::size_t kx = 0; kx < gm.kw; ++kx) {
        const auto [ox0, ox1] = valid_range(gm.ow, gm.w, s, kx, gm.pad);
        const T* c = col + ((i * gm.kh + ky) * gm.kw + kx) * plane;
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const T* crow = c + oy * gm.ow;
          T* grow = gp + (oy * s + ky - gm.pad) * gm.w + kx - gm.pad;
          if (s == 1) {
            for (std::size_t ox = ox0; ox < ox1; ++ox) grow[ox] += crow[ox];
          } else {
            for (std::size_t ox = ox0; ox < ox1; ++ox) grow[ox * s] += crow[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dOptions opt) {
  const auto [nb, cin, h, w] = x.shape();
  const auto [cout, cin_g, kh, kw] = weight.shape();
  if (opt.groups == 0 || opt.stride == 0) throw DimensionError("conv2d: stride and groups must be positive");
  if (cin % opt.groups != 0 || cout % opt.groups != 0 || cin_g != cin / opt.groups) {
    throw DimensionError("conv2d: weight " + to_string(weight.shape()) + " with groups=" +
                         std::to_string(opt.groups) + " does not accept input " + to_string(x.shape()));
  }
  if (h + 2 * opt.padding < kh || w + 2 * opt.padding < kw) {
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{1, cout, 1, 1}) {
    throw DimensionError("conv2d: bias " + to_string(bias.shape()) + " for " + std::to_string(cout) + " outputs");
  }
  const ConvGeometry gm{nb,
                        cin,
                        h,
                        w,
                        cout,
                        kh,
                        kw,
                        (h + 2 * opt.padding - kh) / opt.stride + 1,
                        (w + 2 * opt.padding - kw) / opt.stride + 1,
                        opt.groups,
                        cin_g,
                        cout / opt.groups,
                        opt.stride,
                        opt.padding};
  const std::size_t plane = gm.oh * gm.ow;
  const std::size_t taps = gm.taps();
  Tensor<T> out(Shape{nb, cout, gm.oh, gm.ow});
  auto o = out.data();
  auto v = x.data();
  auto wv = weight.data();
  std::vector<T> col(gm.pointwise() ? 0 : taps * plane);
  for (std::size_t b = 0; b < nb; ++b) {
    T* ob = o.data() + b * cout * plane;
    if (bias.defined()) fill_rows(cout, plane, bias.data().data(), ob);
    for (std::size_t g = 0; g < gm.groups; ++g) {
      const T* xg = v.data() + (b * cin + g * cin_g) * h * w;
      const T* src = xg;
      if (!gm.pointwise()) {
        im2col(gm, xg, col.data());
        src = col.data();
      }
      gemm_acc(gm.cout_g, taps, plane, wv.data() + g * gm.cout_g * taps, taps, 1, src, ob + g * gm.cout_g * plane);
    }
  }
  check_finite(out, "conv2d");
  if (grad_enabled<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, gm](std::span<const T> g) mutable {
      auto gx = grad_of(x);
      auto gw = grad_of(weight);
      auto gbias = bias.defined() ? grad_of(bias) : std::span<T>{};
      auto v = x.data();
      auto wv = weight.data();
      const std::size_t plane = gm.oh * gm.ow;
      const std::size_t taps = gm.taps();
      std::vector<T> col(gm.pointwise() ? 0 : taps * plane);
      std::vector<T> gcol(gm.pointwise() ? 0 : taps * plane);
      for (std::size_t b = 0; b < gm.nb; ++b) {
        const T* gb = g.data() + b * gm.cout * plane;
        if (!gbias.empty()) add_row_sums(gm.cout, plane, gb, gbias.data());
        for (std::size_t grp = 0; grp < gm.groups; ++grp) {
          const std::size_t xoff = (b * gm.cin + grp * gm.cin_g) * gm.h * gm.w;
          const T* gg = gb + grp * gm.cout_g * plane;
          const T* wg = wv.data() + grp * gm.cout_g * taps;
          if (!gw.empty()) {
            const T* src = v.data() + xoff;
            if (!gm.pointwise()) {
              im2col(gm, src, col.data());
              src = col.data();
            }
            gemm_dot_acc(gm.cout_g, taps, plane, gg, src, gw.data() + grp * gm.cout_g * taps);
          }
          if (!gx.empty()) {
            if (gm.pointwise()) {
              gemm_acc(taps, gm.cout_g, plane, wg, 1, taps, gg, gx.data() + xoff);
            } else {
              std::fill(gcol.begin(), gcol.end(), T(0));
              gemm_acc(taps, gm.cout_g, plane, wg, 1, taps, gg, gcol.data());
              col2im_acc(gm, gcol.data(), gx.data() + xoff);
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride) {
  const auto [nb, cin, h, w] = x.shape();
  const auto [wcin, cout, kh, kw] = weight.shape();
  if (wcin != cin) {
    throw DimensionError("conv_transpose2d: weight " + to_string(weight.shape()) + " does not accept input " +
                         to_string(x.shape()));
  }
  if (stride == 0) throw DimensionError("conv_transpose2d: stride must be positive");
  if (bias.defined() && bias.shape() != Shape{1, cout, 1, 1}) {
    throw DimensionError("conv_transpose2d: bias " + to_string(bias.shape()));
  }
  const std::size_t oh = (h - 1) * stride + kh;
  const std::size_t ow = (w - 1) * stride + kw;
  // As the adjoint of a strided conv from the output grid back to the input grid.
  const ConvGeometry gm{nb, cout, oh, ow, cin, kh, kw, h, w, 1, cout, cin, stride, 0};
  const std::size_t plane = h * w;
  const std::size_t taps = gm.taps();
  Tensor<T> out(Shape{nb, cout, oh, ow});
  auto o = out.data();
  auto v = x.data();
  auto wv = weight.data();
  std::vector<T> col(taps * plane);
  for (std::size_t b = 0; b < nb; ++b) {
    T* ob = o.data() + b * cout * oh * ow;
    if (bias.defined()) fill_rows(cout, oh * ow, bias.data().data(), ob);
    std::fill(col.begin(), col.end(), T(0));
    gemm_acc(taps, cin, plane, wv.data(), 1, taps, v.data() + b * cin * plane, col.data());
    col2im_acc(gm, col.data(), ob);
  }
  check_finite(out, "conv_transpose2d");
  if (grad_enabled<T>({&x, &weight, &bias})) {
    record(out, [x, weight, bias, gm](std::span<const T> g) mutable {
      auto gx = grad_of(x);
      auto gw = grad_of(weight);
      auto gbias = bias.defined() ? grad_of(bias) : std::span<T>{};
      auto v = x.data();
      auto wv = weight.data();
      const std::size_t plane = gm.oh * gm.ow;
      const std::size_t oplane = gm.h * gm.w;
      const std::size_t taps = gm.taps();
      std::vector<T> col(taps * plane);
      for (std::size_t b = 0; b < gm.nb; ++b) {
        const T* gb = g.data() + b * gm.cin * oplane;
        if (!gbias.empty()) add_row_sums(gm.cin, oplane, gb, gbias.data());
        im2col(gm, gb, col.data());
        const T* xb = v.data() + b * gm.cout * plane;
        if (!gw.empty()) gemm_dot_acc(gm.cout, taps, plane, xb, col.data(), gw.data());
        if (!gx.empty()) gemm_acc(gm.cout, taps, plane, wv.data(), taps, 1, col.data(), gx.data() + b * gm.cout * plane);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto [nb, nc, h, w] = x.shape();
  if (nc == 0) throw DimensionError("layernorm over zero channels");
  if (gamma.shape() != Shape{1, nc, 1, 1} || beta.shape() != Shape{1, nc, 1, 1}) {
    throw DimensionError("layernorm: affine parameters " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " for " + std::to_string(nc) + " channels");
  }
  const std::size_t hw = h * w;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(nb * hw);
  std::vector<T> mu(hw);
  std::vector<T> var(hw);
  auto v = x.data();
  auto xh = xhat.data();
  auto o = out.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  const T inv_c = T(1) / static_cast<T>(nc);
  for (std::size_t b = 0; b < nb; ++b) {
    std::fill(mu.begin(), mu.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (std::size_t c = 0; c < nc; ++c) {
      const T* row = v.data() + (b * nc + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) mu[p] += row[p];
    }
    for (std::size_t p = 0; p < hw; ++p) mu[p] *= inv_c;
    for (std::size_t c = 0; c < nc; ++c) {
      const T* row = v.data() + (b * nc + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        const T d = row[p] - mu[p];
        var[p] += d * d;
      }
    }
    T* rs = rstd.data() + b * hw;
    for (std::size_t p = 0; p < hw; ++p) rs[p] = T(1) / std::sqrt(var[p] * inv_c + eps);
    for (std::size_t c = 0; c < nc; ++c) {
      const std::size_t off = (b * nc + c) * hw;
      for (std::size_t p = 0; p < hw; ++p) {
        xh[off + p] = (v[off + p] - mu[p]) * rs[p];
        o[off + p] = xh[off + p] * gm[c] + bt[c];
      }
    }
  }
  check_finite(out, "layernorm");
  if (grad_enabled<T>({&x, &gamma, &beta})) {
    record(out, [x, gamma, beta, xhat, rstd = std::move(rstd), nb, nc, hw, inv_c](std::span<const T> g) mutable {
      auto gx = grad_of(x);
      auto gg = grad_of(gamma);
      auto gbt = grad_of(beta);
      auto xh = xhat.data();
      auto gm = gamma.data();
      std::vector<T> s1(hw);
      std::vector<T> s2(hw);
      for (std::size_t b = 0; b < nb; ++b) {
        std::fill(s1.begin(), s1.end(), T(0));
        std::fill(s2.begin(), s2.end(), T(0));
        for (std::size_t c = 0; c < nc; ++c) {
          const std::size_t off = (b * nc + c) * hw;
          T acc_g = T(0);
          T acc_b = T(0);
          for (std::size_t p = 0; p < hw; ++p) {
            const T dxh = g[off + p] * gm[c];
            s1[p] += dxh;
            s2[p] += dxh * xh[off + p];
            acc_g += g[off + p] * xh[off + p];
            acc_b += g[off + p];
          }
          if (!gg.empty()) gg[c] += acc_g;
          if (!gbt.empty()) gbt[c] += acc_b;
        }
        if (gx.empty()) continue;
        const T* rs = rstd.data() + b * hw;
        for (std::size_t c = 0; c < nc; ++c) {
          const std::size_t off = (b * nc + c) * hw;
          for (std::size_t p = 0; p < hw; ++p) {
            const T dxh = g[off + p] * gm[c];
            gx[off + p] += rs[p] * (dxh - s1[p] * inv_c - xh[off + p] * s2[p] * inv_c);
          }
        }
      }
    });
  }
  return out;
}

// ---- layout --------------------------------------------------------------

template <typename T>
std::vector<Tensor<T>> chunk(const Tensor<T>& x, std::size_t n) {
  const auto [nb, nc, h, w] = x.shape();
  if (n == 0 || nc % n != 0) {
    throw DimensionError("chunk: " + std::to_string(nc) + " channels not divisible into " + std::to_string(n));
  }
  const std::size_t part = nc / n;
  const std::size_t hw = h * w;
  std::vector<Tensor<T>> parts;
  parts.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Tensor<T> out(Shape{nb, part, h, w});
    for (std::size_t b = 0; b < nb; ++b) {
      const T* src = x.data().data() + (b * nc + k * part) * hw;
      std::copy(src, src + part * hw, out.data().data() + b * part * hw);
    }
    if (grad_enabled<T>({&x})) {
      record(out, [x, k, part, nb, nc, hw](std::span<const T> g) mutable {
        auto gx = x.ensure_grad();
        for (std::size_t b = 0; b < nb; ++b) {
          T* dst = gx.data() + (b * nc + k * part) * hw;
          const T* src = g.data() + b * part * hw;
          for (std::size_t i = 0; i < part * hw; ++i) dst[i] += src[i];
        }
      });
    }
    parts.push_back(std::move(out));
  }
  return parts;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape first = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_same_outer(first, p.shape(), "concat");
    total += p.channels();
  }
  const std::size_t nb = first[0];
  const std::size_t hw = first[2] * first[3];
  Tensor<T> out(Shape{nb, total, first[2], first[3]});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.channels();
    for (std::size_t b = 0; b < nb; ++b) {
      const T* src = p.data().data() + b * pc * hw;
      std::copy(src, src + pc * hw, out.data().data() + (b * total + c0) * hw);
    }
    c0 += pc;
  }
  bool any = false;
  for (const auto& p : parts) any = any || grad_enabled<T>({&p});
  if (any) {
    std::vector<Tensor<T>> saved(parts.begin(), parts.end());
    record(out, [saved = std::move(saved), nb, total, hw](std::span<const T> g) mutable {
      std::size_t c0 = 0;
      for (auto& p : saved) {
        const std::size_t pc = p.channels();
        if (p.requires_grad()) {
          auto gp = p.ensure_grad();
          for (std::size_t b = 0; b < nb; ++b) {
            const T* src = g.data() + (b * total + c0) * hw;
            T* dst = gp.data() + b * pc * hw;
            for (std::size_t i = 0; i < pc * hw; ++i) dst[i] += src[i];
          }
        }
        c0 += pc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts) {
  return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()));
}

template <typename T>
Tensor<T> gather_positions(const Tensor<T>& x, std::span<const std::uint32_t> order) {
  const auto [nb, nc, h, w] = x.shape();
  const std::size_t hw = h * w;
  const std::size_t len = order.size();
  for (std::uint32_t p : order) {
    if (p >= hw) throw DimensionError("gather_positions: position " + std::to_string(p) + " outside grid");
  }
  Tensor<T> out(Shape{nb, nc, 1, len});
  auto o = out.data();
  auto v = x.data();
  for (std::size_t bc = 0; bc < nb * nc; ++bc) {
    for (std::size_t t = 0; t < len; ++t) o[bc * len + t] = v[bc * hw + order[t]];
  }
  if (grad_enabled<T>({&x})) {
    std::vector<std::uint32_t> ord(order.begin(), order.end());
    record(out, [x, ord = std::move(ord), nb, nc, hw, len](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      for (std::size_t bc = 0; bc < nb * nc; ++bc) {
        for (std::size_t t = 0; t < len; ++t) gx[bc * hw + ord[t]] += g[bc * len + t];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scatter_positions(const Tensor<T>& seq, std::span<const std::uint32_t> order, std::size_t h,
                            std::size_t w) {
  const auto [nb, nc, sh, len] = seq.shape();
  if (sh != 1 || len != order.size()) {
    throw DimensionError("scatter_positions: sequence " + to_string(seq.shape()) + " vs order of length " +
                         std::to_string(order.size()));
  }
  const std::size_t hw = h * w;
  for (std::uint32_t p : order) {
    if (p >= hw) throw DimensionError("scatter_positions: position " + std::to_string(p) + " outside grid");
  }
  Tensor<T> out(Shape{nb, nc, h, w});
  auto o = out.data();
  auto v = seq.data();
  for (std::size_t bc = 0; bc < nb * nc; ++bc) {
    for (std::size_t t = 0; t < len; ++t) o[bc * hw + order[t]] = v[bc * len + t];
  }
  if (grad_enabled<T>({&seq})) {
    std::vector<std::uint32_t> ord(order.begin(), order.end());
    record(out, [seq, ord = std::move(ord), nb, nc, hw, len](std::span<const T> g) mutable {
      auto gs = seq.ensure_grad();
      for (std::size_t bc = 0; bc < nb * nc; ++bc) {
        for (std::size_t t = 0; t < len; ++t) gs[bc * len + t] += g[bc * hw + ord[t]];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reverse_positions(const Tensor<T>& x) {
  const std::size_t hw = x.height() * x.width();
  std::vector<std::uint32_t> order(hw);
  for (std::size_t t = 0; t < hw; ++t) order[t] = static_cast<std::uint32_t>(hw - 1 - t);
  return reshape(gather_positions(x, order), x.shape());
}

template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
  const auto [nb, nc, h, w] = x.shape();
  std::vector<std::uint32_t> order(h * w);
  for (std::size_t i = 0; i < w; ++i) {
    for (std::size_t j = 0; j < h; ++j) order[i * h + j] = static_cast<std::uint32_t>(j * w + i);
  }
  return reshape(gather_positions(x, order), Shape{nb, nc, w, h});
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (dimlight::numel(shape) != x.numel()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  Tensor<T> out = x.reshaped(shape);
  if (grad_enabled<T>({&x})) {
    record(out, [x](std::span<const T> g) mutable {
      auto gx = x.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

#define DIMLIGHT_INSTANTIATE_OPS(T)                                                                     \
  template T sigmoid_scalar<T>(T);                                                                      \
  template T softplus_scalar<T>(T);                                                                     \
  template T gelu_scalar<T>(T);                                                                         \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                          \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                     \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                          \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                          \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                      \
  template Tensor<T> silu<T>(const Tensor<T>&);                                                         \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                         \
  template Tensor<T> softplus<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                          \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                         \
  template Tensor<T> channel_mean<T>(const Tensor<T>&);                                                 \
  template Tensor<T> channel_max<T>(const Tensor<T>&);                                                  \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions);    \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                         std::size_t);                                                  \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template std::vector<Tensor<T>> chunk<T>(const Tensor<T>&, std::size_t);                              \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>);                                             \
  template Tensor<T> concat<T>(std::initializer_list<Tensor<T>>);                                       \
  template Tensor<T> gather_positions<T>(const Tensor<T>&, std::span<const std::uint32_t>);             \
  template Tensor<T> scatter_positions<T>(const Tensor<T>&, std::span<const std::uint32_t>, std::size_t, \
                                          std::size_t);                                                 \
  template Tensor<T> reverse_positions<T>(const Tensor<T>&);                                            \
  template Tensor<T> transpose_hw<T>(const Tensor<T>&);                                                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);

DIMLIGHT_INSTANTIATE_OPS(float)
DIMLIGHT_INSTANTIATE_OPS(double)

}  // namespace dimlight::ops
