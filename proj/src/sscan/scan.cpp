#include "dimlight/sscan/scan.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "dimlight/sscan/fastmath.h"
#include "dimlight/tensor/ops.h"
#include "dimlight/tensor/tape.h"

namespace dimlight::sscan {
namespace {

struct ScanDims {
  std::size_t nb;
  std::size_t d;
  std::size_t m;
  std::size_t hw;
};

template <typename T>
ScanDims check_operands(const ScanInputs<T>& in, const SSMParams<T>& p, const Tensor<T>& bias,
                        std::span<const std::uint32_t> order) {
  p.validate();
  const auto [nb, d, h, w] = in.u.shape();
  const std::size_t m = p.state_size();
  auto expect = [](const Tensor<T>& t, const Shape& s, const char* what) {
    if (!t.defined() || t.shape() != s) {
      throw DimensionError(std::string("selective scan: ") + what + " has shape " +
                           (t.defined() ? to_string(t.shape()) : std::string("<undefined>")) + ", expected " +
                           to_string(s));
    }
  };
  expect(in.delta, in.u.shape(), "delta");
  expect(in.b_sel, Shape{nb, m, h, w}, "B selection");
  expect(in.c_sel, Shape{nb, m, h, w}, "C selection");
  if (p.channels() != d) {
    throw DimensionError("selective scan: parameters for " + std::to_string(p.channels()) + " channels, input has " +
                         std::to_string(d));
  }
  if (bias.defined()) expect(bias, in.u.shape(), "local bias");
  const std::size_t hw = h * w;
  if (!order.empty()) {
    if (order.size() != hw) {
      throw DimensionError("selective scan: order visits " + std::to_string(order.size()) + " of " +
                           std::to_string(hw) + " positions");
    }
    for (std::uint32_t q : order) {
      if (q >= hw) throw DimensionError("selective scan: order position " + std::to_string(q) + " outside grid");
    }
  }
  return {nb, d, m, hw};
}

std::vector<std::uint32_t> resolve_order(std::span<const std::uint32_t> order, std::size_t hw) {
  if (!order.empty()) return {order.begin(), order.end()};
  std::vector<std::uint32_t> id(hw);
  std::iota(id.begin(), id.end(), 0u);
  return id;
}

// A = -exp(a_log) followed by 1 / A, both (d, m).
template <typename T>
std::vector<T> state_matrix(const Tensor<T>& a_log) {
  const std::size_t n = a_log.numel();
  std::vector<T> a(2 * n);
  auto src = a_log.data();
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = -std::exp(src[i]);
    a[n + i] = T(1) / a[i];
  }
  return a;
}

// Sum of C_k h_k over states in a fixed association order shared by both
// scan variants: eight strided partial sums, then a balanced tree.
template <typename T>
inline T sum_states(const T* v, std::size_t m) {
  constexpr std::size_t kLanes = 8;
  T lanes[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= m; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += v[k + l];
  }
  T acc = ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]));
  for (; k < m; ++k) acc += v[k];
  return acc;
}

// Positions per block; operands of a block are gathered into contiguous
// (position, channel) buffers before the recurrence runs over them.
constexpr std::size_t kBlock = 32;

template <typename T>
struct Operands {
  const T* u;
  const T* delta;
  const T* b_sel;
  const T* c_sel;
  const T* a;      // (d, m), negative
  const T* inv_a;  // 1 / a
  const T* d_skip;
  const T* bias;  // may be null
  const std::uint32_t* order;
};

// Per-position (len * d * m) buffers filled by forward_one for the reverse sweep.
template <typename T>
struct Trace {
  T* states = nullptr;
  T* a_bar = nullptr;
  T* phi = nullptr;
};

// Runs the blocked recurrence for batch element b. Writes y when non-null and
// the trace when its buffers are non-null.
template <typename T>
void forward_one(const ScanDims& dm, std::size_t b, const Operands<T>& op, T* y, const Trace<T>& trace) {
  const std::size_t d = dm.d;
  const std::size_t m = dm.m;
  const std::size_t hw = dm.hw;
  const T thr = static_cast<T>(kSeriesThreshold);
  std::vector<T> h(d * m, T(0));
  std::vector<T> ub(kBlock * d), db(kBlock * d), yb(kBlock * d), biasb(kBlock * d, T(0));
  std::vector<T> bb(kBlock * m), cb(kBlock * m), prod(m), scratch_a(m), scratch_p(m);
  for (std::size_t t0 = 0; t0 < hw; t0 += kBlock) {
    const std::size_t nt = std::min(kBlock, hw - t0);
    const std::uint32_t* ord = op.order + t0;
    for (std::size_t i = 0; i < d; ++i) {
      const T* urow = op.u + (b * d + i) * hw;
      const T* drow = op.delta + (b * d + i) * hw;
      for (std::size_t j = 0; j < nt; ++j) {
        ub[j * d + i] = urow[ord[j]];
        db[j * d + i] = drow[ord[j]];
      }
      if (op.bias != nullptr) {
        const T* brow = op.bias + (b * d + i) * hw;
        for (std::size_t j = 0; j < nt; ++j) biasb[j * d + i] = brow[ord[j]];
      }
    }
    for (std::size_t k = 0; k < m; ++k) {
      const T* brow = op.b_sel + (b * m + k) * hw;
      const T* crow = op.c_sel + (b * m + k) * hw;
      for (std::size_t j = 0; j < nt; ++j) {
        bb[j * m + k] = brow[ord[j]];
        cb[j * m + k] = crow[ord[j]];
      }
    }
    for (std::size_t j = 0; j < nt; ++j) {
      const T* bj = bb.data() + j * m;
      const T* cj = cb.data() + j * m;
      for (std::size_t i = 0; i < d; ++i) {
        const T dl = db[j * d + i];
        const T uu = ub[j * d + i];
        const T* arow = op.a + i * m;
        const T* inv_arow = op.inv_a + i * m;
        T* hrow = h.data() + i * m;
        const std::size_t at = ((t0 + j) * d + i) * m;
        T* abar_out = trace.a_bar != nullptr ? trace.a_bar + at : scratch_a.data();
        T* phi_out = trace.phi != nullptr ? trace.phi + at : scratch_p.data();
#pragma omp simd
        for (std::size_t k = 0; k < m; ++k) {
          const T x = dl * arow[k];
          const auto e = fastmath::exp_expm1(x);
          const T series = dl * (T(1) + T(0.5) * x);
          const T exact = e.expm1 * inv_arow[k];
          const T phi = (x > -thr) ? series : exact;
          const T hk = e.exp * hrow[k] + phi * bj[k] * uu;
          hrow[k] = hk;
          prod[k] = cj[k] * hk;
          abar_out[k] = e.exp;
          phi_out[k] = phi;
        }
        yb[j * d + i] = sum_states(prod.data(), m) + op.d_skip[i] * uu + biasb[j * d + i];
      }
      if (trace.states != nullptr) std::copy(h.begin(), h.end(), trace.states + (t0 + j) * d * m);
    }
    if (y != nullptr) {
      for (std::size_t i = 0; i < d; ++i) {
        T* yrow = y + (b * d + i) * hw;
        for (std::size_t j = 0; j < nt; ++j) yrow[ord[j]] = yb[j * d + i];
      }
    }
  }
}

template <typename T>
struct Grads {
  T* u = nullptr;
  T* delta = nullptr;
  T* b_sel = nullptr;
  T* c_sel = nullptr;
  T* a_log = nullptr;
  T* d_skip = nullptr;
  T* bias = nullptr;
};

// Reverse sweep of the recurrence. States are recomputed per batch element.
template <typename T>
void backward_all(const ScanDims& dm, const Operands<T>& op, const T* gy, const Grads<T>& g) {
  const std::size_t d = dm.d;
  const std::size_t m = dm.m;
  const std::size_t hw = dm.hw;
  const T thr = static_cast<T>(kSeriesThreshold);
  // Reused across calls; every entry is written by forward_one before it is read.
  thread_local std::vector<T> workspace;
  const std::size_t n = hw * d * m;
  if (workspace.size() < 3 * n) workspace.resize(3 * n);
  const Trace<T> trace{workspace.data(), workspace.data() + n, workspace.data() + 2 * n};
  const T* states = trace.states;
  std::vector<T> carry(d * m);
  std::vector<T> ga(d * m, T(0));
  std::vector<T> gd(d, T(0));
  std::vector<T> ub(kBlock * d), db(kBlock * d), gyb(kBlock * d), gub(kBlock * d), gdb(kBlock * d);
  std::vector<T> bb(kBlock * m), cb(kBlock * m), gbb(kBlock * m), gcb(kBlock * m);
  const std::vector<T> zeros(d * m, T(0));
  for (std::size_t b = 0; b < dm.nb; ++b) {
    forward_one(dm, b, op, static_cast<T*>(nullptr), trace);
    std::fill(carry.begin(), carry.end(), T(0));
    for (std::size_t end = hw; end > 0;) {
      const std::size_t t0 = end > kBlock ? end - kBlock : 0;
      const std::size_t nt = end - t0;
      const std::uint32_t* ord = op.order + t0;
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t row = (b * d + i) * hw;
        for (std::size_t j = 0; j < nt; ++j) {
          ub[j * d + i] = op.u[row + ord[j]];
          db[j * d + i] = op.delta[row + ord[j]];
          gyb[j * d + i] = gy[row + ord[j]];
        }
      }
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t row = (b * m + k) * hw;
        for (std::size_t j = 0; j < nt; ++j) {
          bb[j * m + k] = op.b_sel[row + ord[j]];
          cb[j * m + k] = op.c_sel[row + ord[j]];
        }
      }
      std::fill(gbb.begin(), gbb.end(), T(0));
      std::fill(gcb.begin(), gcb.end(), T(0));
      for (std::size_t j = nt; j-- > 0;) {
        const std::size_t t = t0 + j;
        const T* hcur = states + t * d * m;
        const T* abar_t = trace.a_bar + t * d * m;
        const T* phi_t = trace.phi + t * d * m;
        const T* hprev = t > 0 ? states + (t - 1) * d * m : zeros.data();
        const T* bt = bb.data() + j * m;
        const T* ct = cb.data() + j * m;
        T* gbt = gbb.data() + j * m;
        T* gct = gcb.data() + j * m;
        for (std::size_t i = 0; i < d; ++i) {
          const T dl = db[j * d + i];
          const T uu = ub[j * d + i];
          const T gyi = gyb[j * d + i];
          const T* arow = op.a + i * m;
          const T* inv_arow = op.inv_a + i * m;
          const T* hc = hcur + i * m;
          const T* hp = hprev + i * m;
          const T* abr = abar_t + i * m;
          const T* phr = phi_t + i * m;
          T* cr = carry.data() + i * m;
          T* gar = ga.data() + i * m;
          T gu_acc = T(0);
          T gdl_acc = T(0);
#pragma omp simd reduction(+ : gu_acc, gdl_acc)
          for (std::size_t k = 0; k < m; ++k) {
            const T a = arow[k];
            const T x = dl * a;
            const T abar = abr[k];
            const T phi = phr[k];
            const bool small = x > -thr;
            const T dphi_ddelta = small ? T(1) + x : abar;
            const T dphi_da = small ? T(0.5) * dl * dl : (dl * abar - phi) * inv_arow[k];
            const T gh = gyi * ct[k] + cr[k];
            gct[k] += gyi * hc[k];
            const T g_abar = gh * hp[k];
            const T g_phi = gh * uu * bt[k];
            gu_acc += gh * phi * bt[k];
            gdl_acc += g_abar * a * abar + g_phi * dphi_ddelta;
            gar[k] += g_abar * dl * abar + g_phi * dphi_da;
            gbt[k] += gh * uu * phi;
            cr[k] = abar * gh;
          }
          gub[j * d + i] = gu_acc + op.d_skip[i] * gyi;
          gdb[j * d + i] = gdl_acc;
          gd[i] += gyi * uu;
        }
      }
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t row = (b * d + i) * hw;
        for (std::size_t j = 0; j < nt; ++j) {
          const std::size_t q = row + ord[j];
          if (g.u != nullptr) g.u[q] += gub[j * d + i];
          if (g.delta != nullptr) g.delta[q] += gdb[j * d + i];
          if (g.bias != nullptr) g.bias[q] += gyb[j * d + i];
        }
      }
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t row = (b * m + k) * hw;
        for (std::size_t j = 0; j < nt; ++j) {
          if (g.b_sel != nullptr) g.b_sel[row + ord[j]] += gbb[j * m + k];
          if (g.c_sel != nullptr) g.c_sel[row + ord[j]] += gcb[j * m + k];
        }
      }
      end = t0;
    }
  }
  if (g.a_log != nullptr) {
    // A = -exp(a_log), so dA/da_log = A.
    for (std::size_t i = 0; i < d * m; ++i) g.a_log[i] += ga[i] * op.a[i];
  }
  if (g.d_skip != nullptr) {
    for (std::size_t i = 0; i < d; ++i) g.d_skip[i] += gd[i];
  }
}

template <typename T>
T* grad_ptr(const Tensor<T>& t) {
  return (t.defined() && t.requires_grad()) ? t.ensure_grad().data() : nullptr;
}

}  // namespace

template <typename T>
SSMParams<T> SSMParams<T>::zeros(std::size_t channels, std::size_t state_size) {
  if (channels == 0 || state_size == 0) throw DimensionError("SSM parameters need channels >= 1 and states >= 1");
  SSMParams p;
  p.a_log = Tensor<T>(Shape{channels, state_size, 1, 1});
  p.d_skip = Tensor<T>(Shape{1, channels, 1, 1});
  p.delta_bias = Tensor<T>(Shape{1, channels, 1, 1});
  p.proj_delta = Tensor<T>(Shape{1, channels, 1, 1});
  p.proj_b = Tensor<T>(Shape{state_size, channels, 1, 1});
  p.proj_c = Tensor<T>(Shape{state_size, channels, 1, 1});
  return p;
}

template <typename T>
void SSMParams<T>::validate() const {
  if (!a_log.defined()) throw DimensionError("SSM parameters are not initialized");
  const std::size_t d = a_log.batch();
  const std::size_t m = a_log.channels();
  const Shape vec{1, d, 1, 1};
  const Shape proj{m, d, 1, 1};
  if (d == 0 || m == 0 || a_log.height() != 1 || a_log.width() != 1 || d_skip.shape() != vec ||
      delta_bias.shape() != vec || proj_delta.shape() != vec || proj_b.shape() != proj || proj_c.shape() != proj) {
    throw DimensionError("inconsistent SSM parameter shapes: A_log " + to_string(a_log.shape()) + ", D " +
                         to_string(d_skip.shape()) + ", f_B " + to_string(proj_b.shape()));
  }
}

template <typename T>
std::vector<Tensor<T>*> SSMParams<T>::tensors() {
  return {&a_log, &d_skip, &delta_bias, &proj_delta, &proj_b, &proj_c};
}

template <typename T>
Discretized<T> discretize(T delta, T a, T b) {
  if (!(delta > T(0))) throw ContractError("discretize: step size must be positive, got " + std::to_string(delta));
  if (!(a < T(0))) throw ContractError("discretize: state entry must be negative, got " + std::to_string(a));
  const T x = delta * a;
  const auto e = fastmath::exp_expm1(x);
  const T a_bar = e.exp;
  T gain;
  if (std::abs(x) < static_cast<T>(kSeriesThreshold)) {
    gain = delta * (T(1) + T(0.5) * x);
  } else {
    gain = e.expm1 * (T(1) / a);
  }
  return {a_bar, gain * b};
}

template <typename T>
ScanInputs<T> selection(const Tensor<T>& x, const SSMParams<T>& params) {
  params.validate();
  if (x.channels() != params.channels()) {
    throw DimensionError("selection: input has " + std::to_string(x.channels()) + " channels, parameters expect " +
                         std::to_string(params.channels()));
  }
  ScanInputs<T> in;
  in.u = x;
  // The floor keeps delta > 0 where softplus underflows.
  in.delta = ops::add_scalar(ops::softplus(ops::add(ops::linear(x, params.proj_delta), params.delta_bias)),
                             std::numeric_limits<T>::min());
  in.b_sel = ops::linear(x, params.proj_b);
  in.c_sel = ops::linear(x, params.proj_c);
  return in;
}

template <typename T>
Tensor<T> selective_scan_seq(const ScanInputs<T>& in, const SSMParams<T>& params, const Tensor<T>& local_bias,
                             std::span<const std::uint32_t> order) {
  const ScanDims dm = check_operands(in, params, local_bias, order);
  const std::vector<std::uint32_t> ord = resolve_order(order, dm.hw);
  const std::vector<T> a = state_matrix(params.a_log);
  Tensor<T> y(in.u.shape());
  auto u = in.u.data();
  auto delta = in.delta.data();
  auto bs = in.b_sel.data();
  auto cs = in.c_sel.data();
  auto dsk = params.d_skip.data();
  std::vector<T> h(dm.m), prod(dm.m);
  for (std::size_t b = 0; b < dm.nb; ++b) {
    for (std::size_t i = 0; i < dm.d; ++i) {
      std::fill(h.begin(), h.end(), T(0));
      const std::size_t row = (b * dm.d + i) * dm.hw;
      for (std::size_t t = 0; t < dm.hw; ++t) {
        const std::size_t p = ord[t];
        for (std::size_t k = 0; k < dm.m; ++k) {
          const std::size_t sel = (b * dm.m + k) * dm.hw + p;
          const Discretized<T> z = discretize(delta[row + p], a[i * dm.m + k], bs[sel]);
          h[k] = z.a_bar * h[k] + z.b_bar * u[row + p];
          prod[k] = cs[sel] * h[k];
        }
        y.data()[row + p] = sum_states(prod.data(), dm.m) + dsk[i] * u[row + p] + (local_bias.defined() ? local_bias.data()[row + p] : T(0));
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> selective_scan_fast(const ScanInputs<T>& in, const SSMParams<T>& params, const Tensor<T>& local_bias,
                              std::span<const std::uint32_t> order) {
  const ScanDims dm = check_operands(in, params, local_bias, order);
  auto ord = std::make_shared<std::vector<std::uint32_t>>(resolve_order(order, dm.hw));
  auto a = std::make_shared<std::vector<T>>(state_matrix(params.a_log));
  for (T v : in.delta.data()) {
    if (!(v > T(0))) throw ContractError("selective scan: step sizes must be strictly positive");
  }
  Tensor<T> y(in.u.shape());
  const Operands<T> op{in.u.data().data(),
                       in.delta.data().data(),
                       in.b_sel.data().data(),
                       in.c_sel.data().data(),
                       a->data(),
                       a->data() + dm.d * dm.m,
                       params.d_skip.data().data(),
                       local_bias.defined() ? local_bias.data().data() : nullptr,
                       ord->data()};
  for (std::size_t b = 0; b < dm.nb; ++b) forward_one(dm, b, op, y.data().data(), Trace<T>{});

  if (grad_enabled<T>({&in.u, &in.delta, &in.b_sel, &in.c_sel, &params.a_log, &params.d_skip, &local_bias})) {
    record_op(y, [in, a_log = params.a_log, d_skip = params.d_skip, bias = local_bias, ord, a,
                  dm](std::span<const T> gy) mutable {
      const Operands<T> op{in.u.data().data(),
                           in.delta.data().data(),
                           in.b_sel.data().data(),
                           in.c_sel.data().data(),
                           a->data(),
                           a->data() + dm.d * dm.m,
                           d_skip.data().data(),
                           bias.defined() ? bias.data().data() : nullptr,
                           ord->data()};
      Grads<T> g;
      g.u = grad_ptr(in.u);
      g.delta = grad_ptr(in.delta);
      g.b_sel = grad_ptr(in.b_sel);
      g.c_sel = grad_ptr(in.c_sel);
      g.a_log = grad_ptr(a_log);
      g.d_skip = grad_ptr(d_skip);
      g.bias = grad_ptr(bias);
      backward_all(dm, op, gy.data(), g);
    });
  }
  return y;
}

std::array<std::vector<std::uint32_t>, kDirections> cross_scan_orders(std::size_t h, std::size_t w) {
  const std::size_t hw = h * w;
  std::array<std::vector<std::uint32_t>, kDirections> orders;
  for (auto& o : orders) o.resize(hw);
  for (std::size_t t = 0; t < hw; ++t) orders[0][t] = static_cast<std::uint32_t>(t);
  for (std::size_t col = 0; col < w; ++col) {
    for (std::size_t row = 0; row < h; ++row) orders[2][col * h + row] = static_cast<std::uint32_t>(row * w + col);
  }
  for (std::size_t t = 0; t < hw; ++t) {
    orders[1][t] = orders[0][hw - 1 - t];
    orders[3][t] = orders[2][hw - 1 - t];
  }
  return orders;
}

template <typename T>
std::array<Tensor<T>, kDirections> cross_scan_2d(const Tensor<T>& x) {
  const auto orders = cross_scan_orders(x.height(), x.width());
  std::array<Tensor<T>, kDirections> seqs;
  for (std::size_t k = 0; k < kDirections; ++k) seqs[k] = ops::gather_positions(x, std::span(orders[k]));
  return seqs;
}

template <typename T>
Tensor<T> cross_merge_2d(const std::array<Tensor<T>, kDirections>& seqs, std::size_t h, std::size_t w) {
  const auto orders = cross_scan_orders(h, w);
  Tensor<T> total;
  for (std::size_t k = 0; k < kDirections; ++k) {
    Tensor<T> grid = ops::scatter_positions(seqs[k], std::span(orders[k]), h, w);
    total = total.defined() ? ops::add(total, grid) : grid;
  }
  return total;
}

template <typename T>
Tensor<T> ssm_2d(const Tensor<T>& x, const CrossScanParams<T>& params, const Tensor<T>& local_bias, ScanMode mode) {
  if (local_bias.defined() && local_bias.shape() != x.shape()) {
    throw DimensionError("ssm_2d: local bias " + to_string(local_bias.shape()) + " for input " +
                         to_string(x.shape()));
  }
  Tensor<T> total;
  if (mode == ScanMode::kSkipOnly) {
    for (const auto& p : params) {
      p.validate();
      Tensor<T> yk = ops::mul(x, p.d_skip);
      total = total.defined() ? ops::add(total, yk) : yk;
    }
    return local_bias.defined() ? ops::add(total, local_bias) : total;
  }
  const auto orders = cross_scan_orders(x.height(), x.width());
  const Tensor<T> quarter = local_bias.defined() ? ops::scale(local_bias, T(0.25)) : Tensor<T>{};
  for (std::size_t k = 0; k < kDirections; ++k) {
    const ScanInputs<T> in = selection(x, params[k]);
    Tensor<T> yk = selective_scan_fast(in, params[k], quarter, std::span(orders[k]));
    total = total.defined() ? ops::add(total, yk) : yk;
  }
  return total;
}

#define DIMLIGHT_INSTANTIATE_SCAN(T)                                                                           \
  template struct SSMParams<T>;                                                                                \
  template Discretized<T> discretize<T>(T, T, T);                                                              \
  template ScanInputs<T> selection<T>(const Tensor<T>&, const SSMParams<T>&);                                  \
  template Tensor<T> selective_scan_seq<T>(const ScanInputs<T>&, const SSMParams<T>&, const Tensor<T>&,        \
                                           std::span<const std::uint32_t>);                                    \
  template Tensor<T> selective_scan_fast<T>(const ScanInputs<T>&, const SSMParams<T>&, const Tensor<T>&,       \
                                            std::span<const std::uint32_t>);                                   \
  template std::array<Tensor<T>, kDirections> cross_scan_2d<T>(const Tensor<T>&);                              \
  template Tensor<T> cross_merge_2d<T>(const std::array<Tensor<T>, kDirections>&, std::size_t, std::size_t);   \
  template Tensor<T> ssm_2d<T>(const Tensor<T>&, const CrossScanParams<T>&, const Tensor<T>&, ScanMode);

DIMLIGHT_INSTANTIATE_SCAN(float)
DIMLIGHT_INSTANTIATE_SCAN(double)

}  // namespace dimlight::sscan
