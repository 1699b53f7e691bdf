#include "dimlight/model/gradient_suite.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "dimlight/model/network.h"
#include "dimlight/sscan/scan.h"
#include "dimlight/tensor/ops.h"

namespace dimlight::model {

namespace {

using T = double;
using gradcheck::Report;

class Suite {
 public:
  Suite(std::uint64_t seed, const std::function<void(const Report&)>& progress) : seed_(seed), progress_(progress) {}

  Tensor<T> randn(const Shape& s, double scale = 1.0) {
    std::mt19937_64 rng(next());
    std::normal_distribution<double> d(0.0, scale);
    Tensor<T> t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
  }
  Tensor<T> uniform(const Shape& s, double lo, double hi) {
    std::mt19937_64 rng(next());
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<T> t(s);
    for (auto& v : t.data()) v = d(rng);
    return t;
  }
  // |v| >= 0.1 everywhere.
  Tensor<T> off_zero(const Shape& s) {
    auto t = uniform(s, 0.1, 1.0);
    std::mt19937_64 rng(next());
    for (auto& v : t.data()) {
      if (rng() & 1) v = -v;
    }
    return t;
  }
  // Channel values at each position differ pairwise by at least `gap`.
  Tensor<T> separated_channels(const Shape& s, double lo, double hi, double gap) {
    auto t = uniform(s, lo, hi);
    std::mt19937_64 rng(next());
    std::uniform_real_distribution<double> d(lo, hi);
    const auto [n, c, h, w] = s;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          for (std::size_t k = 1; k < c; ++k) {
            for (;;) {
              bool ok = true;
              for (std::size_t j = 0; j < k; ++j) ok = ok && std::abs(t(b, k, y, x) - t(b, j, y, x)) >= gap;
              if (ok) break;
              t(b, k, y, x) = d(rng);
            }
          }
        }
      }
    }
    return t;
  }

  // Loss sum(f() * r) with a fixed random r shaped like f's output.
  void run(const std::string& name, const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> wrt,
           gradcheck::Options options = {}) {
    const auto r = randn(f().shape());
    options.seed = seed_;
    auto rep = gradcheck::check(name, [&] { return ops::sum(ops::mul(f(), r)); }, std::move(wrt), options);
    if (progress_) progress_(rep);
    reports_.push_back(std::move(rep));
  }

  std::vector<Report> take() { return std::move(reports_); }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t next() { return seed_ * 1000003u + counter_++; }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  const std::function<void(const Report&)>& progress_;
  std::vector<Report> reports_;
};

sscan::SSMParams<T> scan_params(Suite& s, std::size_t d, std::size_t m) {
  auto p = sscan::SSMParams<T>::zeros(d, m);
  p.a_log = s.uniform(p.a_log.shape(), 0.0, std::log(static_cast<double>(m)));
  p.d_skip = s.randn(p.d_skip.shape());
  p.delta_bias = s.uniform(p.delta_bias.shape(), -3.0, 0.0);
  p.proj_delta = s.randn(p.proj_delta.shape(), 0.5);
  p.proj_b = s.randn(p.proj_b.shape(), 0.5);
  p.proj_c = s.randn(p.proj_c.shape(), 0.5);
  return p;
}

void elementwise(Suite& s) {
  const Shape sh{2, 3, 4, 5};
  auto a = s.randn(sh), b = s.randn(sh);
  s.run("add", [&] { return ops::add(a, b); }, {a, b});
  s.run("sub", [&] { return ops::sub(a, b); }, {a, b});
  s.run("mul", [&] { return ops::mul(a, b); }, {a, b});
  s.run("neg", [&] { return ops::neg(a); }, {a});
  s.run("scale", [&] { return ops::scale(a, 0.37); }, {a});
  s.run("add_scalar", [&] { return ops::add_scalar(a, -1.25); }, {a});
  s.run("exp", [&] { return ops::exp(a); }, {a});
  auto z = s.off_zero(sh);
  s.run("abs", [&] { return ops::abs(z); }, {z});
  auto wide = s.randn(sh, 3.0);
  s.run("sigmoid", [&] { return ops::sigmoid(wide); }, {wide});
  s.run("silu", [&] { return ops::silu(wide); }, {wide});
  s.run("gelu", [&] { return ops::gelu(wide); }, {wide});
  s.run("softplus", [&] { return ops::softplus(wide); }, {wide});
}

void reductions(Suite& s) {
  auto a = s.randn({2, 4, 3, 3});
  s.run("sum", [&] { return ops::sum(a); }, {a});
  s.run("mean", [&] { return ops::mean(a); }, {a});
  s.run("channel_mean", [&] { return ops::channel_mean(a); }, {a});
  auto m = s.separated_channels({2, 4, 3, 3}, -1.0, 1.0, 0.01);
  s.run("channel_max", [&] { return ops::channel_max(m); }, {m});
}

void linear_maps(Suite& s) {
  auto x = s.randn({2, 4, 3, 5});
  auto w = s.randn({6, 4, 1, 1}), b = s.randn({1, 6, 1, 1});
  s.run("linear", [&] { return ops::linear(x, w, b); }, {x, w, b});

  auto cx = s.randn({2, 4, 7, 6});
  auto cw = s.randn({6, 2, 3, 3}), cb = s.randn({1, 6, 1, 1});
  s.run("conv2d_grouped", [&] { return ops::conv2d(cx, cw, cb, {.stride = 1, .padding = 1, .groups = 2}); },
        {cx, cw, cb});
  auto sw = s.randn({5, 4, 3, 3});
  s.run("conv2d_stride2", [&] { return ops::conv2d(cx, sw, {}, {.stride = 2, .padding = 1}); }, {cx, sw});
  auto dw = s.randn({4, 1, 5, 5}), db = s.randn({1, 4, 1, 1});
  s.run("conv2d_depthwise", [&] { return ops::conv2d(cx, dw, db, {.stride = 1, .padding = 2, .groups = 4}); },
        {cx, dw, db});
  auto tx = s.randn({2, 4, 3, 4});
  auto tw = s.randn({4, 3, 2, 2}), tb = s.randn({1, 3, 1, 1});
  s.run("conv_transpose2d", [&] { return ops::conv_transpose2d(tx, tw, tb, 2); }, {tx, tw, tb});

  auto lx = s.randn({2, 5, 3, 3});
  auto g = s.randn({1, 5, 1, 1}), beta = s.randn({1, 5, 1, 1});
  s.run("layernorm", [&] { return ops::layernorm(lx, g, beta); }, {lx, g, beta});
}

void layout(Suite& s) {
  auto x = s.randn({2, 6, 3, 4});
  s.run("chunk", [&] { return ops::chunk(x, 3)[1]; }, {x});
  auto y = s.randn({2, 2, 3, 4});
  s.run("concat", [&] { return ops::concat<T>({x, y}); }, {x, y});
  const auto orders = sscan::cross_scan_orders(3, 4);
  s.run("gather_positions", [&] { return ops::gather_positions(x, std::span<const std::uint32_t>(orders[2])); }, {x});
  auto seq = s.randn({2, 6, 1, 12});
  s.run("scatter_positions",
        [&] { return ops::scatter_positions(seq, std::span<const std::uint32_t>(orders[3]), 3, 4); }, {seq});
  s.run("reverse_positions", [&] { return ops::reverse_positions(x); }, {x});
  s.run("transpose_hw", [&] { return ops::transpose_hw(x); }, {x});
  s.run("reshape", [&] { return ops::reshape(x, Shape{2, 3, 8, 3}); }, {x});
  s.run("cross_scan_merge", [&] {
    auto seqs = sscan::cross_scan_2d(x);
    seqs[1] = ops::scale(seqs[1], 2.0);
    seqs[3] = ops::exp(seqs[3]);
    return sscan::cross_merge_2d(seqs, 3, 4);
  }, {x});
}

void scans(Suite& s) {
  const std::size_t d = 3, m = 4;
  auto p = scan_params(s, d, m);
  sscan::ScanInputs<T> in{s.randn({2, d, 1, 37}), s.uniform({2, d, 1, 37}, 1e-3, 2.0), s.randn({2, m, 1, 37}),
                          s.randn({2, m, 1, 37})};
  auto bias = s.randn(in.u.shape());
  s.run("selective_scan", [&] { return sscan::selective_scan_fast(in, p, bias); },
        {in.u, in.delta, in.b_sel, in.c_sel, p.a_log, p.d_skip, bias});

  sscan::ScanInputs<T> small{s.randn({1, 2, 1, 9}), Tensor<T>(Shape{1, 2, 1, 9}, std::vector<T>(18, 3e-5)),
                             s.randn({1, 3, 1, 9}), s.randn({1, 3, 1, 9})};
  auto ps = scan_params(s, 2, 3);
  s.run("selective_scan_series", [&] { return sscan::selective_scan_fast(small, ps); },
        {small.u, small.b_sel, small.c_sel, ps.a_log}, {.step = 1e-5});

  auto x = s.randn({1, d, 3, 4});
  auto sp = scan_params(s, d, m);
  s.run("selection", [&] {
    auto sel = sscan::selection(x, sp);
    return ops::concat<T>({sel.delta, sel.b_sel, sel.c_sel});
  }, {x, sp.delta_bias, sp.proj_delta, sp.proj_b, sp.proj_c});

  sscan::CrossScanParams<T> cp{scan_params(s, d, m), scan_params(s, d, m), scan_params(s, d, m),
                               scan_params(s, d, m)};
  auto gb = s.randn(x.shape());
  std::vector<Tensor<T>> wrt{x, gb};
  for (auto& q : cp) {
    for (auto* t : q.tensors()) wrt.push_back(*t);
  }
  s.run("ssm_2d", [&] { return sscan::ssm_2d(x, cp, gb); }, wrt);
}

void network(Suite& s) {
  ModelConfig cfg;
  cfg.base_width = 8;
  Network<T> net(cfg);
  net.init(s.seed(), {.zero_head = false});
  auto low = s.separated_channels({1, 3, 16, 16}, 0.05, 0.95, 0.01);
  s.run("network.input", [&] { return net.forward(low); }, {low});
  std::vector<Tensor<T>> params;
  for (const auto& p : net.parameters()) params.push_back(p.tensor);
  s.run("network.parameters", [&] { return net.forward(low); }, params, {.max_entries_per_tensor = 2});
}

}  // namespace

std::vector<Report> gradient_suite(std::uint64_t seed, const std::function<void(const Report&)>& progress) {
  Suite s(seed, progress);
  elementwise(s);
  reductions(s);
  linear_maps(s);
  layout(s);
  scans(s);
  network(s);
  return s.take();
}

}  // namespace dimlight::model
