#include "dimlight/model/network.h"

#include <cmath>
#include <random>

#include "dimlight/errors.h"
#include "dimlight/tensor/ops.h"

namespace dimlight::model {
namespace {

using ops::Conv2dOptions;

template <typename T>
ConvParams<T> make_conv(std::size_t out, std::size_t in_per_group, std::size_t k) {
  return {Tensor<T>(Shape{out, in_per_group, k, k}), Tensor<T>(Shape{1, out, 1, 1})};
}

template <typename T>
ConvParams<T> make_linear(std::size_t out, std::size_t in) {
  return make_conv<T>(out, in, 1);
}

template <typename T>
Tensor<T> vec(std::size_t n) {
  return Tensor<T>(Shape{1, n, 1, 1});
}

template <typename T>
GlssbParams<T> make_block(const ModelConfig& cfg, std::size_t c) {
  const std::size_t e = cfg.expand * c;
  GlssbParams<T> g;
  g.ln1_g = vec<T>(c);
  g.ln1_b = vec<T>(c);
  auto& l = g.lessm;
  l.in_proj = make_linear<T>(2 * e, c);
  l.x_proj = make_linear<T>(e, e);
  l.dw = make_conv<T>(e, 1, 3);
  for (auto& s : l.ssm) s = sscan::SSMParams<T>::zeros(e, cfg.state_size);
  if (cfg.local_bias_enabled && cfg.uses_prior()) l.bias_conv = make_conv<T>(e, c, 3);
  l.ln_g = vec<T>(e);
  l.ln_b = vec<T>(e);
  l.z_proj = make_linear<T>(e, e);
  l.out_proj = make_linear<T>(c, e);
  if (cfg.irsk_enabled) {
    g.ln2_g = vec<T>(c);
    g.ln2_b = vec<T>(c);
    auto& r = g.irsk;
    for (std::size_t k : cfg.irsk_kernels) r.dw.push_back(make_conv<T>(c, 1, k));
    if (cfg.uses_prior()) r.gate = make_conv<T>(cfg.irsk_kernels.size() * c, c, 3);
    r.fuse_dw = make_conv<T>(c, 1, 3);
    r.out = make_linear<T>(c, c);
  }
  return g;
}

// Calls fn(name, tensor) for every defined tensor, in declaration order.
template <typename T, typename Fn>
void visit_conv(const std::string& name, const ConvParams<T>& p, Fn& fn) {
  if (!p.defined()) return;
  fn(name + ".w", p.w);
  if (p.b.defined()) fn(name + ".b", p.b);
}

template <typename T, typename Fn>
void visit_block(const std::string& name, const GlssbParams<T>& g, Fn& fn) {
  fn(name + ".ln1.g", g.ln1_g);
  fn(name + ".ln1.b", g.ln1_b);
  const std::string l = name + ".lessm";
  visit_conv(l + ".in_proj", g.lessm.in_proj, fn);
  visit_conv(l + ".x_proj", g.lessm.x_proj, fn);
  visit_conv(l + ".dw", g.lessm.dw, fn);
  for (std::size_t k = 0; k < sscan::kDirections; ++k) {
    const auto& s = g.lessm.ssm[k];
    const std::string p = l + ".ssm." + std::to_string(k);
    fn(p + ".a_log", s.a_log);
    fn(p + ".d_skip", s.d_skip);
    fn(p + ".delta_bias", s.delta_bias);
    fn(p + ".proj_delta", s.proj_delta);
    fn(p + ".proj_b", s.proj_b);
    fn(p + ".proj_c", s.proj_c);
  }
  visit_conv(l + ".bias_conv", g.lessm.bias_conv, fn);
  fn(l + ".ln.g", g.lessm.ln_g);
  fn(l + ".ln.b", g.lessm.ln_b);
  visit_conv(l + ".z_proj", g.lessm.z_proj, fn);
  visit_conv(l + ".out_proj", g.lessm.out_proj, fn);
  if (g.irsk.dw.empty()) return;
  fn(name + ".ln2.g", g.ln2_g);
  fn(name + ".ln2.b", g.ln2_b);
  const std::string r = name + ".irsk";
  for (std::size_t k = 0; k < g.irsk.dw.size(); ++k) visit_conv(r + ".dw." + std::to_string(k), g.irsk.dw[k], fn);
  visit_conv(r + ".gate", g.irsk.gate, fn);
  visit_conv(r + ".fuse_dw", g.irsk.fuse_dw, fn);
  visit_conv(r + ".out", g.irsk.out, fn);
}

template <typename T, typename Fn>
void visit_net(const NetParams<T>& n, Fn&& fn) {
  for (std::size_t i = 0; i < kScales; ++i) visit_conv("prior." + std::to_string(i), n.prior[i], fn);
  visit_conv("stem", n.stem, fn);
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    for (std::size_t j = 0; j < n.enc[i].size(); ++j) {
      visit_block("enc." + std::to_string(i) + "." + std::to_string(j), n.enc[i][j], fn);
    }
    visit_conv("down." + std::to_string(i), n.down[i], fn);
  }
  for (std::size_t j = 0; j < n.mid.size(); ++j) visit_block("mid." + std::to_string(j), n.mid[j], fn);
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    visit_conv("up." + std::to_string(i), n.up[i], fn);
    visit_conv("fuse." + std::to_string(i), n.fuse[i], fn);
    for (std::size_t j = 0; j < n.dec[i].size(); ++j) {
      visit_block("dec." + std::to_string(i) + "." + std::to_string(j), n.dec[i][j], fn);
    }
  }
  visit_conv("head", n.head, fn);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<double> init_values(const std::string& name, const Shape& shape, std::mt19937_64& rng,
                                const InitOptions& options) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n, 0.0);
  if (ends_with(name, ".a_log")) {
    // A = -(1..m) along the state axis.
    for (std::size_t i = 0; i < shape[0]; ++i) {
      for (std::size_t j = 0; j < shape[1]; ++j) v[i * shape[1] + j] = std::log(static_cast<double>(j + 1));
    }
  } else if (ends_with(name, ".d_skip") || ends_with(name, ".g")) {
    std::fill(v.begin(), v.end(), 1.0);
  } else if (ends_with(name, ".delta_bias")) {
    // softplus(P) = dt with dt log-uniform in [1e-3, 1e-1].
    std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
    for (double& x : v) {
      const double dt = std::exp(u(rng));
      x = dt + std::log(-std::expm1(-dt));
    }
  } else if (ends_with(name, ".b")) {
    // zero
  } else if (name == "head.w" && options.zero_head) {
    // zero
  } else {
    // Weights, including the selection projections.
    std::size_t fan_in = shape[1] * shape[2] * shape[3];
    if (name.rfind("up.", 0) == 0) fan_in = shape[0];  // transposed 2x2 stride 2: one tap per input channel
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& x : v) x = u(rng);
  }
  return v;
}

template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const ConvParams<T>& p, std::size_t groups = 1) {
  return ops::conv2d(x, p.w, p.b, {.stride = 1, .padding = p.w.height() / 2, .groups = groups});
}

}  // namespace

template <typename T>
Tensor<T> compute_prior(const Tensor<T>& low) {
  if (low.channels() != 3) {
    throw DimensionError("illumination prior needs a 3-channel image, got " + dimlight::to_string(low.shape()));
  }
  return ops::concat<T>({low, ops::channel_mean(low), ops::channel_max(low)});
}

template <typename T>
std::array<Tensor<T>, kScales> prior_pyramid(const Tensor<T>& lp, const std::array<ConvParams<T>, kScales>& convs) {
  if (lp.height() % 4 != 0 || lp.width() % 4 != 0) {
    throw DimensionError("prior pyramid needs extents divisible by 4, got " + dimlight::to_string(lp.shape()));
  }
  std::array<Tensor<T>, kScales> out;
  out[0] = conv_same(lp, convs[0]);
  for (std::size_t i = 1; i < kScales; ++i) {
    out[i] = ops::conv2d(out[i - 1], convs[i].w, convs[i].b, {.stride = 2, .padding = 1});
  }
  return out;
}

template <typename T>
Tensor<T> lessm_forward(const Tensor<T>& f, const Tensor<T>& prior, const LessmParams<T>& p, bool scan_enabled) {
  const auto parts = ops::chunk(ops::linear(f, p.in_proj.w, p.in_proj.b), 2);
  const std::size_t e = parts[0].channels();
  const Tensor<T> x = ops::silu(conv_same(ops::linear(parts[0], p.x_proj.w, p.x_proj.b), p.dw, e));
  Tensor<T> bias;
  if (p.bias_conv.defined() && prior.defined()) bias = conv_same(prior, p.bias_conv);
  const Tensor<T> scanned =
      sscan::ssm_2d(x, p.ssm, bias, scan_enabled ? sscan::ScanMode::kFull : sscan::ScanMode::kSkipOnly);
  const Tensor<T> branch1 = ops::layernorm(scanned, p.ln_g, p.ln_b);
  const Tensor<T> branch2 = ops::silu(ops::linear(parts[1], p.z_proj.w, p.z_proj.b));
  return ops::linear(ops::mul(branch1, branch2), p.out_proj.w, p.out_proj.b);
}

template <typename T>
Tensor<T> irsk_forward(const Tensor<T>& x, const Tensor<T>& prior, const IrskParams<T>& p) {
  if (p.dw.empty()) throw ConfigError("IRSK needs at least one kernel");
  const std::size_t c = x.channels();
  std::vector<Tensor<T>> gates;
  if (p.gate.defined() && prior.defined()) gates = ops::chunk(ops::sigmoid(conv_same(prior, p.gate)), p.dw.size());
  Tensor<T> cur = x;
  Tensor<T> fused;
  for (std::size_t k = 0; k < p.dw.size(); ++k) {
    cur = conv_same(cur, p.dw[k], c);
    const Tensor<T> term = gates.empty() ? cur : ops::mul(cur, gates[k]);
    fused = fused.defined() ? ops::add(fused, term) : term;
  }
  fused = ops::add(fused, x);
  return ops::linear(ops::gelu(conv_same(fused, p.fuse_dw, c)), p.out.w, p.out.b);
}

template <typename T>
Tensor<T> glssb_forward(const Tensor<T>& f, const Tensor<T>& prior, const GlssbParams<T>& p, bool scan_enabled) {
  const Tensor<T> m = ops::add(lessm_forward(ops::layernorm(f, p.ln1_g, p.ln1_b), prior, p.lessm, scan_enabled), f);
  if (p.irsk.dw.empty()) return m;
  return ops::add(irsk_forward(ops::layernorm(m, p.ln2_g, p.ln2_b), prior, p.irsk), m);
}

template <typename T>
Network<T>::Network(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t c = config_.base_width;
  auto width = [c](std::size_t scale) { return c << scale; };
  if (config_.uses_prior()) {
    params_.prior[0] = make_conv<T>(c, 5, 3);
    for (std::size_t i = 1; i < kScales; ++i) params_.prior[i] = make_conv<T>(width(i), width(i - 1), 3);
  }
  params_.stem = make_conv<T>(c, 3, 3);
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    for (std::size_t j = 0; j < config_.enc_depths[i]; ++j) params_.enc[i].push_back(make_block<T>(config_, width(i)));
    params_.down[i] = make_conv<T>(width(i + 1), width(i), 3);
  }
  for (std::size_t j = 0; j < config_.bottleneck_depth; ++j) {
    params_.mid.push_back(make_block<T>(config_, width(kScales - 1)));
  }
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    const std::size_t level = kScales - 2 - i;
    const std::size_t w = width(level);
    params_.up[i] = {Tensor<T>(Shape{width(level + 1), w, 2, 2}), vec<T>(w)};
    params_.fuse[i] = make_linear<T>(w, 2 * w);
    for (std::size_t j = 0; j < config_.dec_depths[i]; ++j) params_.dec[i].push_back(make_block<T>(config_, w));
  }
  params_.head = make_conv<T>(3, c, 3);
}

template <typename T>
void Network<T>::init(std::uint64_t seed, const InitOptions& options) {
  std::mt19937_64 rng(seed);
  for (auto& [name, t] : parameters()) {
    const std::vector<double> v = init_values(name, t.shape(), rng, options);
    auto dst = t.data();
    for (std::size_t i = 0; i < v.size(); ++i) dst[i] = static_cast<T>(v[i]);
  }
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& low) const {
  if (low.channels() != 3 || low.height() % 4 != 0 || low.width() % 4 != 0 || low.height() == 0 ||
      low.width() == 0) {
    throw DimensionError("network input must be (b, 3, h, w) with h, w positive multiples of 4, got " +
                         dimlight::to_string(low.shape()));
  }
  const auto& n = params_;
  const bool scan = config_.scan_enabled;
  std::array<Tensor<T>, kScales> priors;
  if (config_.uses_prior()) priors = prior_pyramid(compute_prior(low), n.prior);

  Tensor<T> x = conv_same(low, n.stem);
  std::array<Tensor<T>, kScales - 1> skips;
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    for (const auto& blk : n.enc[i]) x = glssb_forward(x, priors[i], blk, scan);
    skips[i] = x;
    x = ops::conv2d(x, n.down[i].w, n.down[i].b, {.stride = 2, .padding = 1});
  }
  for (const auto& blk : n.mid) x = glssb_forward(x, priors[kScales - 1], blk, scan);
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    const std::size_t level = kScales - 2 - i;
    x = ops::conv_transpose2d(x, n.up[i].w, n.up[i].b, 2);
    x = ops::linear(ops::concat<T>({x, skips[level]}), n.fuse[i].w, n.fuse[i].b);
    for (const auto& blk : n.dec[i]) x = glssb_forward(x, priors[level], blk, scan);
  }
  const Tensor<T> out = conv_same(x, n.head);
  if (config_.prior_mode == PriorMode::kExplicit) {
    // Lighting-up illumination I = 1 + softplus(out) >= 1, N = L * I.
    return ops::mul(low, ops::add_scalar(ops::softplus(out), T(1)));
  }
  return ops::add(out, low);
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  visit_net(params_, [&out](const std::string& name, const Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t total = 0;
  visit_net(params_, [&total](const std::string&, const Tensor<T>& t) { total += t.numel(); });
  return total;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
  Network<U> out(config_);
  const auto src = parameters();
  const auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto d = dst[i].tensor;
    auto s = src[i].tensor.data();
    for (std::size_t j = 0; j < s.size(); ++j) d.data()[j] = static_cast<U>(s[j]);
  }
  return out;
}

std::size_t count_parameters(const ModelConfig& config) { return Network<float>(config).parameter_count(); }

SupportInterval conv_support(const ModelConfig& config) {
  config.validate();
  // Intervals are offsets in input pixels around f * i for a pixel i at a
  // scale with stride factor f.
  struct Iv {
    long lo, hi;
  };
  auto merge = [](Iv a, Iv b) { return Iv{std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; };
  auto conv = [](Iv a, long r, long f) { return Iv{a.lo - f * r, a.hi + f * r}; };
  auto down = [](Iv a, long f) { return Iv{a.lo - f, a.hi + f}; };  // 3x3 stride 2 from scale f
  auto up = [](Iv a, long f) { return Iv{a.lo - f, a.hi}; };        // 2x2 stride 2 onto scale f
  const bool prior = config.uses_prior();

  std::array<Iv, kScales> pr{};
  pr[0] = conv(Iv{0, 0}, 1, 1);
  for (std::size_t i = 1; i < kScales; ++i) pr[i] = down(pr[i - 1], 1L << (i - 1));

  auto block = [&](Iv x, std::size_t scale) {
    const long f = 1L << scale;
    Iv t = conv(x, 1, f);  // depthwise 3x3 before the scan
    if (prior && config.local_bias_enabled) t = merge(t, conv(pr[scale], 1, f));
    const Iv m = merge(t, x);
    if (!config.irsk_enabled) return m;
    Iv fused = m;
    Iv cur = m;
    for (std::size_t k : config.irsk_kernels) {
      cur = conv(cur, static_cast<long>(k / 2), f);
      fused = merge(fused, cur);
    }
    if (prior) fused = merge(fused, conv(pr[scale], 1, f));
    return merge(conv(fused, 1, f), m);
  };

  Iv x = conv(Iv{0, 0}, 1, 1);
  std::array<Iv, kScales - 1> skips{};
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    for (std::size_t j = 0; j < config.enc_depths[i]; ++j) x = block(x, i);
    skips[i] = x;
    x = down(x, 1L << i);
  }
  for (std::size_t j = 0; j < config.bottleneck_depth; ++j) x = block(x, kScales - 1);
  for (std::size_t i = 0; i + 1 < kScales; ++i) {
    const std::size_t level = kScales - 2 - i;
    x = merge(up(x, 1L << level), skips[level]);
    for (std::size_t j = 0; j < config.dec_depths[i]; ++j) x = block(x, level);
  }
  x = conv(x, 1, 1);
  x = merge(x, Iv{0, 0});  // global residual / illumination product
  return {x.lo, x.hi};
}

#define DIMLIGHT_INSTANTIATE_MODEL(T)                                                                         \
  template Tensor<T> compute_prior<T>(const Tensor<T>&);                                                     \
  template std::array<Tensor<T>, kScales> prior_pyramid<T>(const Tensor<T>&,                                 \
                                                           const std::array<ConvParams<T>, kScales>&);       \
  template Tensor<T> lessm_forward<T>(const Tensor<T>&, const Tensor<T>&, const LessmParams<T>&, bool);      \
  template Tensor<T> irsk_forward<T>(const Tensor<T>&, const Tensor<T>&, const IrskParams<T>&);              \
  template Tensor<T> glssb_forward<T>(const Tensor<T>&, const Tensor<T>&, const GlssbParams<T>&, bool);      \
  template class Network<T>;

DIMLIGHT_INSTANTIATE_MODEL(float)
DIMLIGHT_INSTANTIATE_MODEL(double)

template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;
template Network<float> Network<float>::cast<float>() const;
template Network<double> Network<double>::cast<double>() const;

}  // namespace dimlight::model
