#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "dimlight/errors.h"
#include "dimlight/model/network.h"
#include "dimlight/tensor/gradcheck.h"
#include "dimlight/tensor/ops.h"
#include "dimlight/tensor/tape.h"
#include "test_util.h"

namespace dimlight::model {
namespace {

using testing::max_abs_diff;
using testing::randn;
using testing::uniform;

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

ModelConfig small_config(std::size_t c = 8) {
  ModelConfig cfg;
  cfg.base_width = c;
  return cfg;
}

template <typename T>
Tensor<T> conv_same(const Tensor<T>& x, const ConvParams<T>& p, std::size_t groups = 1) {
  return ops::conv2d(x, p.w, p.b, {.stride = 1, .padding = p.w.height() / 2, .groups = groups});
}

// Input gradient of sum_c N[b=0, c, y, x], L1 over channels.
template <typename T>
std::vector<double> pixel_sensitivity(const Network<T>& net, const Tensor<T>& low, std::size_t y, std::size_t x) {
  Tensor<T> in = low.clone();
  in.set_requires_grad(true);
  Tape<T> tape;
  Tensor<T> loss;
  {
    auto rec = tape.record();
    const Tensor<T> out = net.forward(in);
    Tensor<T> mask(out.shape());
    for (std::size_t c = 0; c < 3; ++c) mask(0, c, y, x) = T(1);
    loss = ops::sum(ops::mul(out, mask));
  }
  tape.backward(loss);
  const std::size_t h = low.height(), w = low.width();
  std::vector<double> map(h * w, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) map[i] += std::abs(static_cast<double>(in.grad()[c * h * w + i]));
  }
  return map;
}

// ---- prior ---------------------------------------------------------------

TEST(Prior, PixelExample) {
  Tensor<double> low(Shape{1, 3, 1, 1}, std::vector<double>{0.2, 0.4, 0.6});
  const auto lp = compute_prior(low);
  ASSERT_EQ(lp.shape(), (Shape{1, 5, 1, 1}));
  const double want[5] = {0.2, 0.4, 0.6, 0.4, 0.6};
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(lp.data()[c], want[c], 1e-15);
}

TEST(Prior, BlackAndGray) {
  EXPECT_EQ(max_abs_diff(compute_prior(Tensor<float>(Shape{2, 3, 4, 4})), Tensor<float>(Shape{2, 5, 4, 4})), 0.0);
  const auto lp = compute_prior(Tensor<double>(Shape{1, 3, 2, 2}, 0.37));
  for (std::size_t c = 3; c < 5; ++c) {
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(lp.data()[c * 4 + i], 0.37, 1e-15);
  }
  EXPECT_THROW(compute_prior(Tensor<float>(Shape{1, 4, 4, 4})), DimensionError);
}

TEST(Prior, PyramidShapes) {
  Network<float> net(small_config(6));
  net.init(3);
  const auto pyr = prior_pyramid(compute_prior(uniform<float>(Shape{2, 3, 64, 64}, 1, 0, 1)), net.params().prior);
  for (std::size_t i = 0; i < kScales; ++i) {
    EXPECT_EQ(pyr[i].shape(), (Shape{2, 6u << i, 64u >> i, 64u >> i}));
  }
  EXPECT_THROW(prior_pyramid(Tensor<float>(Shape{1, 5, 30, 32}), net.params().prior), DimensionError);
}

TEST(Prior, ZeroInZeroOut) {
  Network<double> net(small_config());
  net.init(5);
  for (const auto& t : prior_pyramid(Tensor<double>(Shape{1, 5, 16, 16}), net.params().prior)) {
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Prior, GradientReachesImage) {
  Network<double> net(small_config());
  net.init(5);
  Tensor<double> low = uniform<double>(Shape{1, 3, 16, 16}, 2, 0.1, 0.9);
  low.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss;
  {
    auto rec = tape.record();
    loss = ops::sum(prior_pyramid(compute_prior(low), net.params().prior)[2]);
  }
  tape.backward(loss);
  double total = 0;
  for (double g : low.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

// ---- LESSM ---------------------------------------------------------------

TEST(Lessm, ZeroInputZeroOutput) {
  Network<double> net(small_config());
  net.init(7);
  const auto& p = net.params().enc[0][0].lessm;
  const auto out = lessm_forward(Tensor<double>(Shape{1, 8, 16, 16}), Tensor<double>(Shape{1, 8, 16, 16}), p, true);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Lessm, ShapePreserved) {
  Network<float> net(small_config());
  net.init(7);
  const auto out = lessm_forward(randn<float>(Shape{1, 8, 16, 16}, 1), randn<float>(Shape{1, 8, 16, 16}, 2),
                                 net.params().enc[0][0].lessm, true);
  EXPECT_EQ(out.shape(), (Shape{1, 8, 16, 16}));
}

TEST(Lessm, LocalBiasChangesOutput) {
  Network<double> net(small_config());
  net.init(7);
  const auto& p = net.params().enc[0][0].lessm;
  ASSERT_TRUE(p.bias_conv.defined());
  const auto f = randn<double>(Shape{1, 8, 16, 16}, 1);
  const auto prior = randn<double>(Shape{1, 8, 16, 16}, 2);
  EXPECT_GT(max_abs_diff(lessm_forward(f, prior, p, true), lessm_forward(f, Tensor<double>{}, p, true)), 1e-6);
}

TEST(Lessm, NoBiasConvWithoutLocalBias) {
  auto cfg = small_config();
  cfg.local_bias_enabled = false;
  Network<float> net(cfg);
  EXPECT_FALSE(net.params().enc[0][0].lessm.bias_conv.defined());
}

// ---- IRSK ----------------------------------------------------------------

class IrskGate : public ::testing::Test {
 protected:
  void SetUp() override {
    net.init(11);
    x = randn<double>(Shape{1, 8, 12, 12}, 3);
    prior = randn<double>(Shape{1, 8, 12, 12}, 4);
  }
  IrskParams<double>& params() { return net.params().enc[0][0].irsk; }
  Tensor<double> tail(const Tensor<double>& fused) {
    const auto& p = params();
    return ops::linear(ops::gelu(conv_same(fused, p.fuse_dw, 8)), p.out.w, p.out.b);
  }

  Network<double> net{small_config()};
  Tensor<double> x, prior;
};

TEST_F(IrskGate, ClosedGatesPassInputThrough) {
  for (double& v : params().gate.b.data()) v = -1e3;
  EXPECT_TRUE(bit_equal(irsk_forward(x, prior, params()), tail(x)));
}

TEST_F(IrskGate, OpenGatesSumTheCascade) {
  for (double& v : params().gate.b.data()) v = 1e3;
  const auto f1 = conv_same(x, params().dw[0], 8);
  const auto f2 = conv_same(f1, params().dw[1], 8);
  EXPECT_LT(max_abs_diff(irsk_forward(x, prior, params()), tail(ops::add(ops::add(f1, f2), x))), 1e-12);
}

TEST_F(IrskGate, GatesStrictlyInsideUnitInterval) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto pr = randn<double>(Shape{1, 8, 12, 12}, 100 + s, 3.0);
    const auto gates = ops::sigmoid(conv_same(pr, params().gate));
    for (double g : gates.data()) {
      ASSERT_GT(g, 0.0);
      ASSERT_LT(g, 1.0);
    }
  }
}

TEST_F(IrskGate, EmptyKernelListRejected) {
  IrskParams<double> p = params();
  p.dw.clear();
  EXPECT_THROW(irsk_forward(x, prior, p), ConfigError);
}

// ---- GLSSB ---------------------------------------------------------------

TEST(Glssb, ZeroOutputProjectionsGiveIdentity) {
  Network<float> net(small_config());
  net.init(13);
  GlssbParams<float> p = net.params().enc[1][0];
  for (auto* t : {&p.lessm.out_proj.w, &p.lessm.out_proj.b, &p.irsk.out.w, &p.irsk.out.b}) {
    for (float& v : t->data()) v = 0.0f;
  }
  const auto f = randn<float>(Shape{2, 16, 8, 8}, 5);
  const auto prior = randn<float>(Shape{2, 16, 8, 8}, 6);
  EXPECT_TRUE(bit_equal(glssb_forward(f, prior, p, true), f));
}

TEST(Glssb, IrskToggleRemovesExactlyItsParameters) {
  auto cfg = small_config();
  Network<float> full(cfg);
  std::size_t irsk_total = 0;
  for (const auto& [name, t] : full.parameters()) {
    if (name.find(".irsk.") != std::string::npos || name.find(".ln2.") != std::string::npos) irsk_total += t.numel();
  }
  cfg.irsk_enabled = false;
  EXPECT_GT(irsk_total, 0u);
  EXPECT_EQ(full.parameter_count() - count_parameters(cfg), irsk_total);
}

TEST(Glssb, ShapePreservedAtEveryScale) {
  Network<float> net(small_config(4));
  net.init(1);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::size_t c = 4u << i;
    const auto f = randn<float>(Shape{1, c, 8, 8}, i);
    EXPECT_EQ(glssb_forward(f, randn<float>(Shape{1, c, 8, 8}, 9), net.params().enc[i][0], true).shape(), f.shape());
  }
}

// ---- network -------------------------------------------------------------

TEST(Network, FreshImplicitModelIsBitIdentity) {
  Network<float> net(small_config());
  net.init(17);
  const auto low = uniform<float>(Shape{2, 3, 32, 32}, 8, 0, 1);
  EXPECT_TRUE(bit_equal(net.forward(low), low));
}

TEST(Network, ExplicitModeWithUnitIlluminationIsIdentity) {
  auto cfg = small_config();
  cfg.prior_mode = PriorMode::kExplicit;
  Network<float> net(cfg);
  net.init(17);
  for (float& v : net.params().head.b.data()) v = -1e3f;
  const auto low = uniform<float>(Shape{1, 3, 16, 16}, 8, 0, 1);
  EXPECT_TRUE(bit_equal(net.forward(low), low));
}

TEST(Network, ExplicitModeNeverDarkens) {
  auto cfg = small_config();
  cfg.prior_mode = PriorMode::kExplicit;
  Network<double> net(cfg);
  net.init(17, {.zero_head = false});
  const auto low = uniform<double>(Shape{1, 3, 16, 16}, 8, 0, 1);
  const auto out = net.forward(low);
  for (std::size_t i = 0; i < low.numel(); ++i) EXPECT_GE(out.data()[i], low.data()[i]);
}

TEST(Network, InitIsDeterministicInSeed) {
  Network<float> a(small_config()), b(small_config()), c(small_config());
  a.init(42);
  b.init(42);
  c.init(43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(bit_equal(pa[i].tensor, pb[i].tensor)) << pa[i].name;
    any_diff = any_diff || !bit_equal(pa[i].tensor, pc[i].tensor);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, ParameterNamesAreUnique) {
  Network<float> net(small_config());
  std::set<std::string> names;
  for (const auto& [name, t] : net.parameters()) EXPECT_TRUE(names.insert(name).second) << name;
  EXPECT_EQ(net.parameter_count(), count_parameters(small_config()));
}

TEST(Network, ShapeContract) {
  Network<float> net(small_config(4));
  net.init(2, {.zero_head = false});
  for (std::size_t h : {8, 20, 36, 64, 100, 128}) {
    for (std::size_t w : {8, 44, 128}) {
      EXPECT_EQ(net.forward(Tensor<float>(Shape{1, 3, h, w}, 0.25f)).shape(), (Shape{1, 3, h, w}));
    }
  }
  EXPECT_THROW(net.forward(Tensor<float>(Shape{1, 3, 30, 32})), DimensionError);
  EXPECT_THROW(net.forward(Tensor<float>(Shape{1, 4, 32, 32})), DimensionError);
}

TEST(Network, AblationLattice) {
  const ModelConfig full = small_config();
  auto no_irsk = full;
  no_irsk.irsk_enabled = false;
  auto no_bias = full;
  no_bias.local_bias_enabled = false;
  auto no_prior = full;
  no_prior.prior_mode = PriorMode::kNone;
  auto expl = full;
  expl.prior_mode = PriorMode::kExplicit;
  const std::size_t n = count_parameters(full);
  EXPECT_GT(n, count_parameters(no_irsk));
  EXPECT_GT(n, count_parameters(no_bias));
  EXPECT_GT(n, count_parameters(no_prior));
  EXPECT_EQ(n, count_parameters(expl));

  const auto low = uniform<float>(Shape{1, 3, 16, 16}, 21, 0, 1);
  auto run = [&low](const ModelConfig& cfg) {
    Network<float> net(cfg);
    net.init(9, {.zero_head = false});
    return net.forward(low);
  };
  const auto base = run(full);
  for (const auto& cfg : {no_irsk, no_bias, no_prior, expl}) EXPECT_GT(max_abs_diff(base, run(cfg)), 1e-6);
}

TEST(Network, NoDeadParameters) {
  Network<float> net(small_config(16));
  net.init(23, {.zero_head = false});
  const auto params = net.parameters();
  for (const auto& p : params) Tensor<float>(p.tensor).set_requires_grad(true);
  const auto low = uniform<float>(Shape{2, 3, 32, 32}, 1, 0, 0.4);
  const auto high = uniform<float>(Shape{2, 3, 32, 32}, 2, 0, 1);
  Tape<float> tape;
  Tensor<float> loss;
  {
    auto rec = tape.record();
    loss = ops::mean(ops::abs(ops::sub(net.forward(low), high)));
  }
  tape.backward(loss);
  std::size_t live = 0, total = 0;
  for (const auto& p : params) {
    total += p.tensor.numel();
    if (!p.tensor.has_grad()) continue;
    for (float g : p.tensor.grad()) live += g != 0.0f;
  }
  EXPECT_GT(static_cast<double>(live) / static_cast<double>(total), 0.99) << live << " of " << total;
}

TEST(Network, FullModelSeesTheCorners) {
  Network<double> net(small_config());
  net.init(29, {.zero_head = false});
  const auto map = pixel_sensitivity(net, uniform<double>(Shape{1, 3, 32, 32}, 3, 0, 1), 16, 16);
  for (std::size_t i : {0u, 31u, 31u * 32u, 32u * 32u - 1u}) EXPECT_GT(map[i], 0.0) << "corner " << i;
}

TEST(Network, ConvOnlyVariantHasBoundedSupport) {
  auto cfg = small_config(4);
  cfg.scan_enabled = false;
  const auto sup = conv_support(cfg);
  ASSERT_LT(sup.lo, 0);
  ASSERT_GT(sup.hi, 0);
  Network<float> net(cfg);
  net.init(31, {.zero_head = false});
  const std::size_t n = 224, src = 112;
  ASSERT_LT(static_cast<long>(src) + sup.hi, static_cast<long>(n) - 1);
  ASSERT_GT(static_cast<long>(src) + sup.lo, 0);
  const auto map = pixel_sensitivity(net, uniform<float>(Shape{1, 3, n, n}, 4, 0, 1), src, src);
  long reach_lo = 0, reach_hi = 0;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const long dy = static_cast<long>(y) - static_cast<long>(src);
      const long dx = static_cast<long>(x) - static_cast<long>(src);
      const bool inside = dy >= sup.lo && dy <= sup.hi && dx >= sup.lo && dx <= sup.hi;
      if (!inside) {
        ASSERT_EQ(map[y * n + x], 0.0) << "at (" << y << ", " << x << ")";
      } else if (map[y * n + x] != 0.0) {
        reach_lo = std::min({reach_lo, dy, dx});
        reach_hi = std::max({reach_hi, dy, dx});
      }
    }
  }
  // The bound is not vacuous: influence extends well beyond the stem.
  EXPECT_LT(reach_lo, -20);
  EXPECT_GT(reach_hi, 20);
}

TEST(Network, EndToEndGradientSampled) {
  Network<double> net(small_config());
  net.init(37, {.zero_head = false});
  const auto low = uniform<double>(Shape{1, 3, 16, 16}, 5, 0.05, 0.95);
  const auto weights = randn<double>(Shape{1, 3, 16, 16}, 6);
  std::vector<Tensor<double>> wrt{low};
  for (const auto& p : net.parameters()) wrt.push_back(p.tensor);
  const auto rep = gradcheck::check(
      "network", [&] { return testing::weighted_sum(net.forward(low), weights); }, wrt,
      {.step = 1e-4, .max_entries_per_tensor = 1, .seed = 3});
  std::printf("[ info ] %zu entries, max relative error %.3g\n", rep.entries_checked, rep.max_rel_error);
  EXPECT_LT(rep.max_rel_error, 1e-3) << rep.worst;
}

TEST(Network, CastPreservesValues) {
  Network<float> net(small_config());
  net.init(41);
  const auto back = net.cast<double>().cast<float>();
  const auto a = net.parameters(), b = back.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i].tensor, b[i].tensor));
}

TEST(Network, PaperScaleParameterCount) {
  const std::size_t n = count_parameters(small_config(27));
  std::printf("[ info ] base width 27: %zu parameters\n", n);
  EXPECT_NEAR(static_cast<double>(n), 2.28e6, 0.25 * 2.28e6);
}

// ---- config --------------------------------------------------------------

TEST(Config, Validation) {
  auto bad = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    return c;
  };
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_THROW(bad([](ModelConfig& c) { c.base_width = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.enc_depths = {1, 2, 3}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.irsk_kernels = {5, 3}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.irsk_kernels = {4}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.irsk_kernels = {}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](ModelConfig& c) { c.state_size = 0; }).validate(), ConfigError);
}

TEST(Config, EntriesRoundTrip) {
  ModelConfig c;
  c.base_width = 12;
  c.dec_depths = {3, 1};
  c.prior_mode = PriorMode::kExplicit;
  c.irsk_enabled = false;
  ModelConfig d;
  for (const auto& [k, v] : to_entries(c)) EXPECT_TRUE(apply_entry(d, k, v)) << k;
  EXPECT_EQ(c, d);
  EXPECT_FALSE(apply_entry(d, "widht", "3"));
  EXPECT_THROW(apply_entry(d, "base_width", "x"), ConfigError);
  EXPECT_THROW(apply_entry(d, "prior_mode", "both"), ConfigError);
}

}  // namespace
}  // namespace dimlight::model
