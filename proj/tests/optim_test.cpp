#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dualadam/optim.hpp"

using namespace dualadam;

namespace {

// Textbook Adam / InvAdam, written out independently of the library.
struct ReferenceAdam {
  double lr, b1, b2, eps;
  bool inverse = false;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& theta, const std::vector<double>& g) {
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * (inverse ? mh * std::sqrt(vh) : mh / (std::sqrt(vh) + eps));
    }
  }
};

std::vector<std::vector<double>> gradient_stream(std::size_t steps, std::size_t p, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> out(steps, std::vector<double>(p));
  for (auto& g : out)
    for (auto& x : g) x = n(rng);
  return out;
}

OptimizerConfig constant_alpha(double a) {
  OptimizerConfig c;
  c.kind = OptimizerKind::DualAdam;
  c.schedule.kind = ScheduleKind::ConstantAlpha;
  c.schedule.fixed_alpha = a;
  return c;
}

}  // namespace

TEST(UpdateMoments, SpecArithmetic) {
  OptimizerConfig c;
  OptimizerState s(1);
  s.m = {0.5};
  std::vector<double> g{1.5};
  update_moments(s, g, c);
  EXPECT_NEAR(s.m[0], 0.6, 1e-15);
  EXPECT_EQ(s.t, 1);

  OptimizerState z(1);
  std::vector<double> g2{2.0};
  update_moments(z, g2, c);
  EXPECT_NEAR(z.v[0], 0.004, 1e-15);
}

TEST(UpdateMoments, ZeroGradientDecays) {
  OptimizerConfig c;
  OptimizerState s(3);
  s.m = {1.0, -2.0, 0.5};
  s.v = {4.0, 1.0, 0.25};
  const auto m0 = s.m, v0 = s.v;
  std::vector<double> g(3, 0.0);
  update_moments(s, g, c);
  for (int i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(s.m[i], c.beta1 * m0[i]);
    EXPECT_DOUBLE_EQ(s.v[i], c.beta2 * v0[i]);
  }
}

TEST(UpdateMoments, Errors) {
  OptimizerConfig c;
  OptimizerState s(2);
  std::vector<double> short_g{1.0};
  EXPECT_THROW(update_moments(s, short_g, c), Error);
  std::vector<double> bad{1.0, std::nan("")};
  try {
    update_moments(s, bad, c);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("index 1"), std::string::npos);
  }
}

TEST(BiasCorrect, FirstStepRecoversGradient) {
  OptimizerConfig c;
  OptimizerState s(2);
  std::vector<double> g{0.3, -1.7};
  update_moments(s, g, c);
  const auto bc = bias_correct(s, c);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(bc.m_hat[i], g[i], 1e-15);
    EXPECT_NEAR(bc.v_hat[i], g[i] * g[i], 1e-14);
  }
}

TEST(BiasCorrect, SecondStep) {
  OptimizerConfig c;
  OptimizerState s(1);
  s.m = {0.19};
  s.t = 2;
  EXPECT_NEAR(bias_correct(s, c).m_hat[0], 1.0, 1e-15);
}

TEST(BiasCorrect, RejectsStepZero) {
  OptimizerState s(1);
  EXPECT_THROW(bias_correct(s, OptimizerConfig{}), Error);
}

TEST(Updates, SpecExamples) {
  EXPECT_DOUBLE_EQ(adam_update(std::vector{0.1}, std::vector{0.01}, 0.0)[0], 1.0);
  EXPECT_DOUBLE_EQ(adam_update(std::vector{1.0}, std::vector{4.0}, 0.0)[0], 0.5);
  EXPECT_EQ(adam_update(std::vector{0.0}, std::vector{3.0}, 1e-8)[0], 0.0);
  EXPECT_NEAR(invadam_update(std::vector{0.1}, std::vector{0.01})[0], 0.01, 1e-17);
  EXPECT_DOUBLE_EQ(invadam_update(std::vector{1.0}, std::vector{4.0})[0], 2.0);
  EXPECT_DOUBLE_EQ(adam_update(std::vector{1.0}, std::vector{4.0}, 0.0)[0] *
                       invadam_update(std::vector{1.0}, std::vector{4.0})[0],
                   1.0);
}

TEST(Updates, GeometricMeanIdentity) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> lv(-8.0, 4.0);
  double worst = 0.0;
  for (int k = 0; k < 100000; ++k) {
    const double m = n(rng);
    const double v = std::pow(10.0, lv(rng));
    const double prod = kernel::adam(m, v, 0.0) * kernel::invadam(m, v);
    if (m != 0.0) worst = std::max(worst, std::abs(prod - m * m) / (m * m));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Updates, MonotoneOpposition) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(1e-6, 10.0);
  for (int k = 0; k < 10000; ++k) {
    const double m = u(rng);
    double v1 = u(rng), v2 = u(rng);
    if (v1 == v2) continue;
    if (v1 > v2) std::swap(v1, v2);
    EXPECT_GT(kernel::adam(m, v1, 1e-8), kernel::adam(m, v2, 1e-8));
    EXPECT_LT(kernel::invadam(m, v1), kernel::invadam(m, v2));
  }
}

TEST(Updates, SignFollowsMomentum) {
  for (double m : {-2.0, -1e-3, 1e-3, 2.0}) {
    EXPECT_EQ(std::signbit(kernel::adam(m, 0.5, 1e-8)), std::signbit(m));
    EXPECT_EQ(std::signbit(kernel::invadam(m, 0.5)), std::signbit(m));
  }
}

TEST(Blend, ConvexCombination) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0), a(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const double x = u(rng), y = u(rng), al = a(rng);
    const double b = kernel::blend(al, x, y);
    EXPECT_GE(b, std::min(x, y) - 1e-15);
    EXPECT_LE(b, std::max(x, y) + 1e-15);
  }
  EXPECT_EQ(kernel::blend(0.0, 3.0, 7.0), 7.0);
  EXPECT_EQ(kernel::blend(1.0, 3.0, 7.0), 3.0);
}

TEST(Schedule, SpecExamples) {
  Schedule lin;
  lin.rate = 8e-5;
  EXPECT_EQ(alpha_at(lin, 12500), 0.0);
  EXPECT_NEAR(alpha_at(lin, 6250), 0.5, 1e-12);
  Schedule ex{ScheduleKind::Exponential};
  ex.base = 0.99;
  EXPECT_NEAR(alpha_at(ex, 100), 0.3660, 5e-5);
  Schedule fe{ScheduleKind::FixedEpoch};
  fe.switch_epoch = 10;
  EXPECT_EQ(alpha_at(fe, 1, 9), 1.0);
  EXPECT_EQ(alpha_at(fe, 1, 10), 0.0);
  Schedule ca{ScheduleKind::ConstantAlpha};
  ca.fixed_alpha = 0.25;
  EXPECT_EQ(alpha_at(ca, 12345), 0.25);
}

TEST(Schedule, LinearAndExponentialNonIncreasing) {
  for (double rate : {1e-5, 8e-5, 1e-4, 3e-3, 0.3}) {
    Schedule s;
    s.rate = rate;
    const std::int64_t stop = linear_switch_iteration(rate);
    double prev = 1.0;
    for (std::int64_t t = 1; t <= stop + 100; ++t) {
      const double a = alpha_at(s, t);
      ASSERT_LE(a, prev);
      ASSERT_GE(a, 0.0);
      if (t >= stop) ASSERT_EQ(a, 0.0) << "rate " << rate << " t " << t;
      prev = a;
    }
    EXPECT_GT(alpha_at(s, stop - 1), 0.0);
  }
  for (double base : {0.8, 0.9, 0.99}) {
    Schedule s{ScheduleKind::Exponential};
    s.base = base;
    double prev = 1.0;
    for (std::int64_t t = 1; t < 2000; ++t) {
      ASSERT_LE(alpha_at(s, t), prev);
      prev = alpha_at(s, t);
    }
  }
}

TEST(Schedule, ZeroRateStaysInverse) {
  Schedule s;
  s.rate = 0.0;
  EXPECT_EQ(alpha_at(s, 1000000), 1.0);
}

TEST(Schedule, SwitchFraction) {
  const double r = rate_for_switch_fraction(0.16, 10000);
  EXPECT_EQ(linear_switch_iteration(r), 1600);
  EXPECT_THROW(rate_for_switch_fraction(0.0, 100), Error);
}

TEST(Config, Validation) {
  OptimizerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.weight_decay = 0.01;
  EXPECT_THROW(c.validate(), Error);
  c.kind = OptimizerKind::AdamW;
  EXPECT_NO_THROW(c.validate());
  OptimizerConfig b;
  b.beta1 = 1.0;
  EXPECT_THROW(b.validate(), Error);
  OptimizerConfig e;
  e.epsilon = 0.0;
  EXPECT_THROW(e.validate(), Error);
  OptimizerConfig l;
  l.learning_rate = -1.0;
  EXPECT_THROW(l.validate(), Error);
}

TEST(Config, ParseNames) {
  EXPECT_EQ(parse_optimizer("invadam"), OptimizerKind::InvAdam);
  try {
    parse_optimizer("sgd");
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    for (const char* n : {"adam", "adamw", "invadam", "dualadam"}) EXPECT_NE(msg.find(n), std::string::npos);
  }
  EXPECT_EQ(parse_schedule("fixed_epoch"), ScheduleKind::FixedEpoch);
  EXPECT_THROW(parse_schedule("cosine"), Error);
}

TEST(Step, ReducesToAdam) {
  const std::size_t p = 64;
  const auto grads = gradient_stream(1000, p, 42);
  std::vector<double> theta(p, 0.5), ref_theta(p, 0.5);
  OptimizerState st(p);
  const OptimizerConfig c = constant_alpha(0.0);
  ReferenceAdam ref{c.learning_rate, c.beta1, c.beta2, c.epsilon};
  double worst = 0.0;
  for (const auto& g : grads) {
    step(st, theta, g, c);
    ref.step(ref_theta, g);
    for (std::size_t i = 0; i < p; ++i) worst = std::max(worst, std::abs(theta[i] - ref_theta[i]));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Step, ReducesToInvAdamBitForBit) {
  const std::size_t p = 64;
  const auto grads = gradient_stream(1000, p, 43);
  std::vector<double> a(p, 0.5), b(p, 0.5), r(p, 0.5);
  OptimizerState sa(p), sb(p);
  OptimizerConfig inv;
  inv.kind = OptimizerKind::InvAdam;
  const OptimizerConfig dual = constant_alpha(1.0);
  ReferenceAdam ref{inv.learning_rate, inv.beta1, inv.beta2, inv.epsilon, true};
  double worst = 0.0;
  for (const auto& g : grads) {
    step(sa, a, g, dual);
    step(sb, b, g, inv);
    ref.step(r, g);
    for (std::size_t i = 0; i < p; ++i) worst = std::max(worst, std::abs(a[i] - r[i]));
  }
  EXPECT_EQ(a, b);
  EXPECT_LE(worst, 1e-12);
}

TEST(Step, AdamAlphaZeroIsBitIdenticalToAdamKind) {
  const std::size_t p = 16;
  const auto grads = gradient_stream(1000, p, 44);
  std::vector<double> a(p, 0.0), b(p, 0.0);
  OptimizerState sa(p), sb(p);
  OptimizerConfig adam;
  adam.kind = OptimizerKind::Adam;
  for (const auto& g : grads) {
    step(sa, a, g, constant_alpha(0.0));
    step(sb, b, g, adam);
  }
  EXPECT_EQ(a, b);
}

TEST(Step, FirstAdamStepMovesByLearningRate) {
  OptimizerConfig c;
  c.kind = OptimizerKind::Adam;
  c.epsilon = 1e-300;
  std::vector<double> theta{1.0, 1.0, 1.0}, g{3.0, -0.01, 0.0};
  OptimizerState s(3);
  step(s, theta, g, c);
  EXPECT_NEAR(theta[0], 1.0 - c.learning_rate, 1e-15);
  EXPECT_NEAR(theta[1], 1.0 + c.learning_rate, 1e-15);
  EXPECT_EQ(theta[2], 1.0);
}

TEST(Step, AdamWDecoupledDecay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::AdamW;
  c.weight_decay = 0.1;
  std::vector<double> theta{2.0}, g{0.0};
  OptimizerState s(1);
  step(s, theta, g, c);
  EXPECT_NEAR(theta[0], 2.0 - c.learning_rate * 0.1 * 2.0, 1e-15);
}

TEST(Step, ReportInvariants) {
  const std::size_t p = 32;
  const auto grads = gradient_stream(300, p, 45);
  std::vector<double> theta(p, 0.0);
  OptimizerState s(p);
  OptimizerConfig c;
  c.schedule.rate = 1.0 / 200.0;
  std::int64_t t = 0;
  for (const auto& g : grads) {
    const auto r = step(s, theta, g, c);
    ++t;
    EXPECT_EQ(s.t, t);
    EXPECT_GE(r.alpha, 0.0);
    EXPECT_LE(r.alpha, 1.0);
    EXPECT_LE(r.update_norm, r.alpha * r.inv_part_norm + (1 - r.alpha) * r.adam_part_norm + 1e-12);
    for (double v : s.v) EXPECT_GE(v, 0.0);
  }
}

TEST(Step, ShardedEqualsUnsharded) {
  const std::size_t p = 3 * kShardBlock + 123;
  const auto grads = gradient_stream(20, p, 46);
  std::vector<double> a(p, 0.1), b(p, 0.1);
  OptimizerState sa(p), sb(p);
  OptimizerConfig c;
  c.schedule.rate = 0.05;
  for (const auto& g : grads) {
    const auto ra = step(sa, a, g, c, 0, 1);
    const auto rb = step(sb, b, g, c, 0, 4);
    ASSERT_EQ(ra.update_norm, rb.update_norm);
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa.m, sb.m);
  EXPECT_EQ(sa.v, sb.v);
}

TEST(Step, Deterministic) {
  const auto grads = gradient_stream(100, 8, 47);
  auto run = [&] {
    std::vector<double> th(8, 0.0);
    OptimizerState s(8);
    for (const auto& g : grads) step(s, th, g, OptimizerConfig{});
    return th;
  };
  EXPECT_EQ(run(), run());
}

TEST(Step, LengthMismatch) {
  OptimizerState s(2);
  std::vector<double> th(3, 0.0), g(3, 0.0);
  EXPECT_THROW(step(s, th, g, OptimizerConfig{}), Error);
}

TEST(Flops, PaperCounts) {
  for (std::int64_t p : {1, 7, 1000, 1000000, 123456789}) {
    EXPECT_EQ(flops_per_iteration(p, OptimizerKind::DualAdam, true), 18 * p);
    EXPECT_EQ(flops_per_iteration(p, OptimizerKind::Adam, false), 14 * p);
    EXPECT_EQ(flops_per_iteration(p, OptimizerKind::DualAdam, false), 14 * p);
  }
  const auto f = flop_breakdown(OptimizerKind::DualAdam, true);
  EXPECT_EQ(f.moments, 7);
  EXPECT_EQ(f.bias, 2);
  EXPECT_EQ(f.update, 4);
  EXPECT_EQ(f.fusion, 3);
  EXPECT_EQ(f.weight, 2);
  EXPECT_NEAR(dual_overhead_fraction(128), 4.0 / (6.0 * 128.0), 1e-15);
  EXPECT_NEAR(dual_overhead_fraction(128), 0.0052, 1e-4);
}
