#pragma once

// Adam, AdamW, InvAdam and DualAdam on flat parameter vectors.
//
// All four share the moment estimates and bias correction. They differ only
// in how m̂ and v̂ become an update:
//   Adam     u  = m̂ / (sqrt(v̂) + eps)
//   InvAdam  ũ  = m̂ * sqrt(v̂)
//   DualAdam ū  = alpha * ũ + (1 - alpha) * u,  alpha from a Schedule
// Adam shrinks the step where v̂ is large, InvAdam enlarges it.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualadam/common.hpp"
#include "dualadam/parallel.hpp"

namespace dualadam {

enum class OptimizerKind { Adam, AdamW, InvAdam, DualAdam };
enum class ScheduleKind { Linear, Exponential, FixedEpoch, ConstantAlpha };

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Adam: return "adam";
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::InvAdam: return "invadam";
    case OptimizerKind::DualAdam: return "dualadam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "adamw") return OptimizerKind::AdamW;
  if (name == "invadam") return OptimizerKind::InvAdam;
  if (name == "dualadam") return OptimizerKind::DualAdam;
  throw Error("unknown optimizer '" + std::string(name) +
              "'; valid optimizers: adam, adamw, invadam, dualadam");
}

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::Exponential: return "exponential";
    case ScheduleKind::FixedEpoch: return "fixed_epoch";
    case ScheduleKind::ConstantAlpha: return "constant";
  }
  return "?";
}

inline ScheduleKind parse_schedule(std::string_view name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "exponential") return ScheduleKind::Exponential;
  if (name == "fixed_epoch") return ScheduleKind::FixedEpoch;
  if (name == "constant") return ScheduleKind::ConstantAlpha;
  throw Error("unknown schedule kind '" + std::string(name) +
              "'; valid kinds: linear, exponential, fixed_epoch, constant");
}

/// Maps (iteration, epoch) to the InvAdam share alpha in [0, 1].
struct Schedule {
  ScheduleKind kind = ScheduleKind::Linear;
  double rate = 8e-5;             // Linear: alpha = max(0, 1 - rate * t)
  double base = 0.99;             // Exponential: alpha = base^t
  std::int64_t switch_epoch = 10; // FixedEpoch: 1 before switch_epoch, 0 from it on
  double fixed_alpha = 0.0;       // ConstantAlpha

  void validate() const {
    require(std::isfinite(rate) && rate >= 0.0, "schedule.rate must be >= 0");
    require(base > 0.0 && base <= 1.0, "schedule.base must lie in (0, 1]");
    require(switch_epoch >= 0, "schedule.switch_epoch must be >= 0");
    require(fixed_alpha >= 0.0 && fixed_alpha <= 1.0, "schedule.fixed_alpha must lie in [0, 1]");
  }
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::DualAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // AdamW only
  Schedule schedule{};

  void validate() const {
    require(std::isfinite(learning_rate) && learning_rate > 0.0, "lr must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(std::isfinite(epsilon) && epsilon > 0.0, "eps must be > 0");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
    require(weight_decay == 0.0 || kind == OptimizerKind::AdamW,
            "weight_decay is only supported by adamw");
    schedule.validate();
  }
};

/// Moment estimates and step counter. `t` counts completed steps.
struct OptimizerState {
  Vector m;
  Vector v;
  std::int64_t t = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t p) : m(p, 0.0), v(p, 0.0) {}

  std::size_t size() const { return m.size(); }
};

struct StepReport {
  double alpha = 0.0;
  double update_norm = 0.0;     // ||alpha*ũ + (1-alpha)*u||
  double adam_part_norm = 0.0;  // ||u||
  double inv_part_norm = 0.0;   // ||ũ||
};

// Scalar kernels shared by the vector operations and the fused step so the
// two paths agree bit for bit.
namespace kernel {
inline double first_moment(double m, double g, double beta1) {
  return beta1 * m + (1.0 - beta1) * g;
}
inline double second_moment(double v, double g, double beta2) {
  return beta2 * v + (1.0 - beta2) * (g * g);
}
inline double adam(double m_hat, double v_hat, double eps) {
  return m_hat / (std::sqrt(v_hat) + eps);
}
inline double invadam(double m_hat, double v_hat) { return m_hat * std::sqrt(v_hat); }
inline double blend(double alpha, double inv, double adam) {
  if (alpha == 0.0) return adam;
  if (alpha == 1.0) return inv;
  return alpha * inv + (1.0 - alpha) * adam;
}
}  // namespace kernel

namespace detail {
inline void check_gradient(std::span<const double> g, std::size_t p) {
  if (g.size() != p)
    throw Error("gradient length " + std::to_string(g.size()) + " does not match parameter count " +
                std::to_string(p));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i]))
      throw Error("non-finite gradient element at index " + std::to_string(i));
}
inline double bias_denominator(double beta, std::int64_t t) {
  return 1.0 - std::pow(beta, static_cast<double>(t));
}
}  // namespace detail

/// m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, t <- t+1.
inline void update_moments(OptimizerState& state, std::span<const double> g,
                           const OptimizerConfig& cfg) {
  detail::check_gradient(g, state.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    state.m[i] = kernel::first_moment(state.m[i], g[i], cfg.beta1);
    state.v[i] = kernel::second_moment(state.v[i], g[i], cfg.beta2);
  }
  ++state.t;
}

struct BiasCorrected {
  Vector m_hat;
  Vector v_hat;
};

inline BiasCorrected bias_correct(const OptimizerState& state, const OptimizerConfig& cfg) {
  require(state.t >= 1, "bias correction needs t >= 1 (denominator 1 - beta^0 is zero)");
  const double c1 = detail::bias_denominator(cfg.beta1, state.t);
  const double c2 = detail::bias_denominator(cfg.beta2, state.t);
  BiasCorrected out{Vector(state.size()), Vector(state.size())};
  for (std::size_t i = 0; i < state.size(); ++i) {
    out.m_hat[i] = state.m[i] / c1;
    out.v_hat[i] = state.v[i] / c2;
  }
  return out;
}

inline Vector adam_update(std::span<const double> m_hat, std::span<const double> v_hat,
                          double eps) {
  require(m_hat.size() == v_hat.size(), "m_hat and v_hat differ in length");
  Vector u(m_hat.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    require(v_hat[i] >= 0.0, "v_hat must be non-negative");
    u[i] = kernel::adam(m_hat[i], v_hat[i], eps);
  }
  return u;
}

inline Vector invadam_update(std::span<const double> m_hat, std::span<const double> v_hat) {
  require(m_hat.size() == v_hat.size(), "m_hat and v_hat differ in length");
  Vector u(m_hat.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    require(v_hat[i] >= 0.0, "v_hat must be non-negative");
    u[i] = kernel::invadam(m_hat[i], v_hat[i]);
  }
  return u;
}

inline double alpha_at(const Schedule& s, std::int64_t t, std::int64_t epoch = 0) {
  double a = 0.0;
  switch (s.kind) {
    case ScheduleKind::Linear: a = 1.0 - s.rate * static_cast<double>(t); break;
    case ScheduleKind::Exponential: a = std::pow(s.base, static_cast<double>(t)); break;
    case ScheduleKind::FixedEpoch: a = epoch < s.switch_epoch ? 1.0 : 0.0; break;
    case ScheduleKind::ConstantAlpha: a = s.fixed_alpha; break;
  }
  return std::clamp(a, 0.0, 1.0);
}

/// InvAdam share actually used by an optimizer kind: Adam/AdamW never use the
/// InvAdam branch, InvAdam always does, DualAdam follows its schedule.
inline double effective_alpha(const OptimizerConfig& cfg, std::int64_t t, std::int64_t epoch) {
  switch (cfg.kind) {
    case OptimizerKind::Adam:
    case OptimizerKind::AdamW: return 0.0;
    case OptimizerKind::InvAdam: return 1.0;
    case OptimizerKind::DualAdam: return alpha_at(cfg.schedule, t, epoch);
  }
  return 0.0;
}

/// Iteration count at which the linear schedule first reaches alpha = 0.
inline std::int64_t linear_switch_iteration(double rate) {
  require(rate > 0.0, "rate must be > 0");
  return static_cast<std::int64_t>(std::ceil(1.0 / rate));
}

/// Linear rate that makes alpha hit zero after `fraction` of `total_iterations`.
inline double rate_for_switch_fraction(double fraction, std::int64_t total_iterations) {
  require(fraction > 0.0 && fraction <= 1.0, "switch fraction must lie in (0, 1]");
  require(total_iterations >= 1, "total iterations must be >= 1");
  return 1.0 / (fraction * static_cast<double>(total_iterations));
}

/// Index block used for sharding. Norm partial sums are accumulated per block
/// and combined in block order, so results do not depend on the job count.
inline constexpr std::size_t kShardBlock = 4096;

/// One full optimizer iteration, in place. Deterministic; `jobs` > 1 splits
/// the elementwise work over threads by disjoint index blocks.
inline StepReport step(OptimizerState& state, std::span<double> params, std::span<const double> g,
                       const OptimizerConfig& cfg, std::int64_t epoch = 0, unsigned jobs = 1) {
  require(params.size() == state.size(),
          "parameter length " + std::to_string(params.size()) + " does not match state size " +
              std::to_string(state.size()));
  detail::check_gradient(g, state.size());

  const std::int64_t t = state.t + 1;
  const double alpha = effective_alpha(cfg, t, epoch);
  const double c1 = detail::bias_denominator(cfg.beta1, t);
  const double c2 = detail::bias_denominator(cfg.beta2, t);
  const double lr = cfg.learning_rate;
  const double decay = cfg.kind == OptimizerKind::AdamW ? lr * cfg.weight_decay : 0.0;

  const std::size_t p = params.size();
  const std::size_t blocks = (p + kShardBlock - 1) / kShardBlock;
  struct Partial {
    double blend = 0.0, adam = 0.0, inv = 0.0;
  };
  auto run_block = [&](std::size_t b) {
    const std::size_t lo = b * kShardBlock;
    const std::size_t hi = std::min(p, lo + kShardBlock);
    Partial acc;
    for (std::size_t i = lo; i < hi; ++i) {
      const double m = kernel::first_moment(state.m[i], g[i], cfg.beta1);
      const double v = kernel::second_moment(state.v[i], g[i], cfg.beta2);
      state.m[i] = m;
      state.v[i] = v;
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      const double u = kernel::adam(m_hat, v_hat, cfg.epsilon);
      const double u_inv = kernel::invadam(m_hat, v_hat);
      const double u_mix = kernel::blend(alpha, u_inv, u);
      const double theta = params[i];
      params[i] = theta - lr * u_mix;
      if (decay != 0.0) params[i] -= decay * theta;
      acc.blend += u_mix * u_mix;
      acc.adam += u * u;
      acc.inv += u_inv * u_inv;
    }
    return acc;
  };

  Partial total;
  if (blocks <= 1) {
    if (blocks == 1) total = run_block(0);
  } else {
    std::vector<Partial> partial(blocks);
    parallel_for(blocks, jobs, [&](std::size_t b) { partial[b] = run_block(b); });
    for (const auto& q : partial) {
      total.blend += q.blend;
      total.adam += q.adam;
      total.inv += q.inv;
    }
  }
  state.t = t;
  return StepReport{alpha, std::sqrt(total.blend), std::sqrt(total.adam), std::sqrt(total.inv)};
}

/// Per-parameter FLOPs of one iteration, split the way the cost is usually
/// decomposed: moments, bias correction, update term(s), fusion, weight update.
struct FlopBreakdown {
  std::int64_t moments = 0;
  std::int64_t bias = 0;
  std::int64_t update = 0;
  std::int64_t fusion = 0;
  std::int64_t weight = 0;
  std::int64_t per_parameter() const { return moments + bias + update + fusion + weight; }
};

inline FlopBreakdown flop_breakdown(OptimizerKind kind, bool alpha_active) {
  // m: 2 mul + 1 add; v: 1 square + 2 mul + 1 add.
  FlopBreakdown f{7, 2, 0, 0, 0};
  const bool dual = kind == OptimizerKind::DualAdam && alpha_active;
  if (dual) {
    f.update = 4;  // sqrt, +eps, divide; InvAdam term reuses the sqrt: 1 mul
    f.fusion = 3;  // 2 mul + 1 add
    f.weight = 2;  // lr multiply + subtract
  } else if (kind == OptimizerKind::InvAdam) {
    f.update = 2;  // sqrt + mul
    f.weight = 2;
  } else {
    // Adam, AdamW, or DualAdam once alpha is 0: sqrt, add, div, mul, sub.
    f.update = 5;
    if (kind == OptimizerKind::AdamW) f.weight = 2;  // decoupled decay: mul + sub
  }
  return f;
}

inline std::int64_t flops_per_iteration(std::int64_t p, OptimizerKind kind, bool alpha_active) {
  require(p >= 1, "parameter count must be >= 1");
  return p * flop_breakdown(kind, alpha_active).per_parameter();
}

/// Extra optimizer FLOPs of active DualAdam over Adam, relative to the ~6bp
/// FLOPs of one forward+backward pass at batch size b.
inline double dual_overhead_fraction(std::int64_t batch_size) {
  require(batch_size >= 1, "batch size must be >= 1");
  const double extra = static_cast<double>(flop_breakdown(OptimizerKind::DualAdam, true).per_parameter() -
                                           flop_breakdown(OptimizerKind::Adam, false).per_parameter());
  return extra / (6.0 * static_cast<double>(batch_size));
}

}  // namespace dualadam
