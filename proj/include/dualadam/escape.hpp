#pragma once

// Kramers-style escape experiments: noisy optimizer dynamics started at the
// bottom of a 1D well, timed until they cross the saddle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/common.hpp"
#include "dualadam/landscape.hpp"
#include "dualadam/optim.hpp"
#include "dualadam/parallel.hpp"

namespace dualadam {

/// Symmetric 1D barrier: L = H_phi θ²/2 for |θ| <= a, and
/// L = ΔL - H_chi (|θ| - χ)²/2 beyond, joined C¹ at |θ| = a. The minimum φ
/// sits at 0 and the saddles at ±χ.
struct BarrierPotential {
  double h_phi = 0.0;
  double delta_l = 0.0;
  double h_chi = 0.0;
  double junction = 0.0;  // a
  double saddle = 0.0;    // χ

  /// Escape is declared past χ plus 5% of the well-to-saddle distance.
  double escape_threshold() const { return saddle + 0.05 * saddle; }

  double value(double x) const {
    const double r = std::abs(x);
    if (r <= junction) return 0.5 * h_phi * x * x;
    return delta_l - 0.5 * h_chi * (r - saddle) * (r - saddle);
  }
  double grad(double x) const {
    const double r = std::abs(x);
    if (r <= junction) return h_phi * x;
    const double s = x > 0 ? 1.0 : -1.0;
    return s * h_chi * (saddle - r);
  }
  double curvature(double x) const { return std::abs(x) <= junction ? h_phi : -h_chi; }
};

/// Solving the C¹ conditions H_phi a = H_chi (χ - a) and
/// H_phi a²/2 + H_chi (χ - a)²/2 = ΔL gives a closed form that exists for
/// every positive triple.
inline BarrierPotential make_barrier(double h_phi, double delta_l, double h_chi) {
  const bool ok = std::isfinite(h_phi) && std::isfinite(delta_l) && std::isfinite(h_chi) &&
                  h_phi > 0.0 && delta_l > 0.0 && h_chi > 0.0;
  if (!ok)
    throw Error("make_barrier: infeasible parameters (H_phi=" + fmt_num(h_phi) + ", delta_L=" +
                fmt_num(delta_l) + ", H_chi=" + fmt_num(h_chi) +
                "); feasible range is H_phi, delta_L, H_chi finite and > 0");
  const double a = std::sqrt(2.0 * delta_l / (h_phi * (1.0 + h_phi / h_chi)));
  const double width = h_phi * a / h_chi;
  require(std::isfinite(a) && std::isfinite(width) && a > 0.0 && width > 0.0,
          "make_barrier: C1 matching produced a degenerate junction");
  return {h_phi, delta_l, h_chi, a, a + width};
}

struct EscapeTrial {
  std::int64_t steps = 0;  // first step past the threshold; max_steps if censored
  bool censored = true;
};

struct EscapeStats {
  std::int64_t trials = 0;
  std::vector<EscapeTrial> escapes;
  double median = std::numeric_limits<double>::quiet_NaN();  // uncensored only
  double mean = std::numeric_limits<double>::quiet_NaN();
  double censoring_rate = 1.0;
  bool median_reliable = false;  // censoring_rate <= 0.5
  bool noise_warning = false;    // noiseless dynamics cannot escape from φ
};

/// Summary over uncensored trials. Values are sorted first, so the result is
/// invariant under any permutation of the trials.
inline EscapeStats summarize(std::vector<EscapeTrial> escapes) {
  EscapeStats s;
  s.trials = static_cast<std::int64_t>(escapes.size());
  std::vector<double> done;
  for (const auto& e : escapes)
    if (!e.censored) done.push_back(static_cast<double>(e.steps));
  std::sort(done.begin(), done.end());
  s.censoring_rate = s.trials == 0 ? 1.0
                                   : static_cast<double>(escapes.size() - done.size()) /
                                         static_cast<double>(escapes.size());
  if (!done.empty()) {
    s.median = median(done);
    s.mean = mean(done);
  }
  s.median_reliable = !done.empty() && s.censoring_rate <= 0.5;
  s.escapes = std::move(escapes);
  return s;
}

struct EscapeOptions {
  NoiseModel noise{NoiseKind::CurvatureScaled, 1.0, 1};
  std::int64_t max_steps = 100000;
  std::int64_t trials = 200;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

/// One trial from φ = 0. Gradient noise is added before the moment updates.
inline EscapeTrial escape_trial(const BarrierPotential& pot, const OptimizerConfig& cfg,
                                const NoiseModel& noise, std::int64_t max_steps,
                                std::uint64_t trial_seed) {
  Rng rng = make_rng(trial_seed, 0x65736361ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  OptimizerState state(1);
  std::array<double, 1> theta{0.0};
  std::array<double, 1> g{};
  const double threshold = pot.escape_threshold();
  for (std::int64_t t = 1; t <= max_steps; ++t) {
    g[0] = pot.grad(theta[0]);
    if (noise.kind != NoiseKind::None) g[0] += noise.scale(pot.curvature(theta[0])) * normal(rng);
    step(state, theta, g, cfg);
    if (std::abs(theta[0]) >= threshold) return {t, false};
  }
  return {max_steps, true};
}

inline EscapeStats run_escape(const BarrierPotential& pot, const OptimizerConfig& cfg,
                              const EscapeOptions& opt) {
  cfg.validate();
  opt.noise.validate();
  require(opt.trials >= 10, "run_escape: trials must be >= 10");
  require(opt.max_steps >= 1000, "run_escape: max_steps must be >= 1000");
  std::vector<EscapeTrial> out(static_cast<std::size_t>(opt.trials));
  parallel_for(out.size(), opt.jobs, [&](std::size_t i) {
    out[i] = escape_trial(pot, cfg, opt.noise, opt.max_steps, mix_seed(opt.seed, i));
  });
  EscapeStats s = summarize(std::move(out));
  s.noise_warning = opt.noise.kind == NoiseKind::None || opt.noise.sigma == 0.0;
  return s;
}

inline nlohmann::json to_json(const EscapeStats& s) {
  nlohmann::json steps = nlohmann::json::array(), censored = nlohmann::json::array();
  for (const auto& e : s.escapes) {
    steps.push_back(e.steps);
    censored.push_back(e.censored);
  }
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
  return {{"trials", s.trials},          {"escape_steps", steps},
          {"censored", censored},        {"median", num(s.median)},
          {"mean", num(s.mean)},         {"censoring_rate", s.censoring_rate},
          {"median_reliable", s.median_reliable}, {"noise_warning", s.noise_warning}};
}

struct ScalingFit {
  double exponent = 0.0;  // regressor is H^(-exponent)
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  /// Fitted drop of log(median) from the smallest to the largest sharpness.
  double decay = 0.0;
};

/// Least squares of log(median) on H^(-exponent): exponent 1/2 is the
/// Adam-style prediction, 3/2 the InvAdam-style one.
inline ScalingFit scaling_fit(std::span<const double> sharpness, std::span<const double> medians,
                              std::span<const double> censoring, double exponent) {
  require(sharpness.size() == medians.size() && medians.size() == censoring.size(),
          "scaling_fit: grid arrays differ in length");
  require(sharpness.size() >= 4, "scaling_fit: need at least 4 grid points");
  std::string bad;
  for (std::size_t i = 0; i < sharpness.size(); ++i)
    if (!(censoring[i] < 0.5) || !(medians[i] > 0.0))
      bad += (bad.empty() ? "" : ", ") + std::string("H_phi=") + fmt_num(sharpness[i]);
  if (!bad.empty()) throw Error("scaling_fit: excessive censoring at " + bad);

  const std::size_t n = sharpness.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::pow(sharpness[i], -exponent);
    y[i] = std::log(medians[i]);
  }
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0, "scaling_fit: sharpness grid must contain distinct values");
  ScalingFit f;
  f.exponent = exponent;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.slope_stderr = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx) : 0.0;
  f.r_squared = syy > 0 ? 1.0 - sse / syy : 1.0;
  const auto [xmin, xmax] = std::minmax_element(x.begin(), x.end());
  f.decay = f.slope * (*xmax - *xmin);
  return f;
}

inline nlohmann::json to_json(const ScalingFit& f) {
  return {{"exponent", f.exponent},   {"slope", f.slope},         {"intercept", f.intercept},
          {"slope_stderr", f.slope_stderr}, {"r_squared", f.r_squared}, {"decay", f.decay}};
}

/// Sharpness grid run for two dynamics, plus the bootstrap comparison.
struct EscapeComparison {
  std::vector<double> sharpness;
  std::vector<EscapeStats> adam;
  std::vector<EscapeStats> invadam;
  ScalingFit adam_fit;
  ScalingFit invadam_fit;
  double ratio_monotone_confidence = 0.0;  // share of replicates with non-increasing ratio
  double decay_order_confidence = 0.0;     // share with invadam decay >= adam decay
  std::int64_t bootstrap_replicates = 0;
};

namespace detail {
inline double resampled_median(const std::vector<EscapeTrial>& trials, Rng& rng, bool& ok) {
  std::uniform_int_distribution<std::size_t> pick(0, trials.size() - 1);
  std::vector<double> done;
  done.reserve(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& e = trials[pick(rng)];
    if (!e.censored) done.push_back(static_cast<double>(e.steps));
  }
  if (done.size() * 2 <= trials.size()) {
    ok = false;
    return std::numeric_limits<double>::quiet_NaN();
  }
  return median(std::move(done));
}
}  // namespace detail

/// Bootstrap over trials within each cell: the ratio median_inv/median_adam
/// must be non-increasing along the grid, and the fitted InvAdam decay must
/// be at least the Adam decay. Replicates with >= 50% censoring in any cell
/// count as failures.
inline void bootstrap_compare(EscapeComparison& cmp, std::int64_t replicates, std::uint64_t seed) {
  require(replicates >= 1, "bootstrap needs at least one replicate");
  Rng rng = make_rng(seed, 0x626f6f74ULL);
  const std::size_t n = cmp.sharpness.size();
  std::int64_t monotone = 0, ordered = 0;
  std::vector<double> ma(n), mi(n), ca(n, 0.0), ci(n, 0.0);
  for (std::int64_t r = 0; r < replicates; ++r) {
    bool ok = true;
    for (std::size_t k = 0; k < n; ++k) {
      ma[k] = detail::resampled_median(cmp.adam[k].escapes, rng, ok);
      mi[k] = detail::resampled_median(cmp.invadam[k].escapes, rng, ok);
    }
    if (!ok) continue;
    bool mono = true;
    for (std::size_t k = 1; k < n; ++k)
      if (mi[k] / ma[k] > mi[k - 1] / ma[k - 1]) mono = false;
    monotone += mono;
    const double da = scaling_fit(cmp.sharpness, ma, ca, 0.5).decay;
    const double di = scaling_fit(cmp.sharpness, mi, ci, 1.5).decay;
    ordered += di >= da;
  }
  cmp.bootstrap_replicates = replicates;
  cmp.ratio_monotone_confidence = static_cast<double>(monotone) / static_cast<double>(replicates);
  cmp.decay_order_confidence = static_cast<double>(ordered) / static_cast<double>(replicates);
}

struct EscapeGridOptions {
  std::vector<double> sharpness{1.0, 2.0, 4.0, 8.0};
  double delta_l = 0.5;
  double h_chi = 1.0;
  OptimizerConfig adam{OptimizerKind::Adam, 0.2};
  OptimizerConfig invadam{OptimizerKind::InvAdam, 0.03};
  EscapeOptions run{NoiseModel{NoiseKind::CurvatureScaled, 2.0, 1}, 100000, 1000};
  std::int64_t bootstrap_replicates = 1000;
};

inline EscapeComparison compare_escape(const EscapeGridOptions& opt) {
  EscapeComparison cmp;
  cmp.sharpness = opt.sharpness;
  for (std::size_t k = 0; k < opt.sharpness.size(); ++k) {
    const BarrierPotential pot = make_barrier(opt.sharpness[k], opt.delta_l, opt.h_chi);
    EscapeOptions ro = opt.run;
    ro.seed = mix_seed(opt.run.seed, 2 * k);
    cmp.adam.push_back(run_escape(pot, opt.adam, ro));
    ro.seed = mix_seed(opt.run.seed, 2 * k + 1);
    cmp.invadam.push_back(run_escape(pot, opt.invadam, ro));
  }
  std::vector<double> ma, mi, ca, ci;
  for (std::size_t k = 0; k < cmp.sharpness.size(); ++k) {
    ma.push_back(cmp.adam[k].median);
    mi.push_back(cmp.invadam[k].median);
    ca.push_back(cmp.adam[k].censoring_rate);
    ci.push_back(cmp.invadam[k].censoring_rate);
  }
  if (cmp.sharpness.size() >= 4) {
    cmp.adam_fit = scaling_fit(cmp.sharpness, ma, ca, 0.5);
    cmp.invadam_fit = scaling_fit(cmp.sharpness, mi, ci, 1.5);
    bootstrap_compare(cmp, opt.bootstrap_replicates, opt.run.seed);
  }
  return cmp;
}

}  // namespace dualadam
