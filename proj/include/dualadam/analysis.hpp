#pragma once

// Curvature measurements: exact-ish 2x2 Hessians of landscapes, Hessian-vector
// products by central differences of a gradient oracle, power iteration with
// deflation, Hutchinson trace estimation, and 1D loss slices.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/common.hpp"
#include "dualadam/landscape.hpp"
#include "dualadam/parallel.hpp"

namespace dualadam {

using GradientFn = std::function<Vector(std::span<const double>)>;
using LossFn = std::function<double(std::span<const double>)>;
using LinearOp = std::function<Vector(std::span<const double>)>;

struct Hessian2 {
  std::array<double, 4> matrix;               // row major, symmetrized
  std::array<double, 2> eigenvalues;          // descending
  std::array<Point2, 2> eigenvectors;         // unit, matching eigenvalues
  double trace() const { return eigenvalues[0] + eigenvalues[1]; }
};

/// Closed-form eigen-decomposition of [[a, b], [b, d]].
inline Hessian2 eig_sym2(double a, double b, double d) {
  Hessian2 H{{a, b, b, d}, {}, {}};
  const double mid = 0.5 * (a + d);
  const double rad = std::hypot(0.5 * (a - d), b);
  H.eigenvalues = {mid + rad, mid - rad};
  if (b == 0.0) {
    H.eigenvectors = a >= d ? std::array<Point2, 2>{Point2{1, 0}, Point2{0, 1}}
                            : std::array<Point2, 2>{Point2{0, 1}, Point2{1, 0}};
  } else {
    for (int k = 0; k < 2; ++k) {
      Point2 v{H.eigenvalues[k] - d, b};
      const double n = std::hypot(v[0], v[1]);
      H.eigenvectors[k] = {v[0] / n, v[1] / n};
    }
  }
  return H;
}

/// Central differences of the analytic gradient, symmetrized (H + H^T)/2.
inline Hessian2 hessian_2d(const Landscape& L, const Point2& p, double h = 1e-4) {
  require(h > 0.0, "hessian step must be > 0");
  require(L.domain.contains(p) && L.domain.margin(p) > h,
          "hessian_2d: point must lie further than h from the domain boundary");
  const Point2 gxp = L.grad({p[0] + h, p[1]}), gxm = L.grad({p[0] - h, p[1]});
  const Point2 gyp = L.grad({p[0], p[1] + h}), gym = L.grad({p[0], p[1] - h});
  const double hxx = (gxp[0] - gxm[0]) / (2 * h);
  const double hyx = (gxp[1] - gxm[1]) / (2 * h);
  const double hxy = (gyp[0] - gym[0]) / (2 * h);
  const double hyy = (gyp[1] - gym[1]) / (2 * h);
  return eig_sym2(hxx, 0.5 * (hxy + hyx), hyy);
}

inline double default_hvp_step(std::span<const double> theta) { return 1e-4 * (1.0 + norm2(theta)); }

/// (g(θ + h d̂) - g(θ - h d̂)) / (2h) * |d|, d̂ = d/|d|. Exact for quadratics.
inline Vector hvp(const GradientFn& grad, std::span<const double> theta,
                  std::span<const double> direction, double h) {
  require(direction.size() == theta.size(), "direction length must match theta");
  require(h > 0.0, "hvp step h must be > 0");
  const double dn = norm2(direction);
  require(dn > 0.0, "hvp direction must be non-zero");
  Vector plus(theta.begin(), theta.end()), minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    plus[i] += h * direction[i] / dn;
    minus[i] -= h * direction[i] / dn;
  }
  const Vector gp = grad(plus), gm = grad(minus);
  require(gp.size() == theta.size() && gm.size() == theta.size(),
          "gradient oracle returned the wrong length");
  Vector out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(gp[i]) || !std::isfinite(gm[i]))
      throw Error("non-finite gradient at hvp probe point (index " + std::to_string(i) + ")");
    out[i] = (gp[i] - gm[i]) / (2.0 * h) * dn;
  }
  return out;
}

/// Binds a gradient oracle at θ into a Hessian operator.
inline LinearOp hessian_operator(GradientFn grad, Vector theta, double h) {
  return [grad = std::move(grad), theta = std::move(theta), h](std::span<const double> d) {
    if (norm2(d) == 0.0) return Vector(d.size(), 0.0);
    return hvp(grad, theta, d, h);
  };
}

struct EigenResult {
  std::vector<double> values;  // descending
  std::vector<Vector> vectors;
  bool converged = true;
  std::int64_t iterations = 0;
  double rayleigh_max = 0.0;  // largest Rayleigh quotient seen while iterating
};

/// Power iteration with projection deflation for the k dominant eigenvalues.
inline EigenResult top_eigs(const LinearOp& op, std::size_t p, std::size_t k, std::int64_t iters,
                            std::uint64_t seed, double tol = 1e-9) {
  require(k >= 1 && k <= std::min<std::size_t>(p, 10), "top_eigs: need 1 <= k <= min(p, 10)");
  require(iters >= 1, "top_eigs: iters must be >= 1");
  EigenResult res;
  res.rayleigh_max = -std::numeric_limits<double>::infinity();
  Rng rng = make_rng(seed, 0x706f7765ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto deflate = [&](Vector& v) {
    for (const auto& q : res.vectors) {
      const double c = dot(v, q);
      for (std::size_t i = 0; i < p; ++i) v[i] -= c * q[i];
    }
  };
  auto normalize = [&](Vector& v) {
    const double n = norm2(v);
    if (n > 0) for (double& x : v) x /= n;
    return n;
  };

  for (std::size_t j = 0; j < k; ++j) {
    Vector v(p);
    for (double& x : v) x = normal(rng);
    deflate(v);
    normalize(v);
    double lambda = 0.0;
    bool done = false;
    for (std::int64_t it = 0; it < iters; ++it) {
      Vector w = op(v);
      deflate(w);
      const double next = dot(v, w);
      res.rayleigh_max = std::max(res.rayleigh_max, next);
      ++res.iterations;
      const double n = normalize(w);
      const bool settled = it > 0 && std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next));
      lambda = next;
      if (n == 0.0) {
        done = true;
        break;
      }
      v = std::move(w);
      if (settled) {
        done = true;
        break;
      }
    }
    res.converged = res.converged && done;
    res.values.push_back(lambda);
    res.vectors.push_back(std::move(v));
  }
  // Keep values and vectors paired while ordering by value.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return res.values[a] > res.values[b]; });
  EigenResult sorted = res;
  for (std::size_t i = 0; i < k; ++i) {
    sorted.values[i] = res.values[order[i]];
    sorted.vectors[i] = res.vectors[order[i]];
  }
  return sorted;
}

namespace detail {
// Pairwise summation: the result depends only on the order of `v`.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}
}  // namespace detail

struct TraceEstimate {
  double estimate;
  double standard_error;
  std::int64_t probes;
};

/// Hutchinson estimator E[zᵀHz] with Rademacher probes. Probe i draws from
/// its own stream, so the estimate does not depend on `jobs`.
inline TraceEstimate hutchinson_trace(const LinearOp& op, std::size_t p, std::int64_t probes,
                                      std::uint64_t seed, unsigned jobs = 1) {
  require(probes >= 4, "hutchinson_trace: need at least 4 probes");
  require(p >= 1, "hutchinson_trace: p must be >= 1");
  std::vector<double> samples(static_cast<std::size_t>(probes));
  parallel_for(samples.size(), jobs, [&](std::size_t i) {
    Rng rng = make_rng(mix_seed(seed, i), 0x68757463ULL);
    std::bernoulli_distribution coin(0.5);
    Vector z(p);
    for (double& x : z) x = coin(rng) ? 1.0 : -1.0;
    samples[i] = dot(z, op(z));
  });
  const double n = static_cast<double>(probes);
  const double m = detail::pairwise_sum(samples) / n;
  std::vector<double> sq(samples.size());
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = (samples[i] - m) * (samples[i] - m);
  const double var = detail::pairwise_sum(sq) / (n - 1.0);
  return {m, std::sqrt(var / n), probes};
}

struct HessianReport {
  std::vector<double> top_eigenvalues;
  double trace_estimate = 0.0;
  double trace_stderr = 0.0;
  std::int64_t num_probes = 0;
  double hvp_step = 0.0;
  bool converged = true;
};

inline nlohmann::json to_json(const HessianReport& r) {
  return {{"top_eigenvalues", r.top_eigenvalues},
          {"trace_estimate", r.trace_estimate},
          {"trace_stderr", r.trace_stderr},
          {"num_probes", r.num_probes},
          {"hvp_step", r.hvp_step},
          {"converged", r.converged}};
}

struct HessianOptions {
  std::size_t k = 1;
  std::int64_t power_iters = 100;
  std::int64_t probes = 100;
  std::uint64_t seed = 0;
  double hvp_step = 0.0;  // 0 selects 1e-4 * (1 + |θ|)
  unsigned jobs = 1;
};

inline HessianReport hessian_report(const GradientFn& grad, std::span<const double> theta,
                                    const HessianOptions& opt) {
  HessianReport r;
  r.hvp_step = opt.hvp_step > 0 ? opt.hvp_step : default_hvp_step(theta);
  const LinearOp H = hessian_operator(grad, Vector(theta.begin(), theta.end()), r.hvp_step);
  const EigenResult eig = top_eigs(H, theta.size(), opt.k, opt.power_iters, opt.seed);
  const TraceEstimate tr = hutchinson_trace(H, theta.size(), opt.probes, opt.seed, opt.jobs);
  r.top_eigenvalues = eig.values;
  r.converged = eig.converged;
  r.trace_estimate = tr.estimate;
  r.trace_stderr = tr.standard_error;
  r.num_probes = tr.probes;
  return r;
}

struct FlatnessSlice {
  std::vector<double> zetas;
  std::vector<double> losses;
  std::uint64_t direction_seed = 0;
  double direction_norm = 0.0;

  /// Mean loss rise over the two grid points closest to ±zeta.
  double rise_at(double zeta) const;
};

inline double FlatnessSlice::rise_at(double zeta) const {
  auto nearest = [&](double target) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < zetas.size(); ++i)
      if (std::abs(zetas[i] - target) < std::abs(zetas[best] - target)) best = i;
    return losses[best];
  };
  const double base = nearest(0.0);
  return 0.5 * (nearest(zeta) + nearest(-zeta)) - base;
}

inline nlohmann::json to_json(const FlatnessSlice& s) {
  return {{"zetas", s.zetas},
          {"losses", s.losses},
          {"direction_seed", s.direction_seed},
          {"direction_norm", s.direction_norm}};
}

inline std::vector<double> default_zeta_grid(double half_width = 1.0, int points = 41) {
  require(points >= 3 && points % 2 == 1, "zeta grid needs an odd point count >= 3");
  std::vector<double> z(static_cast<std::size_t>(points));
  const int mid = points / 2;
  for (int i = 0; i < points; ++i) z[static_cast<std::size_t>(i)] = half_width * (i - mid) / mid;
  return z;
}

/// L(θ* + ζ l) along one Gaussian direction l scaled to |l| = sqrt(p).
inline FlatnessSlice flatness_slice(const LossFn& loss, std::span<const double> theta,
                                    std::span<const double> zetas, std::uint64_t seed) {
  require(std::find(zetas.begin(), zetas.end(), 0.0) != zetas.end(),
          "flatness_slice: zeta grid must contain 0");
  const std::size_t p = theta.size();
  Rng rng = make_rng(seed, 0x736c6963ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector l(p);
  for (double& x : l) x = normal(rng);
  const double scale = std::sqrt(static_cast<double>(p)) / norm2(l);
  for (double& x : l) x *= scale;

  FlatnessSlice s{{zetas.begin(), zetas.end()}, {}, seed, norm2(l)};
  Vector probe(p);
  for (double z : zetas) {
    for (std::size_t i = 0; i < p; ++i) probe[i] = theta[i] + z * l[i];
    s.losses.push_back(loss(probe));
  }
  return s;
}

}  // namespace dualadam
