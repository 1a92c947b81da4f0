#pragma once

// Two-parameter test landscapes with analytic gradients, a gradient-noise
// model, and a trajectory runner that drives any optimizer across them.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dualadam/common.hpp"
#include "dualadam/optim.hpp"

namespace dualadam {

using Point2 = std::array<double, 2>;

struct Box {
  double xmin, xmax, ymin, ymax;

  bool contains(const Point2& p) const {
    return p[0] >= xmin && p[0] <= xmax && p[1] >= ymin && p[1] <= ymax;
  }
  Point2 clamp(const Point2& p) const {
    return {std::clamp(p[0], xmin, xmax), std::clamp(p[1], ymin, ymax)};
  }
  /// Distance from an interior point to the nearest face.
  double margin(const Point2& p) const {
    return std::min({p[0] - xmin, xmax - p[0], p[1] - ymin, ymax - p[1]});
  }
};

enum class Basin { None, Sharp, Flat };

inline std::string to_string(Basin b) {
  switch (b) {
    case Basin::Sharp: return "sharp";
    case Basin::Flat: return "flat";
    case Basin::None: return "none";
  }
  return "none";
}

struct KnownMinimum {
  Point2 position;
  Basin basin;
  double curvature;  // largest Hessian eigenvalue at the minimum
};

struct Landscape {
  std::string name;
  std::function<double(const Point2&)> value;
  std::function<Point2(const Point2&)> gradient;
  Box domain;
  std::vector<KnownMinimum> known_minima;

  double eval(const Point2& p) const {
    check_domain(p);
    return value(p);
  }
  Point2 grad(const Point2& p) const {
    check_domain(p);
    return gradient(p);
  }

private:
  void check_domain(const Point2& p) const {
    if (!domain.contains(p))
      throw Error(name + ": point (" + fmt_num(p[0]) + ", " + fmt_num(p[1]) +
                  ") lies outside the domain box");
  }
};

namespace detail {
// Central-difference Hessian of the analytic gradient (used to refine minima).
inline std::array<double, 4> fd_hessian(const std::function<Point2(const Point2&)>& grad,
                                        const Point2& p, double h) {
  const Point2 gxp = grad({p[0] + h, p[1]}), gxm = grad({p[0] - h, p[1]});
  const Point2 gyp = grad({p[0], p[1] + h}), gym = grad({p[0], p[1] - h});
  const double hxx = (gxp[0] - gxm[0]) / (2 * h);
  const double hyy = (gyp[1] - gym[1]) / (2 * h);
  const double hxy = 0.5 * ((gxp[1] - gxm[1]) / (2 * h) + (gyp[0] - gym[0]) / (2 * h));
  return {hxx, hxy, hxy, hyy};
}

inline double sym2_max_eig(double a, double b, double d) {
  const double mid = 0.5 * (a + d);
  const double rad = std::sqrt(0.25 * (a - d) * (a - d) + b * b);
  return mid + rad;
}

// Newton refinement of a stationary point seeded at `p`.
inline Point2 newton_refine(const std::function<Point2(const Point2&)>& grad, Point2 p) {
  for (int it = 0; it < 50; ++it) {
    const Point2 g = grad(p);
    if (std::hypot(g[0], g[1]) < 1e-14) break;
    const auto H = fd_hessian(grad, p, 1e-5);
    const double det = H[0] * H[3] - H[1] * H[2];
    if (det == 0.0) break;
    p[0] -= (H[3] * g[0] - H[1] * g[1]) / det;
    p[1] -= (-H[2] * g[0] + H[0] * g[1]) / det;
  }
  return p;
}
}  // namespace detail

struct TwoBasinParams {
  double sharp_scale = 50.0;  // s1
  double flat_scale = 0.5;    // s2
  double sharp_depth = 1.0;   // a1
  double flat_depth = 0.95;   // a2
  Point2 sharp_center{-1.0, 0.0};
  Point2 flat_center{3.0, 0.0};
  Box domain{-3.0, 7.0, -3.0, 3.0};
};

/// L(p) = 1 - a1 exp(-s1 |p - c1|^2) - a2 exp(-s2 |p - c2|^2): a narrow deep
/// well at c1 next to a wide, slightly shallower one at c2.
inline Landscape two_basin(const TwoBasinParams& prm = {}) {
  require(prm.sharp_scale > prm.flat_scale,
          "two_basin: sharp_scale must exceed flat_scale (basin roles would invert)");
  require(prm.flat_scale > 0.0, "two_basin: scales must be positive");
  require(prm.sharp_depth > 0.0 && prm.flat_depth > 0.0, "two_basin: depths must be positive");

  auto value = [prm](const Point2& p) {
    const double d1x = p[0] - prm.sharp_center[0], d1y = p[1] - prm.sharp_center[1];
    const double d2x = p[0] - prm.flat_center[0], d2y = p[1] - prm.flat_center[1];
    return 1.0 - prm.sharp_depth * std::exp(-prm.sharp_scale * (d1x * d1x + d1y * d1y)) -
           prm.flat_depth * std::exp(-prm.flat_scale * (d2x * d2x + d2y * d2y));
  };
  auto gradient = [prm](const Point2& p) {
    const double d1x = p[0] - prm.sharp_center[0], d1y = p[1] - prm.sharp_center[1];
    const double d2x = p[0] - prm.flat_center[0], d2y = p[1] - prm.flat_center[1];
    const double w1 = 2.0 * prm.sharp_scale * prm.sharp_depth *
                      std::exp(-prm.sharp_scale * (d1x * d1x + d1y * d1y));
    const double w2 =
        2.0 * prm.flat_scale * prm.flat_depth * std::exp(-prm.flat_scale * (d2x * d2x + d2y * d2y));
    return Point2{w1 * d1x + w2 * d2x, w1 * d1y + w2 * d2y};
  };

  Landscape L{"two_basin", value, gradient, prm.domain, {}};
  for (auto [center, basin] : {std::pair{prm.sharp_center, Basin::Sharp},
                               std::pair{prm.flat_center, Basin::Flat}}) {
    const Point2 at = detail::newton_refine(gradient, center);
    const auto H = detail::fd_hessian(gradient, at, 1e-5);
    L.known_minima.push_back({at, basin, detail::sym2_max_eig(H[0], H[1], H[3])});
  }
  return L;
}

namespace detail {
inline double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }
// d/ds sin(sqrt|s|), with the kink convention sign(0) = 0.
inline double dsin_sqrt_abs(double s) {
  if (s == 0.0) return 0.0;
  const double r = std::sqrt(std::abs(s));
  return std::cos(r) * sgn(s) / (2.0 * r);
}
}  // namespace detail

inline constexpr Point2 kEggholderMinimizer{512.0, 404.2319};

/// Eggholder function on [-512, 512]^2.
inline Landscape eggholder() {
  auto value = [](const Point2& p) {
    const double x = p[0], y = p[1];
    return -(y + 47.0) * std::sin(std::sqrt(std::abs(x / 2.0 + (y + 47.0)))) -
           x * std::sin(std::sqrt(std::abs(x - (y + 47.0))));
  };
  auto gradient = [](const Point2& p) {
    const double x = p[0], y = p[1];
    const double a = x / 2.0 + (y + 47.0);
    const double b = x - (y + 47.0);
    const double sa = std::sin(std::sqrt(std::abs(a)));
    const double sb = std::sin(std::sqrt(std::abs(b)));
    const double da = detail::dsin_sqrt_abs(a);
    const double db = detail::dsin_sqrt_abs(b);
    const double gx = -(y + 47.0) * da * 0.5 - sb - x * db;
    const double gy = -sa - (y + 47.0) * da + x * db;
    return Point2{gx, gy};
  };
  // The global minimiser sits on the x = 512 face where the gradient is not
  // zero, so it is not listed as a (stationary) known minimum.
  return Landscape{"eggholder", value, gradient, Box{-512.0, 512.0, -512.0, 512.0}, {}};
}

/// L = 1/2 (p - c)^T A (p - c) with A given by its upper triangle.
inline Landscape quadratic(double axx, double axy, double ayy, Point2 center = {0.0, 0.0},
                           Box domain = {-10.0, 10.0, -10.0, 10.0}) {
  auto value = [=](const Point2& p) {
    const double dx = p[0] - center[0], dy = p[1] - center[1];
    return 0.5 * (axx * dx * dx + 2.0 * axy * dx * dy + ayy * dy * dy);
  };
  auto gradient = [=](const Point2& p) {
    const double dx = p[0] - center[0], dy = p[1] - center[1];
    return Point2{axx * dx + axy * dy, axy * dx + ayy * dy};
  };
  Landscape L{"quadratic", value, gradient, domain, {}};
  L.known_minima.push_back({center, Basin::Flat, detail::sym2_max_eig(axx, axy, ayy)});
  return L;
}

enum class NoiseKind { None, IsotropicGaussian, CurvatureScaled };

inline NoiseKind parse_noise(std::string_view s) {
  if (s == "none") return NoiseKind::None;
  if (s == "isotropic_gaussian" || s == "isotropic") return NoiseKind::IsotropicGaussian;
  if (s == "curvature_scaled") return NoiseKind::CurvatureScaled;
  throw Error("unknown noise kind '" + std::string(s) +
              "'; valid kinds: none, isotropic_gaussian, curvature_scaled");
}

inline std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::None: return "none";
    case NoiseKind::IsotropicGaussian: return "isotropic_gaussian";
    case NoiseKind::CurvatureScaled: return "curvature_scaled";
  }
  return "none";
}

/// Additive gradient noise. Isotropic: N(0, sigma^2). Curvature scaled:
/// coordinate i gets variance sigma^2 |H_ii| / b, the C ~ H/b model of
/// minibatch noise near a critical point.
struct NoiseModel {
  NoiseKind kind = NoiseKind::None;
  double sigma = 0.0;
  std::int64_t batch_size = 1;

  void validate() const {
    require(sigma >= 0.0 && std::isfinite(sigma), "noise sigma must be >= 0");
    require(batch_size >= 1, "noise batch_size must be >= 1");
  }

  /// Standard deviation for a coordinate with local curvature `curv`.
  double scale(double curv) const {
    switch (kind) {
      case NoiseKind::None: return 0.0;
      case NoiseKind::IsotropicGaussian: return sigma;
      case NoiseKind::CurvatureScaled:
        return sigma * std::sqrt(std::abs(curv) / static_cast<double>(batch_size));
    }
    return 0.0;
  }
};

struct TrajectoryStep {
  std::int64_t t;
  double x, y, loss, alpha, update_norm;
  bool clamped;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;  // steps[0] is the start point (t = 0)
  Basin terminal_basin = Basin::None;
  bool diverged = false;
  std::int64_t clamped_steps = 0;
  std::uint64_t seed = 0;
};

/// Nearest known minimum within `radius`, else None.
inline Basin classify_basin(const Point2& p, const std::vector<KnownMinimum>& minima,
                            double radius) {
  Basin best = Basin::None;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& km : minima) {
    const double d = std::hypot(p[0] - km.position[0], p[1] - km.position[1]);
    if (d <= radius && d < best_d) {
      best_d = d;
      best = km.basin;
    }
  }
  return best;
}

struct TrajectoryOptions {
  Point2 start{-0.9, 0.1};
  NoiseModel noise{};
  std::int64_t max_steps = 5000;
  std::uint64_t seed = 0;
  double basin_radius = 0.5;
};

namespace detail {
// Diagonal curvature by central differences, probes kept inside the box.
inline Point2 diag_curvature(const Landscape& L, const Point2& p, double h = 1e-5) {
  Point2 out{};
  for (int i = 0; i < 2; ++i) {
    Point2 a = p, b = p;
    a[i] += h;
    b[i] -= h;
    a = L.domain.clamp(a);
    b = L.domain.clamp(b);
    const double span = a[i] - b[i];
    out[i] = span > 0 ? (L.gradient(a)[i] - L.gradient(b)[i]) / span : 0.0;
  }
  return out;
}
}  // namespace detail

inline Trajectory run_trajectory(const Landscape& L, const OptimizerConfig& cfg,
                                 const TrajectoryOptions& opt) {
  cfg.validate();
  opt.noise.validate();
  require(opt.max_steps >= 1, "max_steps must be >= 1");
  require(L.domain.contains(opt.start), "start point lies outside the landscape domain");

  Trajectory tr;
  tr.seed = opt.seed;
  tr.steps.reserve(static_cast<std::size_t>(opt.max_steps) + 1);
  Rng rng = make_rng(opt.seed, 0x7472616aULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  Point2 theta = opt.start;
  OptimizerState state(2);
  tr.steps.push_back({0, theta[0], theta[1], L.eval(theta), 0.0, 0.0, false});

  for (std::int64_t t = 1; t <= opt.max_steps; ++t) {
    Point2 g = L.grad(theta);
    if (opt.noise.kind != NoiseKind::None) {
      Point2 curv{0.0, 0.0};
      if (opt.noise.kind == NoiseKind::CurvatureScaled) curv = detail::diag_curvature(L, theta);
      for (int i = 0; i < 2; ++i) g[i] += opt.noise.scale(curv[i]) * normal(rng);
    }
    if (!std::isfinite(g[0]) || !std::isfinite(g[1])) {
      tr.diverged = true;
      break;
    }
    const StepReport rep = step(state, theta, g, cfg);
    if (!std::isfinite(theta[0]) || !std::isfinite(theta[1])) {
      tr.diverged = true;
      break;
    }
    const bool clamped = !L.domain.contains(theta);
    if (clamped) {
      theta = L.domain.clamp(theta);
      ++tr.clamped_steps;
    }
    const double loss = L.eval(theta);
    tr.steps.push_back(
        {t, theta[0], theta[1], loss, rep.alpha, cfg.learning_rate * rep.update_norm, clamped});
    if (!std::isfinite(loss)) {
      tr.diverged = true;
      break;
    }
  }
  tr.terminal_basin = tr.diverged ? Basin::None
                                  : classify_basin(theta, L.known_minima, opt.basin_radius);
  return tr;
}

}  // namespace dualadam
