#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

// Poincare ball kernel: Mobius addition, geodesic distance, Klein-model
// transforms, the Lorentz-weighted Einstein midpoint, and closed-form
// gradients (as vector-Jacobian products) for each of them. Everything here
// is a pure function of its arguments; the only shared state is a set of
// monotone diagnostic counters.
namespace hyprec::geometry {

using Vec = Eigen::VectorXd;

// A point of the ball of curvature c must satisfy c*|x|^2 < 1. Projection
// caps the norm at (1 - kBallEps)/sqrt(c).
inline constexpr double kBallEps = 1e-5;
inline constexpr double kAtanhEps = 1e-15;

using BallPoint = Vec;
using KleinPoint = Vec;

struct Diagnostics {
  std::atomic<std::uint64_t> atanh_clamps{0};
  std::atomic<std::uint64_t> kg_loss_evals{0};

  void reset() {
    atanh_clamps.store(0, std::memory_order_relaxed);
    kg_loss_evals.store(0, std::memory_order_relaxed);
  }
};

inline Diagnostics& diagnostics() {
  static Diagnostics d;
  return d;
}

inline void check_finite(const Vec& x, const char* where) {
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(where) + ": non-finite coordinates");
  }
}

inline bool in_ball(const Vec& x, double c) { return c * x.squaredNorm() < 1.0; }

inline BallPoint project_to_ball(Vec x, double c) {
  check_finite(x, "project_to_ball");
  const double max_norm = (1.0 - kBallEps) / std::sqrt(c);
  const double n = x.norm();
  if (n > max_norm) x *= max_norm / n;
  return x;
}

inline BallPoint mobius_add(const Vec& x, const Vec& y, double c) {
  check_finite(x, "mobius_add/x");
  check_finite(y, "mobius_add/y");
  const double xy = x.dot(y);
  const double x2 = x.squaredNorm();
  const double y2 = y.squaredNorm();
  const double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  Vec out = ((1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y) / den;
  return project_to_ball(std::move(out), c);
}

// Geodesic distance (2/sqrt(c)) atanh(sqrt(c) |(-x) + y|), with the atanh
// argument clamped to [0, 1 - kAtanhEps]. Clamps are silent but counted.
inline double poincare_distance(const Vec& x, const Vec& y, double c) {
  const Vec m = mobius_add(-x, y, c);
  const double sc = std::sqrt(c);
  double a = sc * m.norm();
  if (a > 1.0 - kAtanhEps) {
    a = 1.0 - kAtanhEps;
    diagnostics().atanh_clamps.fetch_add(1, std::memory_order_relaxed);
  }
  return (2.0 / sc) * std::atanh(a);
}

inline KleinPoint ball_to_klein(const BallPoint& x, double c) {
  check_finite(x, "ball_to_klein");
  return 2.0 * x / (1.0 + c * x.squaredNorm());
}

inline BallPoint klein_to_ball(const KleinPoint& k, double c) {
  check_finite(k, "klein_to_ball");
  const double w = std::sqrt(std::max(1.0 - c * k.squaredNorm(), 0.0));
  return k / (1.0 + w);
}

inline double lorentz_factor(const KleinPoint& k, double c) {
  const double s = std::max(1.0 - c * k.squaredNorm(), kBallEps * kBallEps);
  return 1.0 / std::sqrt(s);
}

// Lorentz-weighted midpoint in Klein coordinates, mapped back to the ball.
// The external weights only matter up to positive rescaling.
inline BallPoint einstein_midpoint(std::span<const Vec> points, std::span<const double> weights,
                                   double c) {
  if (points.empty()) throw std::invalid_argument("einstein_midpoint: empty point list");
  if (points.size() != weights.size()) {
    throw std::invalid_argument("einstein_midpoint: points/weights size mismatch");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("einstein_midpoint: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("einstein_midpoint: weights sum to zero");

  Vec acc = Vec::Zero(points[0].size());
  double norm = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const KleinPoint k = ball_to_klein(points[i], c);
    const double g = lorentz_factor(k, c);
    acc += weights[i] * g * k;
    norm += weights[i] * g;
  }
  return project_to_ball(klein_to_ball(acc / norm, c), c);
}

// Riemannian gradient on the ball: the Euclidean gradient scaled by
// 1/(lambda_x^c)^2 = ((1 - c|x|^2)/2)^2.
inline Vec riemannian_rescale(const Vec& x, const Vec& euclidean_grad, double c) {
  const double f = (1.0 - c * x.squaredNorm()) / 2.0;
  return (f * f) * euclidean_grad;
}

// --- vector-Jacobian products ---------------------------------------------

struct PairGrad {
  Vec dx, dy;
};

// Backward through z = x (+)_c y given upstream dL/dz.
inline PairGrad mobius_add_vjp(const Vec& x, const Vec& y, double c, const Vec& upstream) {
  const double xy = x.dot(y);
  const double x2 = x.squaredNorm();
  const double y2 = y.squaredNorm();
  const double a = 1.0 + 2.0 * c * xy + c * y2;
  const double b = 1.0 - c * x2;
  const double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
  const Vec z = (a * x + b * y) / den;

  const double ux = upstream.dot(x);
  const double uy = upstream.dot(y);
  const double uz = upstream.dot(z);

  PairGrad g;
  g.dx = (a * upstream + 2.0 * c * ux * y - 2.0 * c * uy * x) / den -
         (uz / den) * (2.0 * c * y + 2.0 * c * c * y2 * x);
  g.dy = (b * upstream + 2.0 * c * ux * (x + y)) / den -
         (uz / den) * (2.0 * c * x + 2.0 * c * c * x2 * y);
  return g;
}

// Gradient of poincare_distance in both arguments. Zero at x == y (the
// distance has a cusp there) and inside the atanh clamp region.
inline PairGrad poincare_distance_grad(const Vec& x, const Vec& y, double c) {
  PairGrad g{Vec::Zero(x.size()), Vec::Zero(y.size())};
  const Vec m = mobius_add(-x, y, c);
  const double r = m.norm();
  const double sc = std::sqrt(c);
  if (r < 1e-15 || sc * r > 1.0 - kAtanhEps) return g;

  const Vec dm = (2.0 / ((1.0 - c * r * r) * r)) * m;
  const PairGrad inner = mobius_add_vjp(-x, y, c, dm);
  g.dx = -inner.dx;
  g.dy = inner.dy;
  return g;
}

inline Vec ball_to_klein_vjp(const BallPoint& x, double c, const Vec& upstream) {
  const double d = 1.0 + c * x.squaredNorm();
  return 2.0 * upstream / d - (4.0 * c * upstream.dot(x) / (d * d)) * x;
}

inline Vec klein_to_ball_vjp(const KleinPoint& k, double c, const Vec& upstream) {
  const double w = std::sqrt(std::max(1.0 - c * k.squaredNorm(), kBallEps * kBallEps));
  const double d = 1.0 + w;
  return upstream / d + (c * upstream.dot(k) / (w * d * d)) * k;
}

struct MidpointGrad {
  std::vector<Vec> d_points;
  std::vector<double> d_weights;
};

// Backward through the Einstein midpoint given upstream dL/d(midpoint).
// Differentiates through the Klein transforms, the Lorentz factors, and the
// weight normalization.
inline MidpointGrad einstein_midpoint_vjp(std::span<const Vec> points,
                                          std::span<const double> weights, double c,
                                          const Vec& upstream) {
  const std::size_t n = points.size();
  std::vector<KleinPoint> ks(n);
  std::vector<double> gs(n);
  double total = 0.0;
  Vec mu = Vec::Zero(points[0].size());
  for (std::size_t i = 0; i < n; ++i) {
    ks[i] = ball_to_klein(points[i], c);
    gs[i] = lorentz_factor(ks[i], c);
    total += weights[i] * gs[i];
    mu += weights[i] * gs[i] * ks[i];
  }
  mu /= total;

  const Vec up_k = klein_to_ball_vjp(mu, c, upstream);
  const double up_mu = up_k.dot(mu);

  MidpointGrad out;
  out.d_points.resize(n);
  out.d_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double excess = up_k.dot(ks[i]) - up_mu;
    out.d_weights[i] = gs[i] * excess / total;
    // d(gamma)/dk = c gamma^3 k
    Vec dk = (weights[i] * gs[i] / total) * up_k +
             (weights[i] * excess / total) * (c * gs[i] * gs[i] * gs[i]) * ks[i];
    out.d_points[i] = ball_to_klein_vjp(points[i], c, dk);
  }
  return out;
}

}  // namespace hyprec::geometry
