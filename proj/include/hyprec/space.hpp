#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hyprec/geometry.hpp"

namespace hyprec {

using geometry::MidpointGrad;
using geometry::PairGrad;
using Vec = geometry::Vec;

enum class SpaceKind { kEuclidean, kHyperbolic };

// Embedding-space switch. Hyperbolic mode routes through the Poincare ball
// kernel; Euclidean mode swaps in the plain distance, vector addition, and
// weighted averaging while keeping every call site identical.
struct Space {
  SpaceKind kind = SpaceKind::kHyperbolic;
  double c = 1.0;

  bool hyperbolic() const { return kind == SpaceKind::kHyperbolic; }

  double distance(const Vec& x, const Vec& y) const {
    return hyperbolic() ? geometry::poincare_distance(x, y, c) : (x - y).norm();
  }

  PairGrad distance_grad(const Vec& x, const Vec& y) const {
    if (hyperbolic()) return geometry::poincare_distance_grad(x, y, c);
    PairGrad g{Vec::Zero(x.size()), Vec::Zero(y.size())};
    const Vec d = x - y;
    const double n = d.norm();
    if (n < 1e-15) return g;
    g.dx = d / n;
    g.dy = -g.dx;
    return g;
  }

  Vec translate(const Vec& x, const Vec& r) const {
    return hyperbolic() ? geometry::mobius_add(x, r, c) : Vec(x + r);
  }

  PairGrad translate_vjp(const Vec& x, const Vec& r, const Vec& upstream) const {
    if (hyperbolic()) return geometry::mobius_add_vjp(x, r, c, upstream);
    return PairGrad{upstream, upstream};
  }

  Vec aggregate(std::span<const Vec> points, std::span<const double> weights) const {
    if (hyperbolic()) return geometry::einstein_midpoint(points, weights, c);
    if (points.empty()) throw std::invalid_argument("aggregate: empty point list");
    if (points.size() != weights.size()) {
      throw std::invalid_argument("aggregate: points/weights size mismatch");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw std::invalid_argument("aggregate: weights must be finite and nonnegative");
      }
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("aggregate: weights sum to zero");
    Vec acc = Vec::Zero(points[0].size());
    for (std::size_t i = 0; i < points.size(); ++i) acc += weights[i] * points[i];
    return acc / total;
  }

  MidpointGrad aggregate_vjp(std::span<const Vec> points, std::span<const double> weights,
                             const Vec& upstream) const {
    if (hyperbolic()) return geometry::einstein_midpoint_vjp(points, weights, c, upstream);
    double total = 0.0;
    for (double w : weights) total += w;
    Vec avg = Vec::Zero(points[0].size());
    for (std::size_t i = 0; i < points.size(); ++i) avg += weights[i] * points[i];
    avg /= total;
    MidpointGrad out;
    out.d_points.resize(points.size());
    out.d_weights.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      out.d_points[i] = (weights[i] / total) * upstream;
      out.d_weights[i] = upstream.dot(points[i] - avg) / total;
    }
    return out;
  }

  Vec project(Vec x) const {
    return hyperbolic() ? geometry::project_to_ball(std::move(x), c) : x;
  }

  // Optimizer-facing gradient geometry; identity in Euclidean mode.
  Vec rescale_grad(const Vec& x, const Vec& grad) const {
    return hyperbolic() ? geometry::riemannian_rescale(x, grad, c) : grad;
  }
};

}  // namespace hyprec
