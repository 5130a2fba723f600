#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "hyprec/error.hpp"
#include "hyprec/rng.hpp"
#include "hyprec/space.hpp"

namespace hyprec {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// -log sigmoid(z), computed as softplus(-z) so large |z| stays finite.
inline double neg_log_sigmoid(double z) {
  if (z > 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

enum class Aggregation { kAttention, kAverage };
enum class Regularization { kFixedBeta, kAdaptive };

struct ModelShape {
  Eigen::Index n_users = 0;
  Eigen::Index n_items = 0;
  Eigen::Index n_entities = 0;  // >= n_items; rows [0, n_items) are the items
  Eigen::Index n_relations = 0;
  Eigen::Index dim = 0;
};

// Per-item KG adjacency N_v: unique (relation, tail-entity) pairs in
// canonical (relation, tail) order.
struct NeighborSet {
  std::vector<std::vector<std::pair<int, int>>> by_item;

  static NeighborSet empty(Eigen::Index n_items) {
    NeighborSet n;
    n.by_item.resize(static_cast<std::size_t>(n_items));
    return n;
  }

  const std::vector<std::pair<int, int>>& of(int item) const {
    return by_item.at(static_cast<std::size_t>(item));
  }
};

// All learnable state. Items share the entity table: entity row v, v < n_items,
// is the embedding of item v. Every embedding row satisfies the ball invariant
// after each projection; beta_logits are unconstrained.
struct ModelParameters {
  Mat user;                    // n_users x d
  Mat entity;                  // n_entities x d
  Mat relation;                // n_relations x d
  Eigen::VectorXd beta_logits; // n_items
  Eigen::Index n_items = 0;

  ModelShape shape() const {
    return {user.rows(), n_items, entity.rows(), relation.rows(), user.cols()};
  }

  Vec user_at(int u) const {
    if (u < 0 || u >= user.rows()) throw LookupError("unknown user id " + std::to_string(u));
    return user.row(u);
  }
  Vec item_at(int v) const {
    if (v < 0 || v >= n_items) throw LookupError("unknown item id " + std::to_string(v));
    return entity.row(v);
  }
  Vec entity_at(int e) const {
    if (e < 0 || e >= entity.rows()) throw LookupError("unknown entity id " + std::to_string(e));
    return entity.row(e);
  }
  Vec relation_at(int r) const {
    if (r < 0 || r >= relation.rows()) {
      throw LookupError("unknown relation id " + std::to_string(r));
    }
    return relation.row(r);
  }

  // Near-origin uniform init, [-0.01/sqrt(d), 0.01/sqrt(d)] per coordinate,
  // then projected. Draw order is fixed: user rows, entity rows, relation rows.
  static ModelParameters init(const ModelShape& s, const Space& space, std::uint64_t seed) {
    ModelParameters p;
    p.n_items = s.n_items;
    p.user.resize(s.n_users, s.dim);
    p.entity.resize(s.n_entities, s.dim);
    p.relation.resize(s.n_relations, s.dim);
    p.beta_logits = Eigen::VectorXd::Zero(s.n_items);

    const double bound = 0.01 / std::sqrt(static_cast<double>(s.dim));
    Rng rng(derive_seed(seed, 0));
    for (Mat* table : {&p.user, &p.entity, &p.relation}) {
      for (Eigen::Index i = 0; i < table->rows(); ++i) {
        for (Eigen::Index j = 0; j < table->cols(); ++j) {
          (*table)(i, j) = rng.uniform(-bound, bound);
        }
      }
    }
    p.project_all(space);
    return p;
  }

  void project_all(const Space& space) {
    if (!space.hyperbolic()) return;
    for (Mat* table : {&user, &entity, &relation}) {
      for (Eigen::Index i = 0; i < table->rows(); ++i) {
        table->row(i) = space.project(table->row(i));
      }
    }
  }

  bool in_ball(const Space& space) const {
    if (!space.hyperbolic()) return true;
    for (const Mat* table : {&user, &entity, &relation}) {
      for (Eigen::Index i = 0; i < table->rows(); ++i) {
        if (!geometry::in_ball(table->row(i), space.c)) return false;
      }
    }
    return true;
  }
};

struct Triple {
  int user = 0;
  int pos = 0;
  int neg = 0;
};

// Regularization mode: a single scalar weight, or sigmoid(beta_v) per item.
struct RegMode {
  Regularization kind = Regularization::kAdaptive;
  double fixed_beta = 0.0;

  double weight(const ModelParameters& p, int item) const {
    return kind == Regularization::kFixedBeta ? fixed_beta : sigmoid(p.beta_logits[item]);
  }
  // True when the KG term is dropped entirely (fixed beta of exactly zero).
  bool skips_kg() const { return kind == Regularization::kFixedBeta && fixed_beta == 0.0; }
};

// --- forward ----------------------------------------------------------------

inline double preference_distance(const ModelParameters& p, const Space& space, int u, int v) {
  return space.distance(p.user_at(u), p.item_at(v));
}

inline double bpr_loss(const ModelParameters& p, const Space& space, int u, int pos, int neg) {
  const Vec uu = p.user_at(u);
  const double margin = space.distance(uu, p.item_at(neg)) - space.distance(uu, p.item_at(pos));
  return neg_log_sigmoid(margin);
}

inline double attention_score(const ModelParameters& p, const Space& space, int v, int r, int t) {
  return std::exp(-space.distance(space.translate(p.item_at(v), p.relation_at(r)), p.entity_at(t)));
}

namespace detail {

struct NeighborForward {
  std::vector<Vec> tails;
  std::vector<double> weights;  // attention scores, or all-ones for averaging
  Vec repr;
};

inline std::optional<NeighborForward> neighbor_forward(const ModelParameters& p,
                                                       const Space& space, Aggregation agg,
                                                       const NeighborSet& nbrs, int v) {
  const auto& nv = nbrs.of(v);
  if (nv.empty()) return std::nullopt;
  NeighborForward fwd;
  fwd.tails.reserve(nv.size());
  fwd.weights.reserve(nv.size());
  for (const auto& [r, t] : nv) {
    fwd.tails.push_back(p.entity_at(t));
    fwd.weights.push_back(agg == Aggregation::kAttention ? attention_score(p, space, v, r, t)
                                                         : 1.0);
  }
  fwd.repr = space.aggregate(fwd.tails, fwd.weights);
  return fwd;
}

}  // namespace detail

// Aggregated representation of N_v; nullopt when the item has no neighbors.
inline std::optional<Vec> neighborhood_representation(const ModelParameters& p, const Space& space,
                                                      Aggregation agg, const NeighborSet& nbrs,
                                                      int v) {
  auto fwd = detail::neighbor_forward(p, space, agg, nbrs, v);
  if (!fwd) return std::nullopt;
  return std::move(fwd->repr);
}

inline std::optional<double> kg_loss(const ModelParameters& p, const Space& space, Aggregation agg,
                                     const NeighborSet& nbrs, int v) {
  auto repr = neighborhood_representation(p, space, agg, nbrs, v);
  if (!repr) return std::nullopt;
  geometry::diagnostics().kg_loss_evals.fetch_add(1, std::memory_order_relaxed);
  return space.distance(p.item_at(v), *repr);
}

struct LossBreakdown {
  double bpr = 0.0;
  double kg = 0.0;        // raw KG distance term (0 when absent)
  double kg_weight = 0.0; // effective multiplier applied to kg
  bool has_kg = false;

  double total() const { return bpr + (has_kg ? kg_weight * kg : 0.0); }
};

inline LossBreakdown combined_loss(const ModelParameters& p, const Space& space, Aggregation agg,
                                   const NeighborSet& nbrs, const RegMode& reg, const Triple& tr) {
  LossBreakdown out;
  out.bpr = bpr_loss(p, space, tr.user, tr.pos, tr.neg);
  if (reg.skips_kg()) return out;
  if (auto lk = kg_loss(p, space, agg, nbrs, tr.pos)) {
    out.kg = *lk;
    out.kg_weight = reg.weight(p, tr.pos);
    out.has_kg = true;
  }
  return out;
}

// --- backward ---------------------------------------------------------------

struct GradientBuffer {
  Mat user;
  Mat entity;
  Mat relation;

  static GradientBuffer zero_like(const ModelParameters& p) {
    GradientBuffer g;
    g.user = Mat::Zero(p.user.rows(), p.user.cols());
    g.entity = Mat::Zero(p.entity.rows(), p.entity.cols());
    g.relation = Mat::Zero(p.relation.rows(), p.relation.cols());
    return g;
  }

  void set_zero() {
    user.setZero();
    entity.setZero();
    relation.setZero();
  }

  bool all_finite() const {
    return user.allFinite() && entity.allFinite() && relation.allFinite();
  }
};

struct BprGrads {
  double loss = 0.0;
  Vec d_user, d_pos, d_neg;
};

inline BprGrads bpr_backward(const ModelParameters& p, const Space& space, const Triple& tr) {
  const Vec uu = p.user_at(tr.user);
  const Vec vp = p.item_at(tr.pos);
  const Vec vn = p.item_at(tr.neg);
  const double d_pos = space.distance(uu, vp);
  const double d_neg = space.distance(uu, vn);
  const double margin = d_neg - d_pos;

  BprGrads out;
  out.loss = neg_log_sigmoid(margin);
  const double dmargin = sigmoid(margin) - 1.0;  // d loss / d margin

  const PairGrad gp = space.distance_grad(uu, vp);
  const PairGrad gn = space.distance_grad(uu, vn);
  out.d_user = dmargin * (gn.dx - gp.dx);
  out.d_pos = -dmargin * gp.dy;
  out.d_neg = dmargin * gn.dy;
  return out;
}

// Gradient of one KG term d(v, n_v) with respect to every parameter row it
// touches: the item/entity row v, each tail row, and each relation row.
// Attention weights are differentiated through, not treated as constants.
struct SparseGrad {
  std::vector<std::pair<int, Vec>> entity;   // entity row id -> gradient
  std::vector<std::pair<int, Vec>> relation; // relation row id -> gradient
};

struct KgGrads {
  double loss = 0.0;
  SparseGrad grad;
};

inline std::optional<KgGrads> kg_backward(const ModelParameters& p, const Space& space,
                                          Aggregation agg, const NeighborSet& nbrs, int v) {
  auto fwd = detail::neighbor_forward(p, space, agg, nbrs, v);
  if (!fwd) return std::nullopt;
  geometry::diagnostics().kg_loss_evals.fetch_add(1, std::memory_order_relaxed);

  const auto& nv = nbrs.of(v);
  const Vec item = p.item_at(v);

  KgGrads out;
  out.loss = space.distance(item, fwd->repr);

  const PairGrad dist = space.distance_grad(item, fwd->repr);
  Vec d_item = dist.dx;  // direct path into v

  const MidpointGrad mid = space.aggregate_vjp(fwd->tails, fwd->weights, dist.dy);
  std::vector<Vec> d_tails = mid.d_points;

  if (agg == Aggregation::kAttention) {
    // alpha_i = exp(-d(v (+) r_i, t_i)); chain each weight gradient back
    // through the score into v, r_i, and t_i.
    for (std::size_t i = 0; i < nv.size(); ++i) {
      const auto [r, t] = nv[i];
      const Vec rel = p.relation_at(r);
      const Vec shifted = space.translate(item, rel);
      const PairGrad dscore = space.distance_grad(shifted, fwd->tails[i]);
      const double up = -mid.d_weights[i] * fwd->weights[i];  // d loss / d distance_i
      const PairGrad dshift = space.translate_vjp(item, rel, up * dscore.dx);
      d_item += dshift.dx;
      d_tails[i] += up * dscore.dy;

      bool merged = false;
      for (auto& [rid, g] : out.grad.relation) {
        if (rid == r) {
          g += dshift.dy;
          merged = true;
          break;
        }
      }
      if (!merged) out.grad.relation.emplace_back(r, dshift.dy);
    }
  }

  // Tails may repeat an entity id (distinct relations to one tail); merge.
  out.grad.entity.emplace_back(v, std::move(d_item));
  for (std::size_t i = 0; i < nv.size(); ++i) {
    const int t = nv[i].second;
    bool merged = false;
    for (auto& [eid, g] : out.grad.entity) {
      if (eid == t) {
        g += d_tails[i];
        merged = true;
        break;
      }
    }
    if (!merged) out.grad.entity.emplace_back(t, d_tails[i]);
  }
  return out;
}

// Accumulates scale * d(combined_loss)/d(theta) into the buffer and returns
// the loss values. beta_logits receive no gradient here; they are outer
// variables.
inline LossBreakdown accumulate_combined_loss(const ModelParameters& p, const Space& space,
                                              Aggregation agg, const NeighborSet& nbrs,
                                              const RegMode& reg, const Triple& tr, double scale,
                                              GradientBuffer& buf) {
  LossBreakdown out;

  const BprGrads bpr = bpr_backward(p, space, tr);
  out.bpr = bpr.loss;
  buf.user.row(tr.user) += scale * bpr.d_user.transpose();
  buf.entity.row(tr.pos) += scale * bpr.d_pos.transpose();
  buf.entity.row(tr.neg) += scale * bpr.d_neg.transpose();

  if (reg.skips_kg()) return out;
  if (auto kg = kg_backward(p, space, agg, nbrs, tr.pos)) {
    out.kg = kg->loss;
    out.kg_weight = reg.weight(p, tr.pos);
    out.has_kg = true;
    const double s = scale * out.kg_weight;
    for (const auto& [eid, g] : kg->grad.entity) buf.entity.row(eid) += s * g.transpose();
    for (const auto& [rid, g] : kg->grad.relation) buf.relation.row(rid) += s * g.transpose();
  }
  return out;
}

}  // namespace hyprec
