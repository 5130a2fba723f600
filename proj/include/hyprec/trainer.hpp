#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hyprec/data.hpp"
#include "hyprec/error.hpp"
#include "hyprec/eval.hpp"
#include "hyprec/model.hpp"
#include "hyprec/rng.hpp"
#include "hyprec/space.hpp"

namespace hyprec {

// ---------------------------------------------------------------------------
// Training configuration: flat key=value text format, unknown keys rejected.
// ---------------------------------------------------------------------------

struct TrainingConfig {
  double curvature = 1.0;
  int dim = 64;
  double inner_lr = 1e-3;
  double outer_lr = 1e-3;
  // Proxy step size (Eq. 12's alpha); defaults to inner_lr when unset.
  double proxy_alpha = std::numeric_limits<double>::quiet_NaN();
  double weight_decay = 1e-5;
  int batch_size = 4096;
  int epochs = 50;
  std::uint64_t seed = 42;
  SpaceKind space = SpaceKind::kHyperbolic;
  Aggregation aggregation = Aggregation::kAttention;
  Regularization regularization = Regularization::kAdaptive;
  double fixed_beta = 1.0;
  int negatives_per_pos = 1;
  int patience = 20;  // epochs without val NDCG@20 improvement; 0 disables

  TrainingConfig finalized() const {
    TrainingConfig c = *this;
    if (std::isnan(c.proxy_alpha)) c.proxy_alpha = c.inner_lr;
    return c;
  }

  void validate() const {
    auto require = [](bool ok, const char* msg) {
      if (!ok) throw ConfigError(msg);
    };
    require(std::isfinite(curvature) && curvature > 0.0, "curvature must be > 0");
    require(dim > 0, "dim must be > 0");
    require(std::isfinite(inner_lr) && inner_lr > 0.0, "inner_lr must be > 0");
    require(std::isfinite(outer_lr) && outer_lr > 0.0, "outer_lr must be > 0");
    require(std::isnan(proxy_alpha) || (std::isfinite(proxy_alpha) && proxy_alpha > 0.0),
            "proxy_alpha must be > 0");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(epochs >= 0, "epochs must be >= 0");
    require(std::isfinite(fixed_beta) && fixed_beta >= 0.0, "fixed_beta must be >= 0");
    require(negatives_per_pos >= 1, "negatives_per_pos must be >= 1");
    require(patience >= 0, "patience must be >= 0");
  }

  Space make_space() const { return Space{space, curvature}; }
  RegMode make_reg() const { return RegMode{regularization, fixed_beta}; }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double d;
  try {
    d = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
  if (used != value.size()) throw ConfigError("bad value for " + key + ": " + value);
  return d;
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  std::int64_t i;
  try {
    i = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
  if (used != value.size()) throw ConfigError("bad value for " + key + ": " + value);
  return i;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  std::uint64_t u;
  try {
    u = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
  if (used != value.size() || (!value.empty() && value[0] == '-')) {
    throw ConfigError("bad value for " + key + ": " + value);
  }
  return u;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Assigns one configuration key; throws ConfigError for unknown keys or
// unparsable values. Shared by the config-file reader and CLI overrides.
inline void set_config_key(TrainingConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_uint;
  if (key == "curvature") {
    cfg.curvature = parse_double(key, value);
  } else if (key == "dim") {
    cfg.dim = static_cast<int>(parse_int(key, value));
  } else if (key == "inner_lr") {
    cfg.inner_lr = parse_double(key, value);
  } else if (key == "outer_lr") {
    cfg.outer_lr = parse_double(key, value);
  } else if (key == "proxy_alpha") {
    cfg.proxy_alpha = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_double(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "epochs") {
    cfg.epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "space") {
    if (value == "hyperbolic") {
      cfg.space = SpaceKind::kHyperbolic;
    } else if (value == "euclidean") {
      cfg.space = SpaceKind::kEuclidean;
    } else {
      throw ConfigError("space must be hyperbolic or euclidean, got: " + value);
    }
  } else if (key == "aggregation") {
    if (value == "attention") {
      cfg.aggregation = Aggregation::kAttention;
    } else if (value == "average") {
      cfg.aggregation = Aggregation::kAverage;
    } else {
      throw ConfigError("aggregation must be attention or average, got: " + value);
    }
  } else if (key == "mode") {
    if (value == "adaptive") {
      cfg.regularization = Regularization::kAdaptive;
    } else if (value == "fixed") {
      cfg.regularization = Regularization::kFixedBeta;
    } else {
      throw ConfigError("mode must be adaptive or fixed, got: " + value);
    }
  } else if (key == "fixed_beta") {
    cfg.fixed_beta = parse_double(key, value);
  } else if (key == "negatives_per_pos") {
    cfg.negatives_per_pos = static_cast<int>(parse_int(key, value));
  } else if (key == "patience") {
    cfg.patience = static_cast<int>(parse_int(key, value));
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

// Parses `key = value` lines; blank lines and `#` comments are skipped.
inline TrainingConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  TrainingConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = detail::trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = detail::trim(stripped.substr(0, eq));
    const std::string value = detail::trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    try {
      set_config_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline TrainingConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  return parse_config(in, path.string());
}

inline std::string serialize_config(const TrainingConfig& cfg_in) {
  const TrainingConfig cfg = cfg_in.finalized();
  std::ostringstream out;
  char buf[64];
  auto fmt = [&](double d) {
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return std::string(buf);
  };
  out << "curvature=" << fmt(cfg.curvature) << '\n';
  out << "dim=" << cfg.dim << '\n';
  out << "inner_lr=" << fmt(cfg.inner_lr) << '\n';
  out << "outer_lr=" << fmt(cfg.outer_lr) << '\n';
  out << "proxy_alpha=" << fmt(cfg.proxy_alpha) << '\n';
  out << "weight_decay=" << fmt(cfg.weight_decay) << '\n';
  out << "batch_size=" << cfg.batch_size << '\n';
  out << "epochs=" << cfg.epochs << '\n';
  out << "seed=" << cfg.seed << '\n';
  out << "space=" << (cfg.space == SpaceKind::kHyperbolic ? "hyperbolic" : "euclidean") << '\n';
  out << "aggregation="
      << (cfg.aggregation == Aggregation::kAttention ? "attention" : "average") << '\n';
  out << "mode=" << (cfg.regularization == Regularization::kAdaptive ? "adaptive" : "fixed")
      << '\n';
  out << "fixed_beta=" << fmt(cfg.fixed_beta) << '\n';
  out << "negatives_per_pos=" << cfg.negatives_per_pos << '\n';
  out << "patience=" << cfg.patience << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Optimizers: plain Adam with dense moments, one state per parameter table.
// ---------------------------------------------------------------------------

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

namespace detail {

template <typename Dense>
void adam_update(Dense& theta, Dense& m, Dense& v, const Dense& g, double lr, double bc1,
                 double bc2) {
  m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
  v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
  theta.array() -= lr * (m.array() * bc1) / ((v.array() * bc2).sqrt() + kAdamEps);
}

}  // namespace detail

struct AdamState {
  Mat m_user, v_user, m_entity, v_entity, m_relation, v_relation;
  std::int64_t step = 0;

  static AdamState zero_like(const ModelParameters& p) {
    AdamState s;
    s.m_user = Mat::Zero(p.user.rows(), p.user.cols());
    s.v_user = s.m_user;
    s.m_entity = Mat::Zero(p.entity.rows(), p.entity.cols());
    s.v_entity = s.m_entity;
    s.m_relation = Mat::Zero(p.relation.rows(), p.relation.cols());
    s.v_relation = s.m_relation;
    return s;
  }
};

struct AdamVecState {
  Eigen::VectorXd m, v;
  std::int64_t step = 0;

  static AdamVecState zero_like(const Eigen::VectorXd& x) {
    AdamVecState s;
    s.m = Eigen::VectorXd::Zero(x.size());
    s.v = s.m;
    return s;
  }
};

// ---------------------------------------------------------------------------
// Inner problem: J_inner = mean combined_loss + weight_decay * ||Theta||^2.
// ---------------------------------------------------------------------------

struct InnerGradient {
  GradientBuffer grad;
  double loss = 0.0;           // full J_inner value
  double mean_combined = 0.0;  // data term alone
};

inline InnerGradient inner_gradient(const ModelParameters& p, const Space& space, Aggregation agg,
                                    const NeighborSet& nbrs, const RegMode& reg,
                                    const std::vector<Triple>& batch, double weight_decay) {
  if (batch.empty()) throw Error("inner_gradient: empty batch");
  InnerGradient out{GradientBuffer::zero_like(p)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  double acc = 0.0;
  for (const Triple& tr : batch) {
    acc += accumulate_combined_loss(p, space, agg, nbrs, reg, tr, scale, out.grad).total();
  }
  out.mean_combined = acc * scale;
  out.loss = out.mean_combined;
  if (weight_decay > 0.0) {
    out.loss += weight_decay *
                (p.user.squaredNorm() + p.entity.squaredNorm() + p.relation.squaredNorm());
    out.grad.user += (2.0 * weight_decay) * p.user;
    out.grad.entity += (2.0 * weight_decay) * p.entity;
    out.grad.relation += (2.0 * weight_decay) * p.relation;
  }
  if (!std::isfinite(out.loss) || !out.grad.all_finite()) {
    throw DivergenceError("non-finite inner gradient");
  }
  return out;
}

// Scales each gradient row by ((1 - c||theta||^2)/2)^2, the inverse squared
// conformal factor at the corresponding parameter row. No-op in Euclidean mode.
inline void rescale_gradients(GradientBuffer& g, const ModelParameters& p, const Space& space) {
  if (!space.hyperbolic()) return;
  auto scale_table = [&](Mat& gm, const Mat& pm) {
    const Eigen::ArrayXd f =
        ((1.0 - space.c * pm.rowwise().squaredNorm().array()) / 2.0).square();
    gm.array().colwise() *= f;
  };
  scale_table(g.user, p.user);
  scale_table(g.entity, p.entity);
  scale_table(g.relation, p.relation);
}

inline void apply_inner_step(ModelParameters& p, GradientBuffer g, AdamState& opt,
                             const Space& space, double lr) {
  rescale_gradients(g, p, space);
  opt.step += 1;
  const double bc1 = 1.0 / (1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.step)));
  const double bc2 = 1.0 / (1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.step)));
  detail::adam_update(p.user, opt.m_user, opt.v_user, g.user, lr, bc1, bc2);
  detail::adam_update(p.entity, opt.m_entity, opt.v_entity, g.entity, lr, bc1, bc2);
  detail::adam_update(p.relation, opt.m_relation, opt.v_relation, g.relation, lr, bc1, bc2);
  p.project_all(space);
  if (!p.user.allFinite() || !p.entity.allFinite() || !p.relation.allFinite()) {
    throw DivergenceError("non-finite parameters after inner step");
  }
}

// One Adam step on Theta (beta untouched). Returns the pre-step J_inner value.
inline double inner_step(ModelParameters& p, const Space& space, Aggregation agg,
                         const NeighborSet& nbrs, const RegMode& reg,
                         const std::vector<Triple>& batch, const TrainingConfig& cfg,
                         AdamState& opt) {
  InnerGradient ig = inner_gradient(p, space, agg, nbrs, reg, batch, cfg.weight_decay);
  apply_inner_step(p, std::move(ig.grad), opt, space, cfg.inner_lr);
  return ig.loss;
}

// Theta~ = project(Theta - alpha * grad J_inner): one raw SGD step, no
// optimizer moments and no Riemannian rescaling, never written back.
inline ModelParameters proxy_parameters(const ModelParameters& p, const Space& space,
                                        Aggregation agg, const NeighborSet& nbrs,
                                        const RegMode& reg, const std::vector<Triple>& batch,
                                        double alpha, double weight_decay) {
  const InnerGradient ig = inner_gradient(p, space, agg, nbrs, reg, batch, weight_decay);
  ModelParameters out = p;
  out.user -= alpha * ig.grad.user;
  out.entity -= alpha * ig.grad.entity;
  out.relation -= alpha * ig.grad.relation;
  out.project_all(space);
  return out;
}

// ---------------------------------------------------------------------------
// Outer problem: J_outer = mean BPR over a batch, evaluated at Theta~.
// ---------------------------------------------------------------------------

inline double outer_objective(const ModelParameters& p, const Space& space,
                              const std::vector<Triple>& batch) {
  if (batch.empty()) throw Error("outer_objective: empty batch");
  double acc = 0.0;
  for (const Triple& tr : batch) acc += bpr_loss(p, space, tr.user, tr.pos, tr.neg);
  return acc / static_cast<double>(batch.size());
}

struct OuterGradient {
  GradientBuffer grad;
  double loss = 0.0;
};

inline OuterGradient outer_gradient(const ModelParameters& p, const Space& space,
                                    const std::vector<Triple>& batch) {
  if (batch.empty()) throw Error("outer_gradient: empty batch");
  OuterGradient out{GradientBuffer::zero_like(p)};
  const double scale = 1.0 / static_cast<double>(batch.size());
  double acc = 0.0;
  for (const Triple& tr : batch) {
    const BprGrads g = bpr_backward(p, space, tr);
    acc += g.loss;
    out.grad.user.row(tr.user) += scale * g.d_user.transpose();
    out.grad.entity.row(tr.pos) += scale * g.d_pos.transpose();
    out.grad.entity.row(tr.neg) += scale * g.d_neg.transpose();
  }
  out.loss = acc * scale;
  return out;
}

// Closed-form hypergradient of J_outer(Theta~(beta)) in the beta logits.
// beta_v enters Theta~ only through the sigma(beta_v) * L_K(v) term of the
// proxy gradient, so
//   dJ_outer/dbeta_v = -(alpha / |B|) * sigma'(beta_v)
//                      * sum over occurrences of v in B of
//                        <grad_Theta L_K(v; Theta), grad J_outer(Theta~)>.
// The ball projection inside the proxy is treated as identity (it only binds
// on a measure-zero boundary set).
inline Eigen::VectorXd hypergradient(const ModelParameters& p, const Space& space, Aggregation agg,
                                     const NeighborSet& nbrs,
                                     const std::vector<Triple>& proxy_batch,
                                     const std::vector<Triple>& outer_batch,
                                     const TrainingConfig& cfg) {
  if (cfg.regularization != Regularization::kAdaptive) {
    throw Error("hypergradient requires adaptive regularization mode");
  }
  const RegMode reg = cfg.make_reg();
  const double alpha = cfg.finalized().proxy_alpha;
  const ModelParameters tilde =
      proxy_parameters(p, space, agg, nbrs, reg, proxy_batch, alpha, cfg.weight_decay);
  const OuterGradient og = outer_gradient(tilde, space, outer_batch);

  Eigen::VectorXd h = Eigen::VectorXd::Zero(p.beta_logits.size());
  const double scale = -alpha / static_cast<double>(proxy_batch.size());
  for (const Triple& tr : proxy_batch) {
    const auto kg = kg_backward(p, space, agg, nbrs, tr.pos);
    if (!kg) continue;
    double dot = 0.0;
    for (const auto& [eid, g] : kg->grad.entity) dot += og.grad.entity.row(eid).dot(g);
    for (const auto& [rid, g] : kg->grad.relation) dot += og.grad.relation.row(rid).dot(g);
    const double sb = sigmoid(p.beta_logits[tr.pos]);
    h[tr.pos] += scale * sb * (1.0 - sb) * dot;
  }
  if (!h.allFinite()) throw DivergenceError("non-finite hypergradient");
  return h;
}

// One Adam step on the beta logits; Theta untouched. Returns the hypergradient.
inline Eigen::VectorXd outer_step(ModelParameters& p, const Space& space, Aggregation agg,
                                  const NeighborSet& nbrs, const std::vector<Triple>& proxy_batch,
                                  const std::vector<Triple>& outer_batch,
                                  const TrainingConfig& cfg, AdamVecState& opt) {
  const Eigen::VectorXd h = hypergradient(p, space, agg, nbrs, proxy_batch, outer_batch, cfg);
  opt.step += 1;
  const double bc1 = 1.0 / (1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.step)));
  const double bc2 = 1.0 / (1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.step)));
  detail::adam_update(p.beta_logits, opt.m, opt.v, h, cfg.outer_lr, bc1, bc2);
  return h;
}

// ---------------------------------------------------------------------------
// Sampling and training loop.
// ---------------------------------------------------------------------------

// Uniform over items outside the user's training set, by rejection.
inline int sample_negative(Rng& rng, int user, const InteractionDataset& data) {
  const auto& seen = data.train.at(static_cast<std::size_t>(user));
  if (seen.size() >= static_cast<std::size_t>(data.n_items)) {
    throw Error("user " + std::to_string(user) +
                " interacted with every item; cannot sample a negative");
  }
  for (;;) {
    const int v = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(data.n_items)));
    if (!std::binary_search(seen.begin(), seen.end(), v)) return v;
  }
}

namespace detail {

inline std::vector<Triple> sample_batch(Rng& rng, const std::vector<std::pair<int, int>>& pairs,
                                        const InteractionDataset& data, int size) {
  std::vector<Triple> batch;
  batch.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) {
    const auto& [u, v] = pairs[static_cast<std::size_t>(rng.next_below(pairs.size()))];
    batch.push_back({u, v, sample_negative(rng, u, data)});
  }
  return batch;
}

}  // namespace detail

struct EpochStats {
  int epoch = 0;  // 1-based
  double inner_loss = 0.0;
  double mean_sigma_beta = 0.0;  // fixed mode: the fixed beta itself
  double recall20 = 0.0;
  double ndcg20 = 0.0;
};

inline std::string format_history_line(const EpochStats& s) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d, %.17g, %.17g, %.17g, %.17g\n", s.epoch, s.inner_loss,
                s.mean_sigma_beta, s.recall20, s.ndcg20);
  return buf;
}

struct TrainResult {
  ModelParameters params;  // best-validation checkpoint (final params if no validation)
  std::vector<EpochStats> history;
  int best_epoch = 0;  // 1-based; 0 when validation is empty
  double best_ndcg = 0.0;
};

inline TrainResult train(const InteractionDataset& data, const KnowledgeGraph& kg,
                         const TrainingConfig& cfg_in,
                         const std::function<void(const EpochStats&)>& on_epoch = {}) {
  const TrainingConfig cfg = cfg_in.finalized();
  cfg.validate();
  if (kg.n_items != 0 && kg.n_items != data.n_items) {
    throw Error("knowledge graph was built against a different item set");
  }
  if (data.n_items < 2) throw Error("need at least two items to sample negatives");

  const Space space = cfg.make_space();
  const RegMode reg = cfg.make_reg();
  const bool adaptive = cfg.regularization == Regularization::kAdaptive;

  const NeighborSet nbrs =
      kg.adjacency.by_item.empty() ? NeighborSet::empty(data.n_items) : kg.adjacency;

  ModelShape shape;
  shape.n_users = data.n_users;
  shape.n_items = data.n_items;
  shape.n_entities = std::max<Eigen::Index>(kg.n_entities(), data.n_items);
  shape.n_relations = kg.n_relations;
  shape.dim = cfg.dim;

  ModelParameters params = ModelParameters::init(shape, space, cfg.seed);
  AdamState opt_theta = AdamState::zero_like(params);
  AdamVecState opt_beta = AdamVecState::zero_like(params.beta_logits);

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(data.train_pair_count());
  for (int u = 0; u < data.n_users; ++u) {
    for (int v : data.train[static_cast<std::size_t>(u)]) pairs.emplace_back(u, v);
  }
  if (pairs.empty()) throw Error("training set is empty");

  bool has_validation = false;
  for (const auto& s : data.validation) {
    if (!s.empty()) {
      has_validation = true;
      break;
    }
  }

  TrainResult res;
  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x10000u + static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    double loss_acc = 0.0;
    std::size_t n_batches = 0;
    std::vector<Triple> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));

    auto flush = [&]() {
      if (batch.empty()) return;
      InnerGradient ig = inner_gradient(params, space, cfg.aggregation, nbrs, reg, batch,
                                        cfg.weight_decay);
      if (adaptive) {
        // Alg. 1 fixes Theta^t for the beta update, so it runs before the
        // Adam step with the already-computed inner gradient is applied.
        const auto proxy_batch = detail::sample_batch(rng, pairs, data, cfg.batch_size);
        const auto outer_batch = detail::sample_batch(rng, pairs, data, cfg.batch_size);
        outer_step(params, space, cfg.aggregation, nbrs, proxy_batch, outer_batch, cfg,
                   opt_beta);
      }
      apply_inner_step(params, std::move(ig.grad), opt_theta, space, cfg.inner_lr);
      loss_acc += ig.loss;
      ++n_batches;
      batch.clear();
    };

    for (std::size_t idx : order) {
      const auto& [u, v] = pairs[idx];
      for (int n = 0; n < cfg.negatives_per_pos; ++n) {
        batch.push_back({u, v, sample_negative(rng, u, data)});
        if (batch.size() == static_cast<std::size_t>(cfg.batch_size)) flush();
      }
    }
    flush();

    EpochStats st;
    st.epoch = epoch;
    st.inner_loss = loss_acc / static_cast<double>(n_batches);
    st.mean_sigma_beta =
        adaptive ? (1.0 / (1.0 + (-params.beta_logits.array()).exp())).mean() : cfg.fixed_beta;
    const MetricsReport rep = evaluate(params, space, data, {20}, /*use_test=*/false);
    st.recall20 = rep.recall[0];
    st.ndcg20 = rep.ndcg[0];
    res.history.push_back(st);
    if (on_epoch) on_epoch(st);

    if (has_validation) {
      if (st.ndcg20 > best) {
        best = st.ndcg20;
        res.params = params;
        res.best_epoch = epoch;
        res.best_ndcg = st.ndcg20;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        break;
      }
    }
  }

  if (!has_validation || res.best_epoch == 0) res.params = std::move(params);
  return res;
}

}  // namespace hyprec
