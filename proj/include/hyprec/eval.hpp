#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "hyprec/data.hpp"
#include "hyprec/model.hpp"
#include "hyprec/space.hpp"

namespace hyprec {

// Top-k item ids for a user by ascending geodesic distance, excluding the
// given sorted set (normally the user's training items). Distance ties break
// toward the smaller item id.
inline std::vector<int> rank_items(const ModelParameters& p, const Space& space, int user,
                                   const std::vector<int>& exclude, int k) {
  const Vec u = p.user_at(user);
  std::vector<std::pair<double, int>> scored;
  scored.reserve(static_cast<std::size_t>(p.n_items));
  for (int v = 0; v < p.n_items; ++v) {
    if (std::binary_search(exclude.begin(), exclude.end(), v)) continue;
    scored.emplace_back(space.distance(u, p.item_at(v)), v);
  }
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                    scored.end());
  std::vector<int> top;
  top.reserve(take);
  for (std::size_t i = 0; i < take; ++i) top.push_back(scored[i].second);
  return top;
}

// |topk ∩ relevant| / |relevant|. `relevant` must be sorted.
inline double recall_at_k(const std::vector<int>& topk, const std::vector<int>& relevant) {
  if (relevant.empty()) return 0.0;
  std::size_t hits = 0;
  for (int v : topk) {
    if (std::binary_search(relevant.begin(), relevant.end(), v)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// |topk ∩ relevant| / min(k, |relevant|): the attainable fraction of the
// list that is relevant. Used for overfit diagnostics where |relevant| can
// exceed k.
inline double hit_fraction_at_k(const std::vector<int>& topk, const std::vector<int>& relevant,
                                int k) {
  if (relevant.empty() || k <= 0) return 0.0;
  std::size_t hits = 0;
  std::size_t rank = 0;
  for (int v : topk) {
    if (rank++ == static_cast<std::size_t>(k)) break;
    if (std::binary_search(relevant.begin(), relevant.end(), v)) ++hits;
  }
  const auto denom = std::min<std::size_t>(static_cast<std::size_t>(k), relevant.size());
  return static_cast<double>(hits) / static_cast<double>(denom);
}

// Binary-relevance NDCG with 1/log2(i+1) discounts, ideal DCG truncated at
// min(k, |relevant|). `relevant` must be sorted.
inline double ndcg_at_k(const std::vector<int>& topk, const std::vector<int>& relevant, int k) {
  if (relevant.empty() || k <= 0) return 0.0;
  double dcg = 0.0;
  std::size_t rank = 0;
  for (int v : topk) {
    if (rank == static_cast<std::size_t>(k)) break;
    ++rank;
    if (std::binary_search(relevant.begin(), relevant.end(), v)) {
      dcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  const auto ideal = std::min<std::size_t>(static_cast<std::size_t>(k), relevant.size());
  double idcg = 0.0;
  for (std::size_t i = 1; i <= ideal; ++i) {
    idcg += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  }
  return dcg / idcg;
}

struct MetricsReport {
  std::vector<int> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;

  std::string to_tsv() const {
    std::string out;
    char buf[96];
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\n", ks[i], recall[i], ndcg[i]);
      out += buf;
    }
    return out;
  }
};

// Macro-averaged Recall@k / NDCG@k over users with a nonempty target set.
// Training items are always excluded from candidate ranking; validation
// items are additionally excluded when scoring against test targets.
inline MetricsReport evaluate(const ModelParameters& p, const Space& space,
                              const InteractionDataset& data, const std::vector<int>& ks,
                              bool use_test = true, bool exclude_validation = true) {
  MetricsReport report;
  report.ks = ks;
  report.recall.assign(ks.size(), 0.0);
  report.ndcg.assign(ks.size(), 0.0);
  if (ks.empty()) return report;

  const int max_k = *std::max_element(ks.begin(), ks.end());
  std::size_t counted = 0;
  for (int u = 0; u < data.n_users; ++u) {
    const auto& target = use_test ? data.test[static_cast<std::size_t>(u)]
                                  : data.validation[static_cast<std::size_t>(u)];
    if (target.empty()) continue;
    ++counted;

    std::vector<int> exclude = data.train[static_cast<std::size_t>(u)];
    if (use_test && exclude_validation) {
      const auto& val = data.validation[static_cast<std::size_t>(u)];
      exclude.insert(exclude.end(), val.begin(), val.end());
      std::sort(exclude.begin(), exclude.end());
    }
    const std::vector<int> top = rank_items(p, space, u, exclude, max_k);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      std::vector<int> head(top.begin(),
                            top.begin() + std::min<std::ptrdiff_t>(ks[i], static_cast<std::ptrdiff_t>(top.size())));
      report.recall[i] += recall_at_k(head, target);
      report.ndcg[i] += ndcg_at_k(top, target, ks[i]);
    }
  }
  if (counted > 0) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      report.recall[i] /= static_cast<double>(counted);
      report.ndcg[i] /= static_cast<double>(counted);
    }
  }
  return report;
}

}  // namespace hyprec
