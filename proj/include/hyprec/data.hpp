#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyprec/error.hpp"
#include "hyprec/model.hpp"
#include "hyprec/rng.hpp"

namespace hyprec {

// Contiguous-id mapping built in first-appearance order. Unordered lookups
// are only ever used for membership; all iteration happens over the dense
// side, so results depend on file content alone.
struct IdMap {
  std::vector<std::int64_t> to_raw;
  std::unordered_map<std::int64_t, int> to_dense;

  int intern(std::int64_t raw) {
    auto it = to_dense.find(raw);
    if (it != to_dense.end()) return it->second;
    const int dense = static_cast<int>(to_raw.size());
    to_raw.push_back(raw);
    to_dense.emplace(raw, dense);
    return dense;
  }

  int at(std::int64_t raw) const {
    auto it = to_dense.find(raw);
    if (it == to_dense.end()) throw LookupError("unknown raw id " + std::to_string(raw));
    return it->second;
  }

  bool contains(std::int64_t raw) const { return to_dense.count(raw) != 0; }
  int size() const { return static_cast<int>(to_raw.size()); }

  void write_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write id map: " + path.string());
    for (std::size_t dense = 0; dense < to_raw.size(); ++dense) {
      out << to_raw[dense] << '\t' << dense << '\n';
    }
  }
};

struct RawInteractions {
  std::vector<std::pair<int, int>> pairs;  // (dense user, dense item), deduplicated
  IdMap users;
  IdMap items;

  int n_users() const { return users.size(); }
  int n_items() const { return items.size(); }
};

namespace detail {

// Parses up to `n` nonnegative integer fields separated by single tabs.
// Returns false on any deviation.
inline bool parse_fields(const std::string& line, std::int64_t* out, int n) {
  std::size_t pos = 0;
  for (int f = 0; f < n; ++f) {
    if (f > 0) {
      if (pos >= line.size() || line[pos] != '\t') return false;
      ++pos;
    }
    if (pos >= line.size() || !std::isdigit(static_cast<unsigned char>(line[pos]))) return false;
    std::int64_t v = 0;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) {
      v = v * 10 + (line[pos] - '0');
      if (v < 0) return false;
      ++pos;
    }
    out[f] = v;
  }
  return pos == line.size();
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace detail

// Reads `user<TAB>item` lines. Duplicate pairs collapse to one; ids are
// densified in first-appearance order.
inline RawInteractions load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interactions file: " + path.string());

  RawInteractions data;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(std::move(line));
    if (line.empty()) continue;
    std::int64_t f[2];
    if (!detail::parse_fields(line, f, 2)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected `user<TAB>item` with nonnegative integers");
    }
    const int u = data.users.intern(f[0]);
    const int v = data.items.intern(f[1]);
    const std::uint64_t key =
        (static_cast<std::uint64_t>(u) << 32) | static_cast<std::uint32_t>(v);
    if (seen.insert(key).second) data.pairs.emplace_back(u, v);
  }
  if (data.pairs.empty()) throw ParseError(path.string() + ": no interactions found");
  return data;
}

// Iteratively drops users and items with fewer than k interactions, then
// re-densifies the surviving ids (raw ids are preserved through the maps).
inline RawInteractions kcore_filter(const RawInteractions& data, int k) {
  if (k <= 1) return data;
  std::vector<char> user_alive(data.n_users(), 1), item_alive(data.n_items(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<int> u_deg(data.n_users(), 0), i_deg(data.n_items(), 0);
    for (const auto& [u, v] : data.pairs) {
      if (user_alive[u] && item_alive[v]) {
        ++u_deg[u];
        ++i_deg[v];
      }
    }
    for (int u = 0; u < data.n_users(); ++u) {
      if (user_alive[u] && u_deg[u] < k) {
        user_alive[u] = 0;
        changed = true;
      }
    }
    for (int v = 0; v < data.n_items(); ++v) {
      if (item_alive[v] && i_deg[v] < k) {
        item_alive[v] = 0;
        changed = true;
      }
    }
  }

  RawInteractions out;
  for (const auto& [u, v] : data.pairs) {
    if (!user_alive[u] || !item_alive[v]) continue;
    out.pairs.emplace_back(out.users.intern(data.users.to_raw[u]),
                           out.items.intern(data.items.to_raw[v]));
  }
  if (out.pairs.empty()) throw Error("k-core filter removed every interaction");
  return out;
}

// Triple store plus the head-indexed adjacency restricted to item heads.
// Entities share the item id space: dense entity ids [0, n_items) are the
// items, additional entities follow in first-appearance order.
struct KnowledgeGraph {
  int n_items = 0;
  int n_relations = 0;
  std::vector<std::array<int, 3>> triples;  // dense (head, relation, tail)
  NeighborSet adjacency;
  IdMap entities;
  IdMap relations;

  int n_entities() const { return entities.size(); }

  const std::vector<std::pair<int, int>>& neighbors(int item) const {
    return adjacency.of(item);
  }

  static KnowledgeGraph empty(int n_items) {
    KnowledgeGraph kg;
    kg.n_items = n_items;
    kg.adjacency = NeighborSet::empty(n_items);
    return kg;
  }
};

// Reads `head<TAB>relation<TAB>tail` lines. Raw entity ids that already name
// interaction items keep the item's dense id; N_v is built for item heads
// only, deduplicated and canonically sorted.
inline KnowledgeGraph load_triples(const std::filesystem::path& path,
                                   const RawInteractions& interactions) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open triples file: " + path.string());

  KnowledgeGraph kg;
  kg.n_items = interactions.n_items();
  for (std::int64_t dense = 0; dense < kg.n_items; ++dense) {
    kg.entities.intern(interactions.items.to_raw[static_cast<std::size_t>(dense)]);
  }

  std::set<std::array<int, 3>> unique;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::strip_cr(std::move(line));
    if (line.empty()) continue;
    std::int64_t f[3];
    if (!detail::parse_fields(line, f, 3)) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected `head<TAB>relation<TAB>tail` with nonnegative integers");
    }
    const int h = kg.entities.intern(f[0]);
    const int r = kg.relations.intern(f[1]);
    const int t = kg.entities.intern(f[2]);
    if (unique.insert({h, r, t}).second) kg.triples.push_back({h, r, t});
  }
  kg.n_relations = kg.relations.size();

  kg.adjacency = NeighborSet::empty(kg.n_items);
  for (const auto& [h, r, t] : kg.triples) {
    if (h < kg.n_items) kg.adjacency.by_item[static_cast<std::size_t>(h)].emplace_back(r, t);
  }
  for (auto& nv : kg.adjacency.by_item) {
    std::sort(nv.begin(), nv.end());
    nv.erase(std::unique(nv.begin(), nv.end()), nv.end());
  }
  std::sort(kg.triples.begin(), kg.triples.end());
  return kg;
}

struct InteractionDataset {
  int n_users = 0;
  int n_items = 0;
  std::vector<std::vector<int>> train;       // sorted item ids per user
  std::vector<std::vector<int>> validation;  // sorted
  std::vector<std::vector<int>> test;        // sorted

  bool in_train(int u, int v) const {
    const auto& s = train[static_cast<std::size_t>(u)];
    return std::binary_search(s.begin(), s.end(), v);
  }

  std::size_t train_pair_count() const {
    std::size_t n = 0;
    for (const auto& s : train) n += s.size();
    return n;
  }
};

// Per-user random split: 80% of interactions form the train pool and the
// rest go to test; 10% of the pool (rounded) moves to validation. Users with
// fewer than three interactions put everything in train.
inline InteractionDataset split(const RawInteractions& data, std::uint64_t seed,
                                double train_frac = 0.8, double val_frac = 0.1) {
  InteractionDataset out;
  out.n_users = data.n_users();
  out.n_items = data.n_items();
  out.train.resize(data.n_users());
  out.validation.resize(data.n_users());
  out.test.resize(data.n_users());

  std::vector<std::vector<int>> per_user(data.n_users());
  for (const auto& [u, v] : data.pairs) per_user[u].push_back(v);

  Rng rng(derive_seed(seed, 1));
  for (int u = 0; u < data.n_users(); ++u) {
    auto& items = per_user[u];
    std::sort(items.begin(), items.end());  // canonical base order before shuffling
    rng.shuffle(items);

    const auto n = static_cast<std::int64_t>(items.size());
    std::int64_t pool = n, val = 0;
    if (n >= 3) {
      pool = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(train_frac * n)));
      val = std::lround(val_frac * static_cast<double>(pool));
      val = std::min(val, pool - 1);  // at least one training item
    }
    auto& tr = out.train[u];
    auto& va = out.validation[u];
    auto& te = out.test[u];
    tr.assign(items.begin(), items.begin() + (pool - val));
    va.assign(items.begin() + (pool - val), items.begin() + pool);
    te.assign(items.begin() + pool, items.end());
    std::sort(tr.begin(), tr.end());
    std::sort(va.begin(), va.end());
    std::sort(te.begin(), te.end());
  }
  return out;
}

}  // namespace hyprec
