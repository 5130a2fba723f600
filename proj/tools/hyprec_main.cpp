// hyprec: knowledge-graph-regularized hyperbolic recommendation, CLI front end.
//
// Subcommands: train, evaluate, recommend, export-embeddings.
// Exit codes: 0 success, 2 bad config/data/usage, 3 training divergence.

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hyprec/checkpoint.hpp"
#include "hyprec/data.hpp"
#include "hyprec/error.hpp"
#include "hyprec/eval.hpp"
#include "hyprec/model.hpp"
#include "hyprec/trainer.hpp"

namespace {

constexpr int kExitBadInput = 2;
constexpr int kExitDiverged = 3;

struct Override {
  std::string key;
  std::string value;
};

// Deferred key=value overrides so precedence is CLI flag > config file >
// built-in default regardless of flag order.
void add_override(std::vector<Override>& ovr, const std::string& key, const std::string& value) {
  ovr.push_back({key, value});
}

hyprec::TrainingConfig resolve_config(const std::string& config_path,
                                      const std::vector<Override>& overrides) {
  hyprec::TrainingConfig cfg;
  if (!config_path.empty()) cfg = hyprec::load_config(config_path);
  for (const Override& o : overrides) hyprec::set_config_key(cfg, o.key, o.value);
  cfg = cfg.finalized();
  cfg.validate();
  return cfg;
}

void print_effective_config(const hyprec::TrainingConfig& cfg) {
  std::cerr << "effective config:\n";
  std::istringstream lines(hyprec::serialize_config(cfg));
  std::string line;
  while (std::getline(lines, line)) std::cerr << "  " << line << '\n';
}

hyprec::RawInteractions load_interactions_checked(const std::string& path, int kcore) {
  hyprec::RawInteractions raw = hyprec::load_interactions(path);
  if (kcore > 1) raw = hyprec::kcore_filter(raw, kcore);
  return raw;
}

void check_checkpoint_shape(const hyprec::Checkpoint& ckpt, const hyprec::RawInteractions& raw) {
  const auto shape = ckpt.params.shape();
  if (shape.n_users != raw.n_users() || shape.n_items != raw.n_items()) {
    throw hyprec::ConfigError(
        "checkpoint shape (" + std::to_string(shape.n_users) + " users, " +
        std::to_string(shape.n_items) + " items) does not match the interaction data (" +
        std::to_string(raw.n_users()) + " users, " + std::to_string(raw.n_items()) + " items)");
  }
}

std::vector<int> parse_k_list(const std::string& spec) {
  std::vector<int> ks;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(tok, &used);
    } catch (const std::exception&) {
      throw hyprec::ConfigError("bad K list entry: " + tok);
    }
    if (used != tok.size() || k < 1) throw hyprec::ConfigError("bad K list entry: " + tok);
    ks.push_back(k);
  }
  if (ks.empty()) throw hyprec::ConfigError("K list is empty");
  return ks;
}

void write_text(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw hyprec::Error("cannot write output file: " + out_path);
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<Override>& overrides,
              const std::string& interactions_path, const std::string& triples_path,
              const std::string& out_path, std::string history_path, int kcore) {
  const hyprec::TrainingConfig cfg = resolve_config(config_path, overrides);
  print_effective_config(cfg);

  const hyprec::RawInteractions raw = load_interactions_checked(interactions_path, kcore);
  const hyprec::InteractionDataset data = hyprec::split(raw, cfg.seed);
  hyprec::KnowledgeGraph kg = triples_path.empty()
                                  ? hyprec::KnowledgeGraph::empty(raw.n_items())
                                  : hyprec::load_triples(triples_path, raw);

  raw.users.write_tsv(interactions_path + ".users.idmap");
  raw.items.write_tsv(interactions_path + ".items.idmap");
  if (!triples_path.empty()) {
    kg.entities.write_tsv(triples_path + ".entities.idmap");
    kg.relations.write_tsv(triples_path + ".relations.idmap");
  }

  if (history_path.empty()) history_path = out_path + ".history";
  std::ofstream history(history_path, std::ios::trunc);
  if (!history) throw hyprec::Error("cannot write history log: " + history_path);

  const hyprec::TrainResult res =
      hyprec::train(data, kg, cfg, [&](const hyprec::EpochStats& st) {
        const std::string line = hyprec::format_history_line(st);
        history << line;
        history.flush();
        std::cerr << "epoch " << line;
      });

  hyprec::save_checkpoint(out_path, res.params, cfg);
  std::cerr << "wrote checkpoint " << out_path << " (best epoch "
            << (res.best_epoch > 0 ? std::to_string(res.best_epoch) : std::string("final"))
            << ")\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& interactions_path,
                 const std::string& k_spec, std::optional<std::uint64_t> seed_override,
                 bool include_validation, const std::string& out_path, int kcore) {
  hyprec::Checkpoint ckpt = hyprec::load_checkpoint(checkpoint_path);
  if (seed_override) ckpt.config.seed = *seed_override;
  print_effective_config(ckpt.config);

  const hyprec::RawInteractions raw = load_interactions_checked(interactions_path, kcore);
  check_checkpoint_shape(ckpt, raw);
  const hyprec::InteractionDataset data = hyprec::split(raw, ckpt.config.seed);

  const hyprec::MetricsReport report =
      hyprec::evaluate(ckpt.params, ckpt.config.make_space(), data, parse_k_list(k_spec),
                       /*use_test=*/true, /*exclude_validation=*/!include_validation);
  write_text(out_path, report.to_tsv());
  return 0;
}

int cmd_recommend(const std::string& checkpoint_path, const std::string& interactions_path,
                  std::int64_t raw_user, int k, const std::string& out_path, int kcore) {
  const hyprec::Checkpoint ckpt = hyprec::load_checkpoint(checkpoint_path);
  const hyprec::RawInteractions raw = load_interactions_checked(interactions_path, kcore);
  check_checkpoint_shape(ckpt, raw);
  if (!raw.users.contains(raw_user)) {
    throw hyprec::LookupError("unknown user id " + std::to_string(raw_user));
  }
  if (k < 1) throw hyprec::ConfigError("K must be >= 1");

  const int user = raw.users.at(raw_user);
  std::vector<int> observed;
  for (const auto& [u, v] : raw.pairs) {
    if (u == user) observed.push_back(v);
  }
  std::sort(observed.begin(), observed.end());

  const std::vector<int> top =
      hyprec::rank_items(ckpt.params, ckpt.config.make_space(), user, observed, k);
  std::string text;
  for (int v : top) {
    text += std::to_string(raw.items.to_raw[static_cast<std::size_t>(v)]);
    text += '\n';
  }
  write_text(out_path, text);
  return 0;
}

int cmd_export_embeddings(const std::string& checkpoint_path,
                          const std::string& interactions_path, const std::string& triples_path,
                          std::int64_t raw_entity, int hops, const std::string& out_path,
                          int kcore) {
  if (hops < 0 || hops > 2) throw hyprec::ConfigError("hops must be 0, 1, or 2");
  const hyprec::Checkpoint ckpt = hyprec::load_checkpoint(checkpoint_path);
  const hyprec::RawInteractions raw = load_interactions_checked(interactions_path, kcore);
  check_checkpoint_shape(ckpt, raw);
  const hyprec::KnowledgeGraph kg = hyprec::load_triples(triples_path, raw);
  if (kg.n_entities() > ckpt.params.entity.rows()) {
    throw hyprec::ConfigError("checkpoint entity table is smaller than the knowledge graph");
  }
  if (!kg.entities.contains(raw_entity)) {
    throw hyprec::LookupError("unknown entity id " + std::to_string(raw_entity));
  }

  // Undirected entity adjacency; hop = unweighted BFS depth from the root.
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(kg.n_entities()));
  for (const auto& [h, r, t] : kg.triples) {
    adj[static_cast<std::size_t>(h)].push_back(t);
    adj[static_cast<std::size_t>(t)].push_back(h);
  }

  const int root = kg.entities.at(raw_entity);
  std::vector<int> hop_of(static_cast<std::size_t>(kg.n_entities()), -1);
  hop_of[static_cast<std::size_t>(root)] = 0;
  std::deque<int> frontier{root};
  while (!frontier.empty()) {
    const int e = frontier.front();
    frontier.pop_front();
    if (hop_of[static_cast<std::size_t>(e)] >= hops) continue;
    for (int nb : adj[static_cast<std::size_t>(e)]) {
      if (hop_of[static_cast<std::size_t>(nb)] < 0) {
        hop_of[static_cast<std::size_t>(nb)] = hop_of[static_cast<std::size_t>(e)] + 1;
        frontier.push_back(nb);
      }
    }
  }

  std::vector<std::pair<int, int>> rows;  // (hop, dense id), BFS-layer order
  for (int e = 0; e < kg.n_entities(); ++e) {
    if (hop_of[static_cast<std::size_t>(e)] >= 0) rows.emplace_back(hop_of[static_cast<std::size_t>(e)], e);
  }
  std::sort(rows.begin(), rows.end());

  const Eigen::Index d = ckpt.params.entity.cols();
  std::string text = "entity_id,hop";
  for (Eigen::Index j = 0; j < d; ++j) text += ",x" + std::to_string(j + 1);
  text += '\n';
  char buf[64];
  for (const auto& [hop, e] : rows) {
    text += std::to_string(kg.entities.to_raw[static_cast<std::size_t>(e)]);
    text += ',' + std::to_string(hop);
    for (Eigen::Index j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.17g", ckpt.params.entity(e, j));
      text += buf;
    }
    text += '\n';
  }
  write_text(out_path, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyprec: hyperbolic knowledge-graph-regularized recommendation"};
  app.require_subcommand(1);

  std::string config_path, interactions_path, triples_path, checkpoint_path;
  std::string out_path, history_path, k_spec = "20";
  std::vector<Override> overrides;
  std::optional<std::uint64_t> seed_override;
  std::int64_t raw_user = 0, raw_entity = 0;
  int k = 10, hops = 2, kcore = 0;
  bool include_validation = false;

  auto add_override_opt = [&](CLI::App* cmd, const std::string& flag, const std::string& key,
                              const std::string& desc) {
    cmd->add_option_function<std::string>(
        flag, [&overrides, key](const std::string& v) { add_override(overrides, key, v); }, desc);
  };

  CLI::App* train = app.add_subcommand("train", "fit a model and write checkpoint + history");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--interactions", interactions_path, "user<TAB>item interaction file")
      ->required();
  train->add_option("--triples", triples_path, "head<TAB>relation<TAB>tail triple file");
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--history", history_path, "history log path (default: <out>.history)");
  train->add_option("--kcore", kcore, "drop users/items with fewer than N interactions");
  add_override_opt(train, "--seed", "seed", "random seed override");
  add_override_opt(train, "--epochs", "epochs", "epoch count override");
  add_override_opt(train, "--mode", "mode", "regularization mode: adaptive|fixed");
  add_override_opt(train, "--beta", "fixed_beta", "fixed-mode KG weight override");
  add_override_opt(train, "--space", "space", "geometry: hyperbolic|euclidean");
  add_override_opt(train, "--aggregation", "aggregation", "neighbor pooling: attention|average");
  add_override_opt(train, "--dim", "dim", "embedding dimension override");
  add_override_opt(train, "--batch-size", "batch_size", "batch size override");
  add_override_opt(train, "--inner-lr", "inner_lr", "inner learning rate override");
  add_override_opt(train, "--outer-lr", "outer_lr", "outer learning rate override");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  eval_cmd->add_option("--interactions", interactions_path, "interaction file used in training")
      ->required();
  eval_cmd->add_option("--k", k_spec, "comma-separated cutoff list (default 20)");
  eval_cmd->add_option("--seed", seed_override, "split seed override (default: checkpoint's)");
  eval_cmd->add_option("--out", out_path, "write TSV here instead of stdout");
  eval_cmd->add_option("--kcore", kcore, "apply the same k-core filter used in training");
  eval_cmd->add_flag("--include-validation-candidates", include_validation,
                     "rank validation items as candidates instead of excluding them");

  CLI::App* rec = app.add_subcommand("recommend", "top-K unseen items for one user");
  rec->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  rec->add_option("--interactions", interactions_path, "interaction file used in training")
      ->required();
  rec->add_option("--user", raw_user, "original user id")->required();
  rec->add_option("--k", k, "number of recommendations (default 10)");
  rec->add_option("--out", out_path, "write ids here instead of stdout");
  rec->add_option("--kcore", kcore, "apply the same k-core filter used in training");

  CLI::App* exp = app.add_subcommand("export-embeddings",
                                     "CSV of an entity's <=2-hop neighborhood embeddings");
  exp->add_option("--checkpoint", checkpoint_path, "trained checkpoint")->required();
  exp->add_option("--interactions", interactions_path, "interaction file used in training")
      ->required();
  exp->add_option("--triples", triples_path, "triple file used in training")->required();
  exp->add_option("--entity", raw_entity, "original entity id of the BFS root")->required();
  exp->add_option("--hops", hops, "neighborhood radius, 0-2 (default 2)");
  exp->add_option("--out", out_path, "write CSV here instead of stdout");
  exp->add_option("--kcore", kcore, "apply the same k-core filter used in training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitBadInput;
  }

  try {
    if (train->parsed()) {
      return cmd_train(config_path, overrides, interactions_path, triples_path, out_path,
                       history_path, kcore);
    }
    if (eval_cmd->parsed()) {
      return cmd_evaluate(checkpoint_path, interactions_path, k_spec, seed_override,
                          include_validation, out_path, kcore);
    }
    if (rec->parsed()) {
      return cmd_recommend(checkpoint_path, interactions_path, raw_user, k, out_path, kcore);
    }
    if (exp->parsed()) {
      return cmd_export_embeddings(checkpoint_path, interactions_path, triples_path, raw_entity,
                                   hops, out_path, kcore);
    }
  } catch (const hyprec::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const hyprec::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
