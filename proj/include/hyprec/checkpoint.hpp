#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hyprec/error.hpp"
#include "hyprec/model.hpp"
#include "hyprec/trainer.hpp"

namespace hyprec {

// Checkpoint layout (little-endian):
//   bytes 0..7   magic "HYPRECK1"
//   u32          format version (1)
//   u64          config text length, followed by that many bytes
//                (the effective key=value config, parseable as a config file)
//   i64 x5       n_users, n_items, n_entities, n_relations, dim
//   f64 blocks   user, entity, relation tables (row-major), then beta logits
// Raw IEEE-754 bytes throughout, so save/load round-trips bit-exactly.

inline constexpr char kCheckpointMagic[8] = {'H', 'Y', 'P', 'R', 'E', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainingConfig config;
  ModelParameters params;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_pod(std::istream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

inline void write_doubles(std::ostream& out, const double* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::istream& in, double* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params,
                            const TrainingConfig& config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, kCheckpointVersion);

  const std::string cfg = serialize_config(config);
  detail::write_pod(out, static_cast<std::uint64_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  const ModelShape s = params.shape();
  for (std::int64_t dim : {static_cast<std::int64_t>(s.n_users), static_cast<std::int64_t>(s.n_items),
                           static_cast<std::int64_t>(s.n_entities),
                           static_cast<std::int64_t>(s.n_relations), static_cast<std::int64_t>(s.dim)}) {
    detail::write_pod(out, dim);
  }
  detail::write_doubles(out, params.user.data(), static_cast<std::size_t>(params.user.size()));
  detail::write_doubles(out, params.entity.data(), static_cast<std::size_t>(params.entity.size()));
  detail::write_doubles(out, params.relation.data(),
                        static_cast<std::size_t>(params.relation.size()));
  detail::write_doubles(out, params.beta_logits.data(),
                        static_cast<std::size_t>(params.beta_logits.size()));
  if (!out) throw Error("short write while saving checkpoint: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());

  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ParseError(path.string() + ": not a checkpoint file");
  }
  std::uint32_t version = 0;
  detail::read_pod(in, version);
  if (!in || version != kCheckpointVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " +
                     std::to_string(version));
  }

  std::uint64_t cfg_len = 0;
  detail::read_pod(in, cfg_len);
  if (!in || cfg_len > (1u << 20)) throw ParseError(path.string() + ": corrupt config block");
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) throw ParseError(path.string() + ": truncated config block");

  Checkpoint ckpt;
  {
    std::istringstream cfg_in(cfg_text);
    ckpt.config = parse_config(cfg_in, path.string() + " (embedded config)");
  }

  std::int64_t n_users = 0, n_items = 0, n_entities = 0, n_relations = 0, dim = 0;
  detail::read_pod(in, n_users);
  detail::read_pod(in, n_items);
  detail::read_pod(in, n_entities);
  detail::read_pod(in, n_relations);
  detail::read_pod(in, dim);
  if (!in || n_users < 0 || n_items < 0 || n_entities < n_items || n_relations < 0 || dim <= 0) {
    throw ParseError(path.string() + ": corrupt table header");
  }

  ckpt.params.n_items = n_items;
  ckpt.params.user.resize(n_users, dim);
  ckpt.params.entity.resize(n_entities, dim);
  ckpt.params.relation.resize(n_relations, dim);
  ckpt.params.beta_logits.resize(n_items);
  detail::read_doubles(in, ckpt.params.user.data(),
                       static_cast<std::size_t>(ckpt.params.user.size()));
  detail::read_doubles(in, ckpt.params.entity.data(),
                       static_cast<std::size_t>(ckpt.params.entity.size()));
  detail::read_doubles(in, ckpt.params.relation.data(),
                       static_cast<std::size_t>(ckpt.params.relation.size()));
  detail::read_doubles(in, ckpt.params.beta_logits.data(),
                       static_cast<std::size_t>(ckpt.params.beta_logits.size()));
  if (!in) throw ParseError(path.string() + ": truncated parameter tables");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(path.string() + ": trailing bytes after parameter tables");
  }
  return ckpt;
}

}  // namespace hyprec
