#pragma once

// Checkpoint file: one line of JSON header terminated by '\n', followed by
// the parameters as little-endian IEEE-754 doubles.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laser/errors.hpp"
#include "laser/policy.hpp"

namespace laser {

inline constexpr const char* kCheckpointFormat = "laser-checkpoint-v1";

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CheckpointMeta {
  std::uint64_t run_seed = 0;
  double c_ref = 0.0;
  double beta_v = 0.1;
  std::string config_hash;
  // Canonical config text of the producing run (empty if none); rebuilds the
  // frozen reference.
  std::string config;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  PolicyParams params;
  CheckpointMeta meta;
};

inline nlohmann::json arch_to_json(const Arch& a) {
  return {{"vocab_size", a.vocab_size},
          {"embed_dim", a.embed_dim},
          {"context_window", a.context_window},
          {"hidden_dim", a.hidden_dim},
          {"max_seq_len", a.max_seq_len}};
}

inline Arch arch_from_json(const nlohmann::json& j) {
  Arch a;
  a.vocab_size = j.at("vocab_size").get<int>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.context_window = j.at("context_window").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.max_seq_len = j.at("max_seq_len").get<int>();
  return a;
}

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const auto& p = ck.params;
  nlohmann::json header = {
      {"format", kCheckpointFormat},
      {"arch", arch_to_json(p.arch)},
      {"version", p.version},
      {"run_seed", ck.meta.run_seed},
      {"c_ref", ck.meta.c_ref},
      {"beta_v", ck.meta.beta_v},
      {"config_hash", ck.meta.config_hash},
      {"config", ck.meta.config},
      {"n_params", p.theta.size()},
      {"param_checksum", hex64(checksum(p))},
  };
  std::string out = header.dump();
  out += '\n';
  out.reserve(out.size() + 8 * p.theta.size());
  for (double v : p.theta) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw CheckpointError("missing checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (header.at("format").get<std::string>() != kCheckpointFormat)
      throw CheckpointError("unknown checkpoint format");
    ck.params.arch = arch_from_json(header.at("arch"));
    ck.params.version = header.at("version").get<std::uint64_t>();
    ck.meta.run_seed = header.at("run_seed").get<std::uint64_t>();
    ck.meta.c_ref = header.at("c_ref").get<double>();
    ck.meta.beta_v = header.at("beta_v").get<double>();
    ck.meta.config_hash = header.at("config_hash").get<std::string>();
    ck.meta.config = header.value("config", std::string());
    const auto n = header.at("n_params").get<std::size_t>();
    if (n != ck.params.arch.param_count())
      throw CheckpointError("parameter count does not match architecture");
    if (bytes.size() - nl - 1 != 8 * n)
      throw CheckpointError("parameter block has wrong length");
    ck.params.theta.resize(n);
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(raw[8 * i + static_cast<std::size_t>(b)]) << (8 * b);
      ck.params.theta[i] = std::bit_cast<double>(bits);
    }
    if (hex64(checksum(ck.params)) != header.at("param_checksum").get<std::string>())
      throw CheckpointError("parameter checksum mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_checkpoint(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw CheckpointError("cannot open checkpoint " + path.string());
  return parse_checkpoint(read_file(path));
}

}  // namespace laser
