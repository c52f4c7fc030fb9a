#pragma once

// Trainer configuration and its flat "key = value" text form.
//
//   # comment
//   mode = laser
//   steps = 3000
//   c_ref = auto        # estimated from the reference before training
//
// Unknown keys, duplicate keys and values of the wrong type are errors.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "laser/base.hpp"
#include "laser/checkpoint.hpp"
#include "laser/errors.hpp"
#include "laser/policy.hpp"
#include "laser/selfreward.hpp"

namespace laser {

enum class Mode { kGrpo, kLaser, kLaserNoSwa, kSftBaseline };

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::kGrpo: return "grpo";
    case Mode::kLaser: return "laser";
    case Mode::kLaserNoSwa: return "laser-noswa";
    case Mode::kSftBaseline: return "sft-baseline";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (Mode m : {Mode::kGrpo, Mode::kLaser, Mode::kLaserNoSwa, Mode::kSftBaseline})
    if (mode_name(m) == s) return m;
  return std::nullopt;
}

struct LaserConfig {
  Mode mode = Mode::kLaser;
  // Generation KL coefficient (k1 estimator on realized tokens).
  double beta = 0.0;
  double beta_v = 0.1;
  double alpha = 0.1;
  // Unset: estimated from the reference before training.
  std::optional<double> c_ref;
  bool use_exact_ref = false;
  // Class re-weighting of the self-rewarding loss.
  bool reweight = true;
  double tau = 0.1;
  double sigma_threshold = 0.1;
  int group_size = 8;
  int batch_problems = 32;
  double lr = 0.05;
  int steps = 3000;
  int warmup_reasoning = 300;
  int warmup_self_reward = 600;
  int max_len = 8;
  std::uint64_t run_seed = 1;

  int embed_dim = 16;
  int context_window = 8;
  int hidden_dim = 64;
  int max_seq_len = 32;
  double init_bias = -25.0;
  // Base pretraining on a partly wrong addition corpus before RL; 0 steps
  // starts RL from the fresh initialization.
  int base_steps = 1000;
  int base_batch = 64;
  double base_lr = 1.0;
  double base_accuracy = 0.3;

  int checkpoint_every = 500;
  // 0 disables the rollout log.
  int rollout_log_every = 50;
  bool log_all_rollouts = false;
  int cref_samples = 300;
  // Adds wall_ms to metrics and timestamps to the manifest.
  bool record_wall_time = false;

  Arch arch() const {
    Arch a;
    a.embed_dim = embed_dim;
    a.context_window = context_window;
    a.hidden_dim = hidden_dim;
    a.max_seq_len = max_seq_len;
    return a;
  }

  InitOptions init_options() const {
    InitOptions o;
    o.suppressed_bias = init_bias;
    return o;
  }

  BaseCorpusOptions base_options() const {
    return {base_steps, base_batch, base_lr, base_accuracy, run_seed};
  }

  // Loss weight and advantage mix after applying the mode.
  double effective_alpha() const { return mode == Mode::kGrpo ? 0.0 : alpha; }
  double effective_tau() const { return mode == Mode::kLaser ? tau : 0.0; }

  SelfRewardConfig selfreward(double resolved_c_ref) const {
    SelfRewardConfig s;
    s.beta_v = beta_v;
    s.alpha = effective_alpha();
    s.c_ref = resolved_c_ref;
    s.c_ref_eos = resolved_c_ref;
    s.use_exact_ref = use_exact_ref;
    return s;
  }

  bool operator==(const LaserConfig&) const = default;

  void validate() const {
    auto need = [](bool ok, const char* field, const char* what) {
      if (!ok) throw ConfigError(std::string(field) + ": " + what);
    };
    need(std::isfinite(beta) && beta >= 0.0, "beta", "must be >= 0");
    need(std::isfinite(beta_v) && beta_v > 0.0, "beta_v", "must be > 0");
    need(std::isfinite(alpha) && alpha >= 0.0, "alpha", "must be >= 0");
    need(std::isfinite(tau) && tau >= 0.0 && tau <= 1.0, "tau", "must be in [0, 1]");
    need(std::isfinite(sigma_threshold) && sigma_threshold >= 0.0,
         "sigma_threshold", "must be >= 0");
    need(group_size >= 2, "group_size", "must be >= 2");
    need(batch_problems >= 1, "batch_problems", "must be >= 1");
    need(std::isfinite(lr) && lr > 0.0, "lr", "must be > 0");
    need(steps >= 0, "steps", "must be >= 0");
    need(warmup_reasoning >= 0, "warmup_reasoning", "must be >= 0");
    need(warmup_self_reward >= warmup_reasoning, "warmup_self_reward",
         "must be >= warmup_reasoning");
    need(warmup_self_reward <= steps, "warmup_self_reward", "must be <= steps");
    need(max_len >= 1, "max_len", "must be >= 1");
    need(embed_dim >= 1 && context_window >= 1 && hidden_dim >= 1, "arch",
         "dimensions must be positive");
    need(max_seq_len >= 5 + max_len + 1, "max_seq_len",
         "must hold prompt, max_len tokens and the scoring token");
    need(std::isfinite(init_bias), "init_bias", "must be finite");
    need(base_steps >= 0, "base_steps", "must be >= 0");
    need(base_batch >= 1, "base_batch", "must be >= 1");
    need(std::isfinite(base_lr) && base_lr > 0.0, "base_lr", "must be > 0");
    need(std::isfinite(base_accuracy) && base_accuracy >= 0.0 && base_accuracy <= 1.0,
         "base_accuracy", "must be in [0, 1]");
    need(checkpoint_every >= 1, "checkpoint_every", "must be >= 1");
    need(rollout_log_every >= 0, "rollout_log_every", "must be >= 0");
    need(cref_samples >= 1, "cref_samples", "must be >= 1");
    if (c_ref) selfreward(*c_ref).validate();
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(LaserConfig&, std::string_view)> set;
  std::function<std::string(const LaserConfig&)> get;
};

template <typename Int>
Field int_field(Int LaserConfig::*m) {
  return {[m](LaserConfig& c, std::string_view v) {
            Int x{};
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc{} || p != v.data() + v.size())
              throw ConfigError("expected an integer, got '" + std::string(v) + "'");
            c.*m = x;
          },
          [m](const LaserConfig& c) { return std::to_string(c.*m); }};
}

inline double parse_double(std::string_view v) {
  // strtod accepts the usual spellings ("0.1", "1e-3", "-25").
  const std::string s(v);
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(x))
    throw ConfigError("expected a finite number, got '" + s + "'");
  return x;
}

inline Field double_field(double LaserConfig::*m) {
  return {[m](LaserConfig& c, std::string_view v) { c.*m = parse_double(v); },
          [m](const LaserConfig& c) { return format_double(c.*m); }};
}

inline Field bool_field(bool LaserConfig::*m) {
  return {[m](LaserConfig& c, std::string_view v) {
            if (v == "true") c.*m = true;
            else if (v == "false") c.*m = false;
            else throw ConfigError("expected true or false, got '" + std::string(v) + "'");
          },
          [m](const LaserConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline const std::map<std::string, Field, std::less<>>& config_fields() {
  static const std::map<std::string, Field, std::less<>> fields = {
      {"mode",
       {[](LaserConfig& c, std::string_view v) {
          auto m = parse_mode(v);
          if (!m)
            throw ConfigError("expected one of grpo, laser, laser-noswa, sft-baseline, got '" +
                              std::string(v) + "'");
          c.mode = *m;
        },
        [](const LaserConfig& c) { return std::string(mode_name(c.mode)); }}},
      {"c_ref",
       {[](LaserConfig& c, std::string_view v) {
          if (v == "auto") c.c_ref.reset();
          else c.c_ref = parse_double(v);
        },
        [](const LaserConfig& c) {
          return c.c_ref ? format_double(*c.c_ref) : std::string("auto");
        }}},
      {"beta", double_field(&LaserConfig::beta)},
      {"beta_v", double_field(&LaserConfig::beta_v)},
      {"alpha", double_field(&LaserConfig::alpha)},
      {"use_exact_ref", bool_field(&LaserConfig::use_exact_ref)},
      {"reweight", bool_field(&LaserConfig::reweight)},
      {"tau", double_field(&LaserConfig::tau)},
      {"sigma_threshold", double_field(&LaserConfig::sigma_threshold)},
      {"group_size", int_field(&LaserConfig::group_size)},
      {"batch_problems", int_field(&LaserConfig::batch_problems)},
      {"lr", double_field(&LaserConfig::lr)},
      {"steps", int_field(&LaserConfig::steps)},
      {"warmup_reasoning", int_field(&LaserConfig::warmup_reasoning)},
      {"warmup_self_reward", int_field(&LaserConfig::warmup_self_reward)},
      {"max_len", int_field(&LaserConfig::max_len)},
      {"run_seed", int_field(&LaserConfig::run_seed)},
      {"embed_dim", int_field(&LaserConfig::embed_dim)},
      {"context_window", int_field(&LaserConfig::context_window)},
      {"hidden_dim", int_field(&LaserConfig::hidden_dim)},
      {"max_seq_len", int_field(&LaserConfig::max_seq_len)},
      {"init_bias", double_field(&LaserConfig::init_bias)},
      {"base_steps", int_field(&LaserConfig::base_steps)},
      {"base_batch", int_field(&LaserConfig::base_batch)},
      {"base_lr", double_field(&LaserConfig::base_lr)},
      {"base_accuracy", double_field(&LaserConfig::base_accuracy)},
      {"checkpoint_every", int_field(&LaserConfig::checkpoint_every)},
      {"rollout_log_every", int_field(&LaserConfig::rollout_log_every)},
      {"log_all_rollouts", bool_field(&LaserConfig::log_all_rollouts)},
      {"cref_samples", int_field(&LaserConfig::cref_samples)},
      {"record_wall_time", bool_field(&LaserConfig::record_wall_time)},
  };
  return fields;
}

}  // namespace detail

// Applies one key/value pair; errors name the field.
inline void set_config_value(LaserConfig& cfg, std::string_view key,
                             std::string_view value) {
  const auto& fields = detail::config_fields();
  const auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

inline LaserConfig parse_config(std::string_view text) {
  LaserConfig cfg;
  std::map<std::string, int, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos)
      throw ConfigError(where + "expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (seen.count(key))
      throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    seen.emplace(std::string(key), line_no);
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline LaserConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Every key, sorted, one per line. parse_config(serialize_config(c)) == c.
inline std::string serialize_config(const LaserConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields())
    out += key + " = " + field.get(cfg) + "\n";
  return out;
}

inline std::string config_hash(const LaserConfig& cfg) {
  const std::string text = serialize_config(cfg);
  return hex64(fnv1a(text.data(), text.size()));
}

}  // namespace laser
