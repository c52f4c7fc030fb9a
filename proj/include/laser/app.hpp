#pragma once

// Command implementations behind the laser CLI. Each returns a process exit
// status: 0 ok, 1 runtime failure, 2 usage or config error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "laser/checkpoint.hpp"
#include "laser/config.hpp"
#include "laser/diagnostics.hpp"
#include "laser/errors.hpp"
#include "laser/evaluate.hpp"
#include "laser/gradcheck.hpp"
#include "laser/records.hpp"
#include "laser/trainer.hpp"

namespace laser {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

namespace fs = std::filesystem;

// Exclusive ownership of an output directory for one command.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw Error(dir.string() + " is in use by another command (remove " +
                  path_.string() + " if stale)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

// %.17g keeps doubles bitwise through text.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<fs::path> resume;
  int threads = 1;
};

inline nlohmann::json make_manifest(const LaserConfig& cfg, const TrainState& st,
                                    const fs::path& out, const std::string& status,
                                    std::optional<int> failed_step,
                                    const std::string& error) {
  nlohmann::json ck = nlohmann::json::array();
  if (fs::exists(out / "checkpoints")) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(out / "checkpoints"))
      if (e.path().extension() == ".ckpt") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) ck.push_back("checkpoints/" + n);
  }
  nlohmann::json m = {
      {"status", status},
      {"config", serialize_config(cfg)},
      {"config_hash", config_hash(cfg)},
      {"run_seed", cfg.run_seed},
      {"mode", std::string(mode_name(cfg.mode))},
      {"c_ref", st.cref.mean},
      {"c_ref_std", st.cref.std},
      {"c_ref_samples", st.cref.n},
      {"steps_completed", st.step},
      {"artifacts",
       {{"metrics", "metrics.csv"},
        {"checkpoints", ck},
        {"rollouts", fs::exists(out / "rollouts.jsonl") ? nlohmann::json("rollouts.jsonl")
                                                        : nlohmann::json(nullptr)}}},
  };
  if (failed_step) {
    m["failed_step"] = *failed_step;
    m["error"] = error;
  }
  return m;
}

inline int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  LaserConfig cfg;
  try {
    if (!fs::exists(args.config))
      throw ConfigError("config file not found: " + args.config.string());
    cfg = load_config(args.config);
    if (args.seed) cfg.run_seed = *args.seed;
    if (args.mode) {
      const auto m = parse_mode(*args.mode);
      if (!m) throw ConfigError("unknown mode '" + *args.mode + "'");
      cfg.mode = *m;
    }
    cfg.validate();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    DirLock lock(args.out);
    RunOptions ro;
    ro.out_dir = args.out;
    ro.resume = args.resume;
    ro.threads = args.threads;
    const auto started = std::chrono::system_clock::now();
    RunResult res;
    int code = kExitOk;
    std::string status = "completed", error;
    std::optional<int> failed;
    TrainState last;
    ro.on_step = [&](const StepResult& r, const TrainState& st) {
      if (r.row.step % 100 == 0 || r.row.step == cfg.steps)
        out << "step " << r.row.step << " mean_rv " << r.row.mean_rv << " sr_f1 "
            << r.row.sr_f1 << "\n";
      last.step = st.step;
      last.cref = st.cref;
    };
    try {
      res = run(cfg, ro);
      last = res.state;
    } catch (const StepFailure& e) {
      status = "failed";
      failed = e.step;
      error = e.what();
      code = kExitRuntime;
      err << "run failed at step " << e.step << ": " << e.what() << "\n";
    }
    auto manifest = make_manifest(cfg, last, args.out, status, failed, error);
    if (cfg.record_wall_time) {
      const auto ended = std::chrono::system_clock::now();
      auto secs = [](auto t) {
        return std::chrono::duration_cast<std::chrono::seconds>(t.time_since_epoch()).count();
      };
      manifest["started_at_unix"] = secs(started);
      manifest["finished_at_unix"] = secs(ended);
    }
    write_text(args.out / "manifest.json", manifest.dump(2) + "\n");
    if (code == kExitOk)
      out << "wrote " << (args.out / "manifest.json").string() << "\n";
    return code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path checkpoint;
  fs::path out;
  std::size_t n_problems = 500;
  int k = 8;
  std::uint64_t seed = 2024;
  int threads = 1;
};

// Self-reward settings and (when recoverable) the frozen reference that
// produced a checkpoint.
struct LoadedRun {
  Checkpoint ck;
  std::optional<LaserConfig> cfg;
  SelfRewardConfig sr;
  std::optional<PolicyParams> ref;
};

inline LoadedRun load_run(const fs::path& path, bool need_ref) {
  LoadedRun lr;
  lr.ck = load_checkpoint(path);
  if (!lr.ck.meta.config.empty()) lr.cfg = parse_config(lr.ck.meta.config);
  if (lr.cfg) {
    lr.sr = lr.cfg->selfreward(lr.ck.meta.c_ref);
  } else {
    lr.sr.beta_v = lr.ck.meta.beta_v;
    lr.sr.c_ref = lr.ck.meta.c_ref;
    lr.sr.c_ref_eos = lr.ck.meta.c_ref;
  }
  if (need_ref || lr.sr.use_exact_ref) {
    if (!lr.cfg)
      throw CheckpointError("checkpoint carries no config, so its reference cannot be rebuilt");
    lr.ref = initial_policy(*lr.cfg);
  }
  return lr;
}

inline int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  if (args.k < 1 || args.n_problems < 1) {
    err << "usage error: --k and --n-problems must be >= 1\n";
    return kExitUsage;
  }
  try {
    const LoadedRun lr = load_run(args.checkpoint, false);
    DirLock lock(args.out);
    EvalOptions eo;
    eo.n_problems = args.n_problems;
    eo.k = args.k;
    eo.seed = args.seed;
    eo.threads = args.threads;
    eo.max_len = lr.cfg ? lr.cfg->max_len : 8;
    eo.step_tag = static_cast<std::int64_t>(lr.ck.params.version);
    const EvalReport rep = evaluate(lr.ck.params, lr.sr, eo, lr.ref ? &*lr.ref : nullptr);

    std::string lines;
    for (const auto& r : rep.records) lines += record_to_line(r) + "\n";
    write_text(args.out / "eval_rollouts.jsonl", lines);
    const auto& v = rep.verification;
    nlohmann::json report = {
        {"checkpoint_step", lr.ck.params.version},
        {"n_problems", rep.n_problems},
        {"k", rep.k},
        {"seed", args.seed},
        {"pass_at_1", rep.pass_at_1},
        {"acc_correct", optional_json(v.acc_correct)},
        {"acc_incorrect", optional_json(v.acc_incorrect)},
        {"f1", optional_json(v.f1)},
        {"overall_acc", v.overall_acc},
        {"n_correct", v.n_correct},
        {"n_incorrect", v.n_incorrect},
        {"maj_acc", rep.maj_acc},
        {"rm_acc", rep.rm_acc},
    };
    write_text(args.out / "eval_report.json", report.dump(2) + "\n");
    out << report.dump(2) << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------- vote

struct VoteArgs {
  fs::path rollouts;
  fs::path out;
  std::vector<int> ks = {1, 2, 4, 8};
};

inline std::string vote_csv(const VoteReport& rep) {
  std::string s = "K,maj_acc,rm_acc,f1\n";
  for (const auto& r : rep.rows)
    s += std::to_string(r.k) + "," + fmt_double(r.maj_acc) + "," + fmt_double(r.rm_acc) +
         "," + (r.f1 ? fmt_double(*r.f1) : std::string("-1")) + "\n";
  return s;
}

inline int cmd_vote(const VoteArgs& args, std::ostream& out, std::ostream& err) {
  if (args.ks.empty()) {
    err << "usage error: give at least one K\n";
    return kExitUsage;
  }
  for (int k : args.ks)
    if (k < 1) {
      err << "usage error: K must be >= 1\n";
      return kExitUsage;
    }
  try {
    std::ifstream in(args.rollouts);
    if (!in) throw InputError("cannot open " + args.rollouts.string());
    std::vector<RolloutRecord> records;
    try {
      records = read_records(in);
    } catch (const InputError& e) {
      throw InputError(args.rollouts.string() + ": " + e.what());
    }
    const VoteReport rep = vote_report(records, args.ks);
    DirLock lock(args.out);
    std::string lines;
    for (const auto& pv : rep.per_problem) {
      nlohmann::json j = {{"problem_id", pv.problem_id}, {"k", pv.k},
                          {"gt", pv.gt},                 {"maj", nullptr},
                          {"rm", nullptr},               {"maj_correct", pv.maj_correct},
                          {"rm_correct", pv.rm_correct}};
      if (pv.maj) j["maj"] = *pv.maj;
      if (pv.rm) j["rm"] = *pv.rm;
      lines += j.dump() + "\n";
    }
    write_text(args.out / "votes.jsonl", lines);
    const std::string csv = vote_csv(rep);
    write_text(args.out / "vote.csv", csv);
    out << csv;
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  fs::path checkpoint;
  fs::path out;
  std::string which;
  std::size_t samples = 100;
  std::uint64_t seed = 7;
};

inline const std::vector<std::string>& diagnostic_names() {
  static const std::vector<std::string> names = {"partition", "implicit", "refstats",
                                                 "gradcheck"};
  return names;
}

inline int cmd_diagnose(const DiagnoseArgs& args, std::ostream& out, std::ostream& err) {
  const auto& names = diagnostic_names();
  if (std::find(names.begin(), names.end(), args.which) == names.end()) {
    err << "usage error: unknown diagnostic '" << args.which
        << "' (expected partition, implicit, refstats or gradcheck)\n";
    return kExitUsage;
  }
  if (args.samples < 2) {
    err << "usage error: --samples must be >= 2\n";
    return kExitUsage;
  }
  try {
    const bool need_ref = args.which == "implicit" || args.which == "refstats";
    const LoadedRun lr = load_run(args.checkpoint, need_ref);
    const PolicyParams& theta = lr.ck.params;
    const int max_len = lr.cfg ? lr.cfg->max_len : 8;
    DirLock lock(args.out);
    nlohmann::json report;

    if (args.which == "partition") {
      // The checkpoint is audited in the role of the reference.
      const auto pairs = sample_attempts(theta, args.samples, max_len, args.seed);
      std::vector<TokenSequence> contexts;
      for (const auto& a : pairs) contexts.push_back(a.context());
      const auto audit = partition_audit(theta, contexts, lr.sr);
      const auto cref = estimate_cref(theta, pairs, lr.sr.zc);
      report = {{"max_abs_logZ", audit.max_abs_log_z}, {"n_contexts", contexts.size()},
                {"tolerance", audit.tolerance},        {"passed", audit.passed},
                {"c_ref", cref.mean},                  {"c_ref_std", cref.std}};
    } else if (args.which == "implicit") {
      const double beta = lr.sr.beta_v;
      const auto pairs = sample_attempts(theta, args.samples, max_len, args.seed);
      std::string csv = "sample,position,cumulative_value,r_v\n";
      std::vector<double> lengths, finals;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto c = cumulative_implicit_reward(theta, *lr.ref, pairs[i].problem,
                                                  pairs[i].solution, beta);
        for (std::size_t t = 0; t < c.cumulative.size(); ++t)
          csv += std::to_string(i) + "," + std::to_string(t + 1) + "," +
                 fmt_double(c.cumulative[t]) + "," + fmt_double(c.r_v) + "\n";
        lengths.push_back(static_cast<double>(c.length));
        finals.push_back(c.final_value);
      }
      write_text(args.out / "implicit.csv", csv);
      report = {{"n_samples", pairs.size()},
                {"beta", beta},
                {"pearson_length_final", pearson(lengths, finals)},
                {"curves", "implicit.csv"}};
    } else if (args.which == "refstats") {
      const auto pairs = sample_attempts(*lr.ref, args.samples, max_len, args.seed);
      const auto zc = ref_logprob_stats(*lr.ref, lr.sr.zc, pairs);
      const auto dg = ref_logprob_stats(*lr.ref, tok::digit(0), pairs);
      report = {{"n_pairs", pairs.size()},
                {"zc", {{"token", lr.sr.zc}, {"mean", zc.mean}, {"std", zc.std}}},
                {"digit", {{"token", tok::digit(0)}, {"mean", dg.mean}, {"std", dg.std}}}};
    } else {
      GradCheckOptions go;
      go.seed = args.seed;
      const auto rep = grad_check(theta, go);
      report = {{"max_rel_err", rep.max_rel_err}, {"worst_index", rep.worst_index},
                {"probed", rep.probed},           {"tolerance", go.tolerance},
                {"degraded", rep.degraded}};
    }
    write_text(args.out / (args.which + ".json"), report.dump(2) + "\n");
    out << report.dump(2) << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// ---------------------------------------------------------------- problems

struct ProblemsArgs {
  fs::path out;
  std::size_t n = 100;
  std::uint64_t seed = 2024;
};

inline int cmd_problems(const ProblemsArgs& args, std::ostream& out, std::ostream& err) {
  try {
    std::string lines;
    for (std::size_t i = 0; i < args.n; ++i)
      lines += problem_to_json(gen_problem(eval_problem_seed(args.seed, i))).dump() + "\n";
    if (args.out.empty()) {
      out << lines;
    } else {
      if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
      write_text(args.out, lines);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace laser
