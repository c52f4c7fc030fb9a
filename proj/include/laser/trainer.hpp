#pragma once

// The joint reasoning + self-rewarding training loop.
//
// Each step samples a batch of problems, rolls out a group of responses per
// problem, scores them with the verifier and with the last-token
// self-reward, and takes one plain SGD ascent step on
//
//   J = 1/N sum_i A_i sum_t log pi(y_t)          policy-gradient surrogate
//       - beta/N sum_i sum_t [log pi - log pi_ref] (only when beta > 0)
//       - alpha * l(theta)                       self-rewarding loss
//
// with the loss gated on step >= warmup_reasoning and the self-reward
// advantage mix gated on step >= warmup_self_reward.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "laser/advantage.hpp"
#include "laser/base.hpp"
#include "laser/checkpoint.hpp"
#include "laser/config.hpp"
#include "laser/errors.hpp"
#include "laser/inference.hpp"
#include "laser/parallel.hpp"
#include "laser/policy.hpp"
#include "laser/records.hpp"
#include "laser/selfreward.hpp"
#include "laser/task.hpp"

namespace laser {

struct StepFlags {
  bool use_sr_loss = false;
  bool use_sr_adv = false;

  bool operator==(const StepFlags&) const = default;
};

inline StepFlags schedule_flags(int step, const LaserConfig& cfg) {
  return {step >= cfg.warmup_reasoning, step >= cfg.warmup_self_reward};
}

// Problem seeds for training live below 2^48; evaluation uses a disjoint
// range (see evaluate.hpp).
inline std::uint64_t train_problem_seed(std::uint64_t run_seed, int step,
                                        std::size_t j) {
  return derive_seed({run_seed, static_cast<std::uint64_t>(step), j, 0x7a}) &
         ((1ULL << 48) - 1);
}

inline std::uint64_t init_seed(std::uint64_t run_seed) {
  return derive_seed({run_seed, 0x1417});
}

struct Rollout {
  Sample sample;
  double r_v = 0.0;
  double zc_logprob = 0.0;
  double zi_logprob = 0.0;
  // c_ref, or log pi_ref(zc | x, y) in exact-reference mode.
  double baseline = 0.0;
  double r_s = 0.0;
};

struct Group {
  Problem problem;
  std::vector<Rollout> rollouts;
  AdvantageSet adv;
};

inline Rollout score_rollout(const PolicyParams& params, const PolicyParams& ref,
                             const Problem& p, Sample sample,
                             const SelfRewardConfig& sr) {
  Rollout r;
  r.r_v = verify(p, sample.solution);
  const TokenSequence ctx = concat(p.prompt, sample.solution.response);
  const auto dist = next_log_distribution(params, ctx);
  r.zc_logprob = dist[static_cast<std::size_t>(sr.zc)];
  r.zi_logprob = dist[static_cast<std::size_t>(sr.zi)];
  r.baseline = sr.use_exact_ref ? next_logprob_of(ref, ctx, sr.zc) : sr.c_ref;
  r.r_s = score_from_logprob(r.zc_logprob, r.baseline, sr.beta_v);
  r.sample = std::move(sample);
  return r;
}

inline std::vector<Group> collect_rollouts(const PolicyParams& params,
                                           const PolicyParams& ref,
                                           const LaserConfig& cfg,
                                           const SelfRewardConfig& sr, int step,
                                           int threads) {
  std::vector<Group> groups(static_cast<std::size_t>(cfg.batch_problems));
  parallel_for(groups.size(), threads, [&](std::size_t j) {
    Group& g = groups[j];
    g.problem = gen_problem(train_problem_seed(cfg.run_seed, step, j));
    for (int i = 0; i < cfg.group_size; ++i) {
      Rng rng(derive_seed({cfg.run_seed, static_cast<std::uint64_t>(step), j,
                           static_cast<std::uint64_t>(i)}));
      auto s = sample_sequence(params, g.problem.prompt, cfg.max_len, rng);
      g.rollouts.push_back(score_rollout(params, ref, g.problem, std::move(s), sr));
    }
  });
  return groups;
}

enum class SelfRewardLoss { kMse, kSft };

// The step objective with rollouts and advantages frozen. value() and
// gradient() are exact counterparts.
struct JointObjective {
  struct Item {
    TokenSequence seq;
    std::size_t prompt_len = 0;
    double advantage = 0.0;
    double r_v = 0.0;
    double baseline = 0.0;
    double ref_total_logprob = 0.0;
  };

  std::vector<Item> items;
  // Items of group g are [group_begin[g], group_begin[g + 1]).
  std::vector<std::size_t> group_begin = {0};
  double beta = 0.0;
  // Effective loss weight; 0 while the loss is gated off.
  double alpha = 0.0;
  SelfRewardConfig sr;
  SelfRewardLoss loss_kind = SelfRewardLoss::kMse;
  bool reweight = true;

  double n() const { return static_cast<double>(items.size()); }

  LossResult self_reward_loss(const PolicyParams& params) const {
    if (loss_kind == SelfRewardLoss::kSft) {
      std::vector<SftSample> batch;
      for (const auto& it : items) {
        const auto dist = next_log_distribution(params, it.seq);
        batch.push_back({it.r_v, dist[static_cast<std::size_t>(sr.zc)],
                         dist[static_cast<std::size_t>(sr.zi)]});
      }
      return sft_loss(batch, sr);
    }
    std::vector<ScoredSolution> batch;
    for (const auto& it : items) {
      const double lp = next_logprob_of(params, it.seq, sr.zc);
      batch.push_back({it.r_v, score_from_logprob(lp, it.baseline, sr.beta_v), lp});
    }
    return mse_loss_reweighted(batch, sr, reweight);
  }

  double value(const PolicyParams& params) const {
    double pg = 0.0, kl = 0.0;
    for (const auto& it : items) {
      const auto trace = forward_logprobs(params, it.seq, it.prompt_len);
      pg += it.advantage * trace.total_logprob;
      if (beta != 0.0) kl += trace.total_logprob - it.ref_total_logprob;
    }
    double total = pg / n() - beta * kl / n();
    if (alpha != 0.0) total -= alpha * self_reward_loss(params).loss;
    return total;
  }

  std::vector<double> gradient(const PolicyParams& params, int threads = 1) const {
    std::optional<LossResult> loss;
    if (alpha != 0.0) loss = self_reward_loss(params);
    const std::size_t n_groups = group_begin.size() - 1;
    std::vector<std::vector<double>> partial(n_groups);
    parallel_for(n_groups, threads, [&](std::size_t g) {
      partial[g].assign(params.theta.size(), 0.0);
      for (std::size_t i = group_begin[g]; i < group_begin[g + 1]; ++i) {
        const Item& it = items[i];
        TokenSequence seq = it.seq;
        std::vector<double> coeffs(seq.size() - 1, 0.0);
        const double c = (it.advantage - beta) / n();
        for (std::size_t t = it.prompt_len - 1; t < coeffs.size(); ++t) coeffs[t] = c;
        if (loss) {
          seq.push_back(loss->targets[i]);
          coeffs.push_back(-alpha * loss->coefficients[i]);
        }
        accumulate_gradient(params, seq, coeffs, partial[g]);
      }
    });
    std::vector<double> grad(params.theta.size(), 0.0);
    for (const auto& p : partial)
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += p[k];
    return grad;
  }
};

inline JointObjective build_objective(const std::vector<Group>& groups,
                                      const LaserConfig& cfg,
                                      const SelfRewardConfig& sr, StepFlags flags,
                                      const PolicyParams* ref = nullptr) {
  JointObjective obj;
  obj.beta = cfg.beta;
  obj.sr = sr;
  obj.reweight = cfg.reweight;
  obj.loss_kind =
      cfg.mode == Mode::kSftBaseline ? SelfRewardLoss::kSft : SelfRewardLoss::kMse;
  obj.alpha = flags.use_sr_loss ? cfg.effective_alpha() : 0.0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const Rollout& r = g.rollouts[i];
      JointObjective::Item it;
      it.seq = concat(g.problem.prompt, r.sample.solution.response);
      it.prompt_len = g.problem.prompt.size();
      it.advantage = g.adv.advantages.at(i);
      it.r_v = r.r_v;
      it.baseline = r.baseline;
      if (cfg.beta != 0.0) {
        if (!ref) throw InputError("KL term needs reference params");
        it.ref_total_logprob = forward_logprobs(*ref, it.seq, it.prompt_len).total_logprob;
      }
      obj.items.push_back(std::move(it));
    }
    obj.group_begin.push_back(obj.items.size());
  }
  return obj;
}

inline void assign_advantages(std::vector<Group>& groups, const LaserConfig& cfg,
                              StepFlags flags) {
  for (auto& g : groups) {
    std::vector<double> rv, rs;
    for (const auto& r : g.rollouts) {
      rv.push_back(r.r_v);
      rs.push_back(r.r_s);
    }
    if (cfg.mode == Mode::kGrpo || !flags.use_sr_adv) {
      AdvantageSet a;
      a.advantages = grpo_advantages(rv);
      const auto srv = population_stats(rv);
      const auto srs = population_stats(rs);
      a.mean_rv = srv.mean;
      a.std_rv = srv.std;
      a.mean_rs = srs.mean;
      a.std_rs = srs.std;
      g.adv = std::move(a);
    } else {
      g.adv = integrated_advantages(rv, rs, cfg.effective_tau(), cfg.sigma_threshold);
    }
  }
}

struct MetricRow {
  int step = 0;
  double mean_rv = 0.0;
  // Fraction of problems with at least one correct response.
  double pass_rate = 0.0;
  double mse_loss = 0.0;
  // -1 when the batch lacks correct or incorrect responses.
  double sr_f1 = -1.0;
  double frac_sigma_filtered = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;

  bool operator==(const MetricRow&) const = default;
};

inline constexpr const char* kMetricsHeader =
    "step,mean_rv,pass_rate,mse_loss,sr_f1,frac_sigma_filtered,grad_norm,wall_ms";

inline std::string metrics_line(const MetricRow& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                m.step, m.mean_rv, m.pass_rate, m.mse_loss, m.sr_f1,
                m.frac_sigma_filtered, m.grad_norm, m.wall_ms);
  return buf;
}

struct TrainState {
  int step = 0;
  PolicyParams params;
  PolicyParams ref;
  std::uint64_t ref_checksum = 0;
  CrefEstimate cref;
  std::vector<MetricRow> history;
};

// Fresh initialization followed by base pretraining; also the reference.
inline PolicyParams initial_policy(const LaserConfig& cfg) {
  PolicyParams p = init_policy(cfg.arch(), init_seed(cfg.run_seed), cfg.init_options());
  pretrain_base(p, cfg.base_options());
  return p;
}

// c_ref from the config, or the mean over cref_samples reference rollouts.
inline CrefEstimate resolve_cref(const LaserConfig& cfg, const PolicyParams& ref) {
  if (cfg.c_ref) return {*cfg.c_ref, 0.0, 0};
  const auto pairs = sample_attempts(ref, static_cast<std::size_t>(cfg.cref_samples),
                                     cfg.max_len, derive_seed({cfg.run_seed, 0xc2ef}));
  return estimate_cref(ref, pairs);
}

inline TrainState init_state(const LaserConfig& cfg) {
  TrainState st;
  st.params = initial_policy(cfg);
  st.ref = st.params;
  st.ref_checksum = checksum(st.ref);
  st.cref = resolve_cref(cfg, st.ref);
  cfg.selfreward(st.cref.mean).validate();
  return st;
}

struct StepResult {
  MetricRow row;
  std::vector<Group> groups;
  StepFlags flags;
};

inline StepResult train_step(TrainState& state, const LaserConfig& cfg,
                             int threads = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const int s = state.step + 1;
  const SelfRewardConfig sr = cfg.selfreward(state.cref.mean);
  StepResult out;
  out.flags = schedule_flags(s, cfg);
  out.groups = collect_rollouts(state.params, state.ref, cfg, sr, s, threads);
  for (const auto& g : out.groups)
    for (const auto& r : g.rollouts)
      if (!std::isfinite(r.r_s) || !std::isfinite(r.sample.total_logprob))
        throw NonFiniteError("step " + std::to_string(s) + ": non-finite score on problem " +
                             std::to_string(g.problem.id));
  assign_advantages(out.groups, cfg, out.flags);

  const JointObjective obj =
      build_objective(out.groups, cfg, sr, out.flags, &state.ref);
  std::vector<double> grad = obj.gradient(state.params, threads);

  MetricRow& m = out.row;
  m.step = s;
  std::vector<ScoredSolution> scored;
  std::size_t solved = 0, filtered = 0;
  for (const auto& g : out.groups) {
    bool any = false;
    for (const auto& r : g.rollouts) {
      scored.push_back({r.r_v, r.r_s, r.zc_logprob});
      m.mean_rv += r.r_v;
      any = any || r.r_v == 1.0;
    }
    solved += any ? 1 : 0;
    if (cfg.mode == Mode::kLaser && out.flags.use_sr_adv && cfg.tau > 0.0 &&
        g.adv.sigma_filtered)
      ++filtered;
  }
  m.mean_rv /= static_cast<double>(scored.size());
  m.pass_rate = static_cast<double>(solved) / static_cast<double>(out.groups.size());
  m.mse_loss = mse_loss_reweighted(scored, sr, cfg.reweight).loss;
  if (const auto f1 = verification_f1(scored).f1) m.sr_f1 = *f1;
  m.frac_sigma_filtered =
      static_cast<double>(filtered) / static_cast<double>(out.groups.size());
  double sq = 0.0;
  for (std::size_t k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k]))
      throw NonFiniteError("step " + std::to_string(s) +
                           ": non-finite gradient at parameter " + std::to_string(k));
    sq += grad[k] * grad[k];
  }
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.mse_loss) || !std::isfinite(m.grad_norm))
    throw NonFiniteError("step " + std::to_string(s) + ": non-finite loss (mse=" +
                         std::to_string(m.mse_loss) + ")");

  for (std::size_t k = 0; k < grad.size(); ++k) state.params.theta[k] += cfg.lr * grad[k];
  state.params.version = static_cast<std::uint64_t>(s);
  state.step = s;
  if (checksum(state.ref) != state.ref_checksum)
    throw Error("step " + std::to_string(s) + ": reference parameters changed");

  if (cfg.record_wall_time)
    m.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  state.history.push_back(m);
  return out;
}

inline std::vector<RolloutRecord> step_records(const StepResult& r) {
  std::vector<RolloutRecord> out;
  for (const auto& g : r.groups)
    for (const auto& ro : g.rollouts) {
      RolloutRecord rec;
      rec.step = r.row.step;
      rec.problem_id = g.problem.id;
      rec.prompt_ids = g.problem.prompt;
      rec.response_ids = ro.sample.solution.response;
      rec.answer = ro.sample.solution.extracted_answer;
      rec.gt = g.problem.gt_answer;
      rec.r_v = ro.r_v;
      rec.r_s = ro.r_s;
      rec.total_logprob = ro.sample.total_logprob;
      rec.terminated = ro.sample.solution.terminated;
      out.push_back(std::move(rec));
    }
  return out;
}

// A failure during step `step`; the message carries the diagnostic.
struct StepFailure : Error {
  int step;
  StepFailure(int s, const std::string& what) : Error(what), step(s) {}
};

struct RunOptions {
  // Empty: train in memory and write nothing.
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  int threads = 1;
  std::function<void(const StepResult&, const TrainState&)> on_step;
};

struct RunResult {
  TrainState state;
  std::filesystem::path metrics_csv;
  std::vector<std::filesystem::path> checkpoints;
  std::optional<std::filesystem::path> rollouts;
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, int step) {
  char name[32];
  std::snprintf(name, sizeof name, "step_%06d.ckpt", step);
  return dir / "checkpoints" / name;
}

inline Checkpoint make_checkpoint(const TrainState& st, const LaserConfig& cfg) {
  Checkpoint ck;
  ck.params = st.params;
  ck.meta.run_seed = cfg.run_seed;
  ck.meta.c_ref = st.cref.mean;
  ck.meta.beta_v = cfg.beta_v;
  ck.meta.config_hash = config_hash(cfg);
  ck.meta.config = serialize_config(cfg);
  return ck;
}

namespace detail {

// Keeps rows whose step is <= step; a missing file becomes a bare header.
inline void truncate_metrics(const std::filesystem::path& path, int step) {
  std::ifstream in(path);
  std::string line, kept;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line == kMetricsHeader) continue;
    }
    if (line.empty()) continue;
    if (std::stoi(line.substr(0, line.find(','))) <= step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kMetricsHeader << "\n" << kept;
}

inline void truncate_rollouts(const std::filesystem::path& path, int step) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<int>() <= step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

}  // namespace detail

// Runs cfg.steps steps (continuing from a checkpoint when resuming). Writes
// metrics.csv, checkpoints/step_NNNNNN.ckpt every checkpoint_every steps plus
// the initial and final ones, and rollouts.jsonl every rollout_log_every
// steps. Output is a pure function of the config.
inline RunResult run(const LaserConfig& cfg, const RunOptions& opts = {}) {
  cfg.validate();
  RunResult res;
  TrainState& st = res.state;
  const bool write = !opts.out_dir.empty();
  const std::string hash = config_hash(cfg);

  if (opts.resume) {
    const Checkpoint ck = load_checkpoint(*opts.resume);
    if (ck.meta.config_hash != hash)
      throw ConfigError("checkpoint " + opts.resume->string() +
                        " was written under a different config (hash " +
                        ck.meta.config_hash + ", current " + hash + ")");
    st.ref = initial_policy(cfg);
    st.ref_checksum = checksum(st.ref);
    if (!(ck.params.arch == st.ref.arch))
      throw CheckpointError("checkpoint architecture does not match config");
    st.params = ck.params;
    st.step = static_cast<int>(ck.params.version);
    st.cref = {ck.meta.c_ref, 0.0, 0};
    if (cfg.c_ref) st.cref.mean = *cfg.c_ref;
  } else {
    st = init_state(cfg);
  }

  std::ofstream metrics, rollouts;
  if (write) {
    std::filesystem::create_directories(opts.out_dir / "checkpoints");
    res.metrics_csv = opts.out_dir / "metrics.csv";
    const auto rollout_path = opts.out_dir / "rollouts.jsonl";
    if (opts.resume) {
      detail::truncate_metrics(res.metrics_csv, st.step);
      detail::truncate_rollouts(rollout_path, st.step);
      metrics.open(res.metrics_csv, std::ios::app);
    } else {
      metrics.open(res.metrics_csv, std::ios::trunc);
      metrics << kMetricsHeader << "\n";
    }
    if (cfg.rollout_log_every > 0 || cfg.log_all_rollouts) {
      rollouts.open(rollout_path, opts.resume ? std::ios::app : std::ios::trunc);
      res.rollouts = rollout_path;
    }
    if (!metrics) throw Error("cannot write " + res.metrics_csv.string());
    if (!opts.resume) {
      const auto p = checkpoint_path(opts.out_dir, 0);
      save_checkpoint(p, make_checkpoint(st, cfg));
      res.checkpoints.push_back(p);
    }
  }

  while (st.step < cfg.steps) {
    const int s = st.step + 1;
    StepResult r;
    try {
      r = train_step(st, cfg, opts.threads);
    } catch (const StepFailure&) {
      throw;
    } catch (const std::exception& e) {
      if (write) {
        std::ofstream dump(opts.out_dir / "failure.json", std::ios::trunc);
        dump << nlohmann::json{{"step", s}, {"error", e.what()},
                               {"param_checksum", hex64(checksum(st.params))}}
                    .dump(2)
             << "\n";
      }
      throw StepFailure(s, e.what());
    }
    if (write) {
      metrics << metrics_line(r.row) << "\n";
      metrics.flush();
      const bool log_rollouts =
          cfg.log_all_rollouts || (cfg.rollout_log_every > 0 && s % cfg.rollout_log_every == 0);
      if (rollouts.is_open() && log_rollouts) {
        for (const auto& rec : step_records(r)) rollouts << record_to_line(rec) << "\n";
        rollouts.flush();
      }
      if (s % cfg.checkpoint_every == 0 || s == cfg.steps) {
        const auto p = checkpoint_path(opts.out_dir, s);
        try {
          save_checkpoint(p, make_checkpoint(st, cfg));
        } catch (const std::exception& e) {
          throw StepFailure(s, e.what());
        }
        res.checkpoints.push_back(p);
      }
      if (!metrics) throw StepFailure(s, "cannot write " + res.metrics_csv.string());
    }
    if (opts.on_step) opts.on_step(r, st);
  }
  return res;
}

}  // namespace laser
