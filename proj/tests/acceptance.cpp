// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion with
// the measured quantities, and exits 1 if any criterion fails.
//
//   acceptance [--only N[,N...]] [--cli PATH]

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "laser/laser.hpp"

namespace fs = std::filesystem;
using namespace laser;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path source_dir() { return LASER_SOURCE_DIR; }

LaserConfig shipped(const std::string& name) {
  return load_config(source_dir() / "examples/laser/configs" / name);
}

EvalReport eval_final(const TrainState& st, const LaserConfig& cfg, std::size_t n = 500,
                      int k = 8) {
  EvalOptions eo;
  eo.n_problems = n;
  eo.k = k;
  eo.threads = threads_from_env();
  return evaluate(st.params, cfg.selfreward(st.cref.mean), eo,
                  cfg.use_exact_ref ? &st.ref : nullptr);
}

RunResult train(const LaserConfig& cfg) {
  RunOptions o;
  o.threads = threads_from_env();
  return run(cfg, o);
}

// ---- 1

LaserConfig micro_config() {
  LaserConfig c;
  c.steps = 4;
  c.warmup_reasoning = 1;
  c.warmup_self_reward = 2;
  c.embed_dim = 4;
  c.context_window = 3;
  c.hidden_dim = 6;
  c.max_seq_len = 16;
  c.batch_problems = 3;
  c.group_size = 3;
  c.max_len = 4;
  c.base_steps = 0;
  c.cref_samples = 20;
  c.alpha = 3.0;
  return c;
}

Outcome gradient_fidelity() {
  LaserConfig cfg = micro_config();
  TrainState st = init_state(cfg);
  Rng rng(3);
  for (auto& v : st.params.theta) v += 0.3 * rng.normal();
  const auto sr = cfg.selfreward(st.cref.mean);
  auto groups = collect_rollouts(st.params, st.ref, cfg, sr, 1, 1);
  for (auto& g : groups) {
    g.adv.advantages.clear();
    for (auto& r : g.rollouts) {
      r.r_v = static_cast<double>(rng.below(2));
      g.adv.advantages.push_back(2.0 * rng.uniform() - 1.0);
    }
  }
  GradCheckOptions o;
  o.probe_count = st.params.theta.size();
  o.step = 1e-5;
  auto check = [&](const JointObjective& obj) {
    return grad_check(st.params, obj.gradient(st.params),
                      [&](const PolicyParams& p) { return obj.value(p); }, o)
        .max_rel_err;
  };
  // (a) policy-gradient surrogate alone.
  cfg.beta = 0.05;
  JointObjective pg = build_objective(groups, cfg, sr, {false, false}, &st.ref);
  const double e_pg = check(pg);
  // (b) re-weighted squared error alone: zero advantages and no KL.
  cfg.beta = 0.0;
  JointObjective mse = build_objective(groups, cfg, sr, {true, false}, &st.ref);
  for (auto& it : mse.items) it.advantage = 0.0;
  const double e_mse = check(mse);
  // (c) everything together.
  cfg.beta = 0.05;
  const JointObjective joint = build_objective(groups, cfg, sr, {true, true}, &st.ref);
  const double e_joint = check(joint);
  const double worst = std::max({e_pg, e_mse, e_joint});
  return {st.params.theta.size() <= 500 && worst < 1e-4,
          fmt("%zu params, max rel err pg %.2e mse %.2e joint %.2e", st.params.theta.size(),
              e_pg, e_mse, e_joint)};
}

// ---- 2

Outcome partition() {
  const PolicyParams ref = init_policy(Arch{}, 1);
  std::vector<TokenSequence> ctx;
  for (const auto& a : sample_attempts(ref, 100, 8, 2)) ctx.push_back(a.context());
  const auto cref = estimate_cref(ref, sample_attempts(ref, 300, 8, 3));
  SelfRewardConfig sr;
  sr.c_ref = cref.mean;
  const auto ok = partition_audit(ref, ctx, sr);
  PolicyParams uniform{Arch{}, std::vector<double>(Arch{}.param_count(), 0.0), 0};
  const auto bad = partition_audit(uniform, ctx, sr);
  const double z_bad = std::exp(bad.max_abs_log_z);
  return {ok.passed && ok.max_abs_log_z < 1e-4 && !bad.passed && z_bad > 100.0,
          fmt("shipped init max |log Z| %.2e over %zu contexts; uniform reference Z %.1f",
              ok.max_abs_log_z, ctx.size(), z_bad)};
}

// ---- 3

Outcome grpo_algebra() {
  Rng rng(11);
  double worst_mean = 0.0, worst_inv = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> g(2 + rng.below(15));
    for (auto& x : g) x = rng.below(2) ? 4.0 * rng.uniform() - 2.0 : static_cast<double>(rng.below(2));
    const auto a = grpo_advantages(g);
    double m = 0.0;
    for (double v : a) m += v;
    worst_mean = std::max(worst_mean, std::abs(m / static_cast<double>(a.size())));
    const double shift = 10.0 * rng.uniform() - 5.0, scale = 0.01 + 10.0 * rng.uniform();
    auto gs = g, gc = g;
    for (auto& x : gs) x += shift;
    for (auto& x : gc) x *= scale;
    const auto as = grpo_advantages(gs), ac = grpo_advantages(gc);
    for (std::size_t k = 0; k < a.size(); ++k)
      worst_inv = std::max({worst_inv, std::abs(as[k] - a[k]), std::abs(ac[k] - a[k])});
  }
  bool degenerate_zero = true;
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> flat(2 + rng.below(15), rng.uniform());
    for (double v : grpo_advantages(flat)) degenerate_zero &= v == 0.0;
  }
  return {worst_mean < 1e-9 && worst_inv < 1e-9 && degenerate_zero,
          fmt("max |group mean| %.1e, max shift/scale deviation %.1e, degenerate groups zero: %s",
              worst_mean, worst_inv, degenerate_zero ? "yes" : "no")};
}

// ---- 4

Outcome reweighting() {
  Rng rng(12);
  double worst_rel = 0.0;
  int bit_exact = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t nc = 1 + rng.below(5000), ni = 1 + rng.below(5000);
    const auto w = class_weights(nc, ni);
    const double n = static_cast<double>(nc + ni);
    const double lhs = w.w_c * static_cast<double>(nc) + w.w_i * static_cast<double>(ni);
    bit_exact += lhs == n ? 1 : 0;
    worst_rel = std::max(worst_rel, std::abs(lhs - n) / n);
  }
  SelfRewardConfig sr;
  double worst_mse = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<ScoredSolution> b(2 * (1 + rng.below(50)));
    double plain = 0.0;
    for (std::size_t k = 0; k < b.size(); ++k) {
      b[k].r_v = k % 2 ? 1.0 : 0.0;
      b[k].r_s = 2.0 * rng.uniform() - 0.5;
      plain += (b[k].r_s - b[k].r_v) * (b[k].r_s - b[k].r_v);
    }
    plain /= static_cast<double>(b.size());
    worst_mse = std::max(worst_mse, std::abs(mse_loss_reweighted(b, sr).loss - plain));
  }
  const double eps = std::numeric_limits<double>::epsilon();
  return {worst_rel <= 4.0 * eps && worst_mse <= 1e-12,
          fmt("w_c*N_c + w_i*N_i = N: %d/1000 bit-exact, worst relative gap %.2g (%.1f eps); "
              "balanced vs plain MSE max diff %.1e",
              bit_exact, worst_rel, worst_rel / eps, worst_mse)};
}

// ---- 5

std::vector<RolloutRecord> calibrated_log() {
  std::vector<RolloutRecord> log;
  for (std::uint64_t id = 0; id < 40; ++id)
    for (int j = 0; j < 8; ++j) {
      const bool right = id % 2 == 0 ? j < 5 : j < 3;
      RolloutRecord r;
      r.problem_id = id;
      r.prompt_ids = make_problem(6, 6, id).prompt;
      r.gt = "12";
      r.answer = right ? "12" : "13";
      r.response_ids = {tok::digit(1), tok::digit(right ? 2 : 3), tok::kEos};
      r.terminated = true;
      r.r_v = right ? 1.0 : 0.0;
      r.r_s = r.r_v;
      log.push_back(r);
    }
  return log;
}

Outcome reductions() {
  LaserConfig a;
  a.steps = 200;
  a.warmup_reasoning = 50;
  a.warmup_self_reward = 100;
  a.alpha = 0.0;
  a.tau = 0.0;
  LaserConfig g = a;
  g.mode = Mode::kGrpo;
  g.alpha = 3.0;
  g.tau = 0.1;
  const auto ra = train(a);
  const auto rg = train(g);
  const bool same = ra.state.history == rg.state.history &&
                    ra.state.params.theta == rg.state.params.theta;

  const auto sr = a.selfreward(ra.state.cref.mean);
  int m1_mismatch = 0, m1_total = 0;
  for (const auto& at : sample_attempts(ra.state.params, 200, 8, 31)) {
    ++m1_total;
    m1_mismatch += multi_token_score(ra.state.params, at.problem, at.solution, sr, 1) !=
                   self_reward_score(ra.state.params, at.problem, at.solution, sr);
  }

  const auto rep = eval_final(ra.state, a, 200, 8);
  std::map<std::uint64_t, std::vector<VoteInput>> by_problem;
  for (const auto& r : rep.records) by_problem[r.problem_id].push_back({r.answer, r.r_s});
  int vote_mismatch = 0, instances = 0;
  for (const auto& [_, votes] : by_problem) {
    auto unit = votes;
    for (auto& v : unit) v.weight = 1.0;
    for (double w : {1.0, 0.37}) {
      auto eq = votes;
      for (auto& v : eq) v.weight = w;
      ++instances;
      vote_mismatch += weighted_majority_vote(eq) != majority_vote(unit);
    }
  }
  return {same && m1_mismatch == 0 && vote_mismatch == 0,
          fmt("200-step trajectories bitwise equal: %s; M=1 mismatches %d/%d; equal-weight RM "
              "vs Maj mismatches %d/%d",
              same ? "yes" : "no", m1_mismatch, m1_total, vote_mismatch, instances)};
}

// ---- 6 and 9 share one labeled set.

struct FrozenSetup {
  PolicyParams source;
  SelfRewardConfig sr;
  std::vector<FrozenExample> train, held;
};

const FrozenSetup& frozen_setup() {
  static const FrozenSetup s = [] {
    LaserConfig cfg;
    FrozenSetup f;
    f.source = initial_policy(cfg);
    f.sr = cfg.selfreward(resolve_cref(cfg, f.source).mean);
    f.train = sample_frozen_set(f.source, 2000, cfg.max_len, 21);
    f.held = sample_frozen_set(f.source, 500, cfg.max_len, 22);
    return f;
  }();
  return s;
}

Outcome frozen_fit() {
  const auto& f = frozen_setup();
  PolicyParams p = f.source;
  FrozenFitOptions o;
  o.updates = 2000;
  o.lr = 2.0;
  o.threads = threads_from_env();
  fit_self_reward(p, f.train, f.sr, o);
  int within = 0, wc = 0, nc = 0;
  std::set<std::string> seen;
  for (const auto& e : f.train) seen.insert(render(e.attempt.context()));
  int unseen = 0, unseen_within = 0;
  for (const auto& e : f.held) {
    const double rs = self_reward_score(p, e.attempt.problem, e.attempt.solution, f.sr);
    const bool ok = std::abs(rs - e.r_v) < 0.1;
    within += ok;
    if (e.r_v == 1.0) {
      ++nc;
      wc += ok;
    }
    if (!seen.count(render(e.attempt.context()))) {
      ++unseen;
      unseen_within += ok;
    }
  }
  const double frac = within / 500.0;
  return {frac >= 0.95,
          fmt("%.3f of 500 held-out within 0.1 (correct %d/%d, incorrect %d/%d; "
              "contexts unseen in training %d/%d within)",
              frac, wc, nc, within - wc, 500 - nc, unseen_within, unseen)};
}

Outcome sft_vs_mse() {
  const auto& f = frozen_setup();
  FrozenFitOptions o;
  o.updates = 2000;
  o.lr = 0.5;
  o.threads = threads_from_env();
  auto mean_pzc = [&](SelfRewardLoss loss) {
    PolicyParams p = f.source;
    o.loss = loss;
    fit_self_reward(p, f.train, f.sr, o);
    double s = 0.0;
    int n = 0;
    for (const auto& e : f.held)
      if (e.r_v == 1.0) {
        s += std::exp(zc_logprob(p, e.attempt.problem, e.attempt.solution, f.sr.zc));
        ++n;
      }
    return s / n;
  };
  const double sft = mean_pzc(SelfRewardLoss::kSft);
  const double mse = mean_pzc(SelfRewardLoss::kMse);
  return {sft > 1e-3 && mse < std::exp(-10.0),
          fmt("mean pi(zc) on correct solutions: SFT %.3g, MSE %.3g (e^-10 = %.3g)", sft, mse,
              std::exp(-10.0))};
}

// ---- 7

Outcome end_to_end() {
  const LaserConfig lc = shipped("toy_laser.cfg");
  const LaserConfig gc = shipped("toy_grpo.cfg");
  const auto rl = train(lc);
  const auto rg = train(gc);
  const auto el = eval_final(rl.state, lc);
  const auto eg = eval_final(rg.state, gc);
  const double f1 = el.verification.f1.value_or(0.0);
  const bool no_signal = gc.effective_alpha() == 0.0 && gc.effective_tau() == 0.0;
  return {lc.steps <= 3000 && gc.steps <= 3000 && el.pass_at_1 >= 0.95 && f1 >= 0.90 &&
              eg.pass_at_1 >= 0.95 && no_signal &&
              std::abs(el.pass_at_1 - eg.pass_at_1) <= 0.03,
          fmt("LaSeR Pass@1 %.4f F1 %.4f; GRPO Pass@1 %.4f (alpha=tau=0: %s, F1 %.4f); "
              "gap %.4f",
              el.pass_at_1, f1, eg.pass_at_1, no_signal ? "yes" : "no",
              eg.verification.f1.value_or(-1.0), std::abs(el.pass_at_1 - eg.pass_at_1))};
}

// ---- 8

Outcome voting() {
  const LaserConfig cfg = shipped("toy_vote.cfg");
  const auto r = train(cfg);
  const auto e = eval_final(r.state, cfg, 300, 8);
  const bool mid = e.pass_at_1 >= 0.5 && e.pass_at_1 <= 0.8;
  const int ks[] = {8};
  const auto synth = vote_report(calibrated_log(), ks).rows.front();
  return {mid && e.rm_acc >= e.maj_acc - 0.01 && synth.rm_acc > synth.maj_acc,
          fmt("step-%d checkpoint Pass@1 %.4f, Maj@8 %.4f, RM@8 %.4f over 300 problems; "
              "calibrated log Maj@8 %.3f RM@8 %.3f",
              cfg.steps, e.pass_at_1, e.maj_acc, e.rm_acc, synth.maj_acc, synth.rm_acc)};
}

// ---- 10

Outcome exact_ref() {
  LaserConfig approx = shipped("exact_ref.cfg");
  approx.use_exact_ref = false;
  LaserConfig exact = approx;
  exact.use_exact_ref = true;
  const auto ra = train(approx);
  const auto re = train(exact);
  const auto ea = eval_final(ra.state, approx);
  const auto ee = eval_final(re.state, exact);
  const double fa = ea.verification.f1.value_or(0.0), fe = ee.verification.f1.value_or(0.0);
  return {approx.steps == 1000 && std::abs(ea.pass_at_1 - ee.pass_at_1) <= 0.03 &&
              std::abs(fa - fe) <= 0.03,
          fmt("c_ref: Pass@1 %.4f F1 %.4f; exact reference: Pass@1 %.4f F1 %.4f", ea.pass_at_1,
              fa, ee.pass_at_1, fe)};
}

// ---- 11

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string g_cli = LASER_CLI_PATH;

int sh(const std::string& args, const fs::path& log) {
  const std::string cmd = g_cli + " " + args + " >>" + log.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "laser_acceptance_determinism";
  fs::remove_all(root);
  const std::string cfg = (source_dir() / "examples/laser/configs/smoke.cfg").string();
  int failures = 0;
  for (const char* name : {"a", "b"}) {
    const fs::path d = root / name;
    fs::create_directories(d);
    const fs::path log = root / (std::string(name) + ".log");
    const std::string ck = (d / "run/checkpoints/step_000020.ckpt").string();
    failures += sh("train --config " + cfg + " --out " + (d / "run").string(), log) != 0;
    failures += sh("eval --checkpoint " + ck + " --n-problems 50 --out " + (d / "eval").string(),
                   log) != 0;
    failures += sh("vote --rollouts " + (d / "eval/eval_rollouts.jsonl").string() + " --out " +
                       (d / "vote").string(),
                   log) != 0;
    for (const char* which : {"partition", "implicit", "refstats", "gradcheck"})
      failures += sh("diagnose --checkpoint " + ck + " --which " + which + " --out " +
                         (d / "diag").string(),
                     log) != 0;
    failures += sh("problems --n 20 --out " + (d / "problems.jsonl").string(), log) != 0;
  }
  std::map<std::string, std::string> a, b;
  for (const auto& e : fs::recursive_directory_iterator(root / "a"))
    if (e.is_regular_file()) a[fs::relative(e.path(), root / "a").string()] = slurp(e.path());
  for (const auto& e : fs::recursive_directory_iterator(root / "b"))
    if (e.is_regular_file()) b[fs::relative(e.path(), root / "b").string()] = slurp(e.path());
  int differ = 0;
  for (const auto& [k, v] : a) differ += !b.count(k) || b.at(k) != v;
  differ += static_cast<int>(b.size()) - static_cast<int>(a.size()) != 0;
  return {failures == 0 && differ == 0 && a.size() >= 12,
          fmt("%zu files from train/eval/vote/diagnose/problems; %d differ; %d failed commands",
              a.size(), differ, failures)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (arg == "--cli" && i + 1 < argc) {
      g_cli = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]] [--cli PATH]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"partition audit", partition},
      {"GRPO algebra", grpo_algebra},
      {"re-weighting identities", reweighting},
      {"reductions", reductions},
      {"self-reward fit on frozen rollouts", frozen_fit},
      {"end-to-end toy run", end_to_end},
      {"voting gain", voting},
      {"SFT vs MSE", sft_vs_mse},
      {"exact reference vs c_ref", exact_ref},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first,
                o.detail.c_str(), sec);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed ? 1 : 0;
}
