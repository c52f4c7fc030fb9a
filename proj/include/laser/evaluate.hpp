#pragma once

// Held-out evaluation (Pass@1, self-verification) and Maj@K / RM@K over
// rollout logs.

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laser/inference.hpp"
#include "laser/parallel.hpp"
#include "laser/policy.hpp"
#include "laser/records.hpp"
#include "laser/selfreward.hpp"
#include "laser/task.hpp"

namespace laser {

// Held-out problem seeds occupy [2^52, 2^52 + 2^48), disjoint from training.
inline std::uint64_t eval_problem_seed(std::uint64_t seed, std::size_t i) {
  return (1ULL << 52) | (derive_seed({seed, i, 0xe7a1}) & ((1ULL << 48) - 1));
}

struct VoteRow {
  int k = 0;
  double maj_acc = 0.0;
  double rm_acc = 0.0;
  std::optional<double> f1;
  std::size_t n_problems = 0;
};

struct ProblemVote {
  std::uint64_t problem_id = 0;
  int k = 0;
  std::string gt;
  std::optional<std::string> maj;
  std::optional<std::string> rm;
  bool maj_correct = false;
  bool rm_correct = false;
};

struct VoteReport {
  std::vector<VoteRow> rows;
  std::vector<ProblemVote> per_problem;
};

inline bool answer_matches(const std::optional<std::string>& a, const std::string& gt) {
  return a && normalize_answer(*a) == normalize_answer(gt);
}

// For each K, votes over the first K records of every problem (file order).
inline VoteReport vote_report(std::span<const RolloutRecord> records,
                              std::span<const int> ks) {
  if (ks.empty()) throw InputError("no K values given");
  std::vector<std::uint64_t> order;
  std::map<std::uint64_t, std::vector<const RolloutRecord*>> by_problem;
  for (const auto& r : records) {
    auto& bucket = by_problem[r.problem_id];
    if (bucket.empty()) order.push_back(r.problem_id);
    else if (bucket.front()->gt != r.gt)
      throw InputError("problem " + std::to_string(r.problem_id) +
                       " has conflicting ground truths");
    bucket.push_back(&r);
  }
  const int max_k = *std::max_element(ks.begin(), ks.end());
  for (int k : ks)
    if (k < 1) throw InputError("K must be >= 1");
  for (const auto& [id, bucket] : by_problem)
    if (bucket.size() < static_cast<std::size_t>(max_k))
      throw InputError("problem " + std::to_string(id) + " has " +
                       std::to_string(bucket.size()) + " samples, fewer than K=" +
                       std::to_string(max_k));

  VoteReport rep;
  for (int k : ks) {
    VoteRow row;
    row.k = k;
    row.n_problems = order.size();
    std::vector<ScoredSolution> scored;
    std::size_t maj_hits = 0, rm_hits = 0;
    for (auto id : order) {
      const auto& bucket = by_problem.at(id);
      std::vector<VoteInput> votes;
      for (int i = 0; i < k; ++i) {
        const auto* r = bucket[static_cast<std::size_t>(i)];
        votes.push_back({r->answer, r->r_s});
        scored.push_back({r->r_v, r->r_s, 0.0});
      }
      ProblemVote pv;
      pv.problem_id = id;
      pv.k = k;
      pv.gt = bucket.front()->gt;
      // Unweighted vote: every ballot weighs 1, so ties fall through to the
      // lexicographic rule.
      std::vector<VoteInput> unit = votes;
      for (auto& v : unit) v.weight = 1.0;
      pv.maj = majority_vote(unit);
      pv.rm = weighted_majority_vote(votes);
      pv.maj_correct = answer_matches(pv.maj, pv.gt);
      pv.rm_correct = answer_matches(pv.rm, pv.gt);
      maj_hits += pv.maj_correct ? 1 : 0;
      rm_hits += pv.rm_correct ? 1 : 0;
      rep.per_problem.push_back(std::move(pv));
    }
    if (!order.empty()) {
      row.maj_acc = static_cast<double>(maj_hits) / static_cast<double>(order.size());
      row.rm_acc = static_cast<double>(rm_hits) / static_cast<double>(order.size());
    }
    row.f1 = verification_f1(scored).f1;
    rep.rows.push_back(row);
  }
  return rep;
}

struct EvalOptions {
  std::size_t n_problems = 500;
  int k = 8;
  int max_len = 8;
  std::uint64_t seed = 2024;
  int threads = 1;
  // Written into the records' step field.
  std::int64_t step_tag = 0;
};

struct EvalReport {
  std::size_t n_problems = 0;
  int k = 0;
  double pass_at_1 = 0.0;
  VerificationF1 verification;
  double maj_acc = 0.0;
  double rm_acc = 0.0;
  std::vector<RolloutRecord> records;
};

// Samples k responses for each of n held-out problems and scores them.
inline EvalReport evaluate(const PolicyParams& params, const SelfRewardConfig& sr,
                           const EvalOptions& opts,
                           const PolicyParams* ref = nullptr) {
  if (opts.k < 1) throw InputError("K must be >= 1");
  if (opts.n_problems < 1) throw InputError("need at least one problem");
  std::vector<std::vector<RolloutRecord>> per(opts.n_problems);
  parallel_for(opts.n_problems, opts.threads, [&](std::size_t i) {
    const Problem p = gen_problem(eval_problem_seed(opts.seed, i));
    for (int j = 0; j < opts.k; ++j) {
      Rng rng(derive_seed({opts.seed, i, static_cast<std::uint64_t>(j), 0xe5}));
      const Sample s = sample_sequence(params, p.prompt, opts.max_len, rng);
      RolloutRecord r;
      r.step = opts.step_tag;
      r.problem_id = p.id;
      r.prompt_ids = p.prompt;
      r.response_ids = s.solution.response;
      r.answer = s.solution.extracted_answer;
      r.gt = p.gt_answer;
      r.r_v = verify(p, s.solution);
      r.r_s = self_reward_score(params, p, s.solution, sr, ref);
      r.total_logprob = s.total_logprob;
      r.terminated = s.solution.terminated;
      per[i].push_back(std::move(r));
    }
  });
  EvalReport rep;
  rep.n_problems = opts.n_problems;
  rep.k = opts.k;
  std::vector<ScoredSolution> scored;
  for (auto& v : per)
    for (auto& r : v) {
      scored.push_back({r.r_v, r.r_s, 0.0});
      rep.pass_at_1 += r.r_v;
      rep.records.push_back(std::move(r));
    }
  rep.pass_at_1 /= static_cast<double>(scored.size());
  rep.verification = verification_f1(scored);
  const int ks[] = {opts.k};
  const auto votes = vote_report(rep.records, ks);
  rep.maj_acc = votes.rows.front().maj_acc;
  rep.rm_acc = votes.rows.front().rm_acc;
  return rep;
}

}  // namespace laser
