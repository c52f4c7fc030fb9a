#pragma once

// Trains only the self-rewarding head on a fixed set of labeled responses.
// Used to compare the squared-error and SFT losses and the EOS-position
// variant without the reasoning objective moving underneath them.

#include <span>
#include <vector>

#include "laser/parallel.hpp"
#include "laser/policy.hpp"
#include "laser/selfreward.hpp"
#include "laser/task.hpp"
#include "laser/trainer.hpp"

namespace laser {

struct FrozenExample {
  Attempt attempt;
  double r_v = 0.0;
};

struct FrozenFitOptions {
  SelfRewardLoss loss = SelfRewardLoss::kMse;
  // Read the score at the EOS position instead of after the last token.
  bool eos_position = false;
  int updates = 2000;
  std::size_t batch_size = 128;
  double lr = 0.5;
  bool reweight = true;
  std::uint64_t seed = 11;
  int threads = 1;
};

// Context whose next-token distribution carries the score.
inline TokenSequence scoring_context(const Attempt& a, bool eos_position) {
  TokenSequence ctx = a.context();
  if (eos_position) {
    if (!a.solution.terminated)
      throw InputError("EOS-position scoring needs a terminated response");
    ctx.pop_back();
  }
  return ctx;
}

inline double frozen_score(const PolicyParams& params, const Attempt& a,
                           const SelfRewardConfig& sr, bool eos_position) {
  return eos_position ? eos_position_score(params, a.problem, a.solution, sr)
                      : self_reward_score(params, a.problem, a.solution, sr);
}

// Samples labeled responses from a policy.
inline std::vector<FrozenExample> sample_frozen_set(const PolicyParams& params,
                                                    std::size_t n, int max_len,
                                                    std::uint64_t seed) {
  std::vector<FrozenExample> out;
  for (const auto& a : sample_attempts(params, n, max_len, seed))
    out.push_back({a, verify(a.problem, a.solution)});
  return out;
}

// Minibatch SGD on the self-rewarding loss alone. Returns the loss of the
// last minibatch.
inline double fit_self_reward(PolicyParams& params,
                              std::span<const FrozenExample> data,
                              const SelfRewardConfig& sr,
                              const FrozenFitOptions& opts) {
  if (data.empty()) throw InputError("empty training set");
  std::vector<TokenSequence> contexts;
  for (const auto& ex : data) contexts.push_back(scoring_context(ex.attempt, opts.eos_position));
  const double baseline = opts.eos_position ? sr.c_ref_eos : sr.c_ref;
  Rng rng(derive_seed({opts.seed, 0xf1}));
  double last_loss = 0.0;
  const std::size_t bs = std::min(opts.batch_size, data.size());
  for (int u = 0; u < opts.updates; ++u) {
    std::vector<std::size_t> idx(bs);
    for (auto& i : idx) i = rng.below(data.size());
    LossResult loss;
    if (opts.loss == SelfRewardLoss::kSft) {
      std::vector<SftSample> batch;
      for (auto i : idx) {
        const auto dist = next_log_distribution(params, contexts[i]);
        batch.push_back({data[i].r_v, dist[static_cast<std::size_t>(sr.zc)],
                         dist[static_cast<std::size_t>(sr.zi)]});
      }
      loss = sft_loss(batch, sr);
    } else {
      std::vector<ScoredSolution> batch;
      for (auto i : idx) {
        const double lp = next_logprob_of(params, contexts[i], sr.zc);
        batch.push_back({data[i].r_v, score_from_logprob(lp, baseline, sr.beta_v), lp});
      }
      loss = mse_loss_reweighted(batch, sr, opts.reweight);
    }
    last_loss = loss.loss;
    // Descent on the loss: coefficient -dL/dlogp on each target.
    std::vector<double> grad(params.theta.size(), 0.0);
    for (std::size_t b = 0; b < bs; ++b) {
      TokenSequence seq = contexts[idx[b]];
      seq.push_back(loss.targets[b]);
      std::vector<double> coeffs(seq.size() - 1, 0.0);
      coeffs.back() = -loss.coefficients[b];
      accumulate_gradient(params, seq, coeffs, grad);
    }
    for (std::size_t k = 0; k < grad.size(); ++k) params.theta[k] += opts.lr * grad[k];
  }
  return last_loss;
}

}  // namespace laser
