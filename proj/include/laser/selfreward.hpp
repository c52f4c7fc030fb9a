#pragma once

// Last-token self-rewarding.
//
// The self-rewarding score of a finished response is read from one extra
// next-token distribution after its last token:
//
//   r_s = beta_v * (log pi_theta(zc | x, y) - c_ref)
//
// where c_ref is a pre-computed mean of log pi_ref(zc | x, y). Training fits
// r_s to the verifier reward with a class re-weighted squared error.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laser/errors.hpp"
#include "laser/policy.hpp"
#include "laser/task.hpp"

namespace laser {

struct SelfRewardConfig {
  double beta_v = 0.1;
  double alpha = 0.1;
  double c_ref = -23.0;
  // Constant for the score read at the EOS position (zero-extra-token
  // variant).
  double c_ref_eos = -23.0;
  TokenId zc = tok::kZc;
  // Stand-in for the "incorrect" verification token; only the SFT baseline
  // and the partition audit use it.
  TokenId zi = tok::kPad;
  // Use log pi_ref(zc | x, y) per sample instead of c_ref.
  bool use_exact_ref = false;

  // Throws ConfigError naming the offending field.
  void validate() const {
    if (!(beta_v > 0.0) || !std::isfinite(beta_v))
      throw ConfigError("beta_v: must be > 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha))
      throw ConfigError("alpha: must be >= 0");
    if (!std::isfinite(c_ref)) throw ConfigError("c_ref: must be finite");
    if (!(c_ref + 1.0 / beta_v < -2.0))
      throw ConfigError("c_ref: c_ref + 1/beta_v must be < -2 (got " +
                        std::to_string(c_ref + 1.0 / beta_v) + ")");
    if (!Vocab::valid(zc) || !Vocab::valid(zi) || zc == zi)
      throw ConfigError("zc/zi: must be distinct valid tokens");
  }
};

struct ScoredSolution {
  double r_v = 0.0;
  double r_s = 0.0;
  double zc_logprob = 0.0;
};

inline double score_from_logprob(double zc_logprob, double baseline,
                                 double beta_v) {
  return beta_v * (zc_logprob - baseline);
}

struct CrefEstimate {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

// Mean and population std of log pi(token | context) over the contexts.
inline CrefEstimate logprob_stats(const PolicyParams& params,
                                  std::span<const TokenSequence> contexts,
                                  TokenId token) {
  if (contexts.empty()) throw InputError("no contexts");
  std::vector<double> v;
  v.reserve(contexts.size());
  for (const auto& ctx : contexts) v.push_back(next_logprob_of(params, ctx, token));
  CrefEstimate e;
  e.n = v.size();
  for (double x : v) e.mean += x;
  e.mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - e.mean) * (x - e.mean);
  e.std = std::sqrt(var / static_cast<double>(v.size()));
  return e;
}

inline CrefEstimate estimate_cref(const PolicyParams& ref,
                                  std::span<const Attempt> pairs,
                                  TokenId zc = tok::kZc) {
  if (pairs.empty()) throw InputError("estimate_cref needs at least one pair");
  std::vector<TokenSequence> contexts;
  contexts.reserve(pairs.size());
  for (const auto& a : pairs) contexts.push_back(a.context());
  return logprob_stats(ref, contexts, zc);
}

// Constant for the EOS-position variant: contexts stop before the EOS.
inline CrefEstimate estimate_cref_eos(const PolicyParams& ref,
                                      std::span<const Attempt> pairs,
                                      TokenId zc = tok::kZc) {
  std::vector<TokenSequence> contexts;
  for (const auto& a : pairs) {
    if (!a.solution.terminated) continue;
    TokenSequence ctx = a.context();
    ctx.pop_back();
    contexts.push_back(std::move(ctx));
  }
  if (contexts.empty())
    throw InputError("estimate_cref_eos needs at least one terminated pair");
  return logprob_stats(ref, contexts, zc);
}

// Draws n (problem, response) pairs from params; used to estimate c_ref.
inline std::vector<Attempt> sample_attempts(const PolicyParams& params,
                                            std::size_t n, int max_len,
                                            std::uint64_t seed) {
  std::vector<Attempt> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Problem p = gen_problem(derive_seed({seed, 0xc4ef, i}) & ((1ULL << 48) - 1));
    Rng rng(derive_seed({seed, 0x5a3, i}));
    auto s = sample_sequence(params, p.prompt, max_len, rng);
    out.push_back({p, std::move(s.solution)});
  }
  return out;
}

inline double zc_logprob(const PolicyParams& params, const Problem& p,
                         const Solution& sol, TokenId zc = tok::kZc) {
  if (sol.response.empty()) throw InputError("empty solution");
  return next_logprob_of(params, concat(p.prompt, sol.response), zc);
}

// With cfg.use_exact_ref the baseline is log pi_ref(zc | x, y) and `ref`
// must be given.
inline double self_reward_score(const PolicyParams& params, const Problem& p,
                                const Solution& sol,
                                const SelfRewardConfig& cfg,
                                const PolicyParams* ref = nullptr) {
  const double lp = zc_logprob(params, p, sol, cfg.zc);
  double baseline = cfg.c_ref;
  if (cfg.use_exact_ref) {
    if (!ref) throw InputError("exact reference mode needs reference params");
    baseline = zc_logprob(*ref, p, sol, cfg.zc);
  }
  return score_from_logprob(lp, baseline, cfg.beta_v);
}

struct ClassWeights {
  double w_c = 1.0;
  double w_i = 1.0;
  std::size_t n_c = 0;
  std::size_t n_i = 0;
};

// Class-balancing weights; a class absent from the batch keeps weight 1 for
// the class that is present.
inline ClassWeights class_weights(std::size_t n_c, std::size_t n_i) {
  ClassWeights w;
  w.n_c = n_c;
  w.n_i = n_i;
  if (n_c > 0 && n_i > 0) {
    const double total = static_cast<double>(n_c + n_i);
    w.w_c = total / (2.0 * static_cast<double>(n_c));
    w.w_i = total / (2.0 * static_cast<double>(n_i));
  }
  return w;
}

struct LossResult {
  double loss = 0.0;
  // d loss / d log pi_theta(target) per solution.
  std::vector<double> coefficients;
  // Token whose log-probability each coefficient refers to.
  std::vector<TokenId> targets;
  ClassWeights weights;
};

// l = 1/N sum_j w_j (r_s_j - r_v_j)^2, with N_c/N_i counted over the batch.
// The derivative w.r.t. log pi(zc) is 2 w_j beta_v (r_s_j - r_v_j) / N.
inline LossResult mse_loss_reweighted(std::span<const ScoredSolution> batch,
                                      const SelfRewardConfig& cfg,
                                      bool reweight = true) {
  if (batch.empty()) throw InputError("empty batch");
  std::size_t n_c = 0;
  for (const auto& s : batch) n_c += s.r_v == 1.0 ? 1 : 0;
  LossResult out;
  out.weights = reweight ? class_weights(n_c, batch.size() - n_c)
                         : ClassWeights{1.0, 1.0, n_c, batch.size() - n_c};
  const double n = static_cast<double>(batch.size());
  out.coefficients.reserve(batch.size());
  for (const auto& s : batch) {
    const double w = s.r_v == 1.0 ? out.weights.w_c : out.weights.w_i;
    const double diff = s.r_s - s.r_v;
    out.loss += w * diff * diff;
    out.coefficients.push_back(2.0 * w * cfg.beta_v * diff / n);
    out.targets.push_back(cfg.zc);
  }
  out.loss /= n;
  return out;
}

struct SftSample {
  double r_v = 0.0;
  double zc_logprob = 0.0;
  double zi_logprob = 0.0;
};

// Mean negative log-likelihood of zc on correct and of zi on incorrect
// solutions.
inline LossResult sft_loss(std::span<const SftSample> batch,
                           const SelfRewardConfig& cfg) {
  if (batch.empty()) throw InputError("empty batch");
  LossResult out;
  const double n = static_cast<double>(batch.size());
  for (const auto& s : batch) {
    const bool correct = s.r_v == 1.0;
    out.loss -= correct ? s.zc_logprob : s.zi_logprob;
    out.coefficients.push_back(-1.0 / n);
    out.targets.push_back(correct ? cfg.zc : cfg.zi);
  }
  out.loss /= n;
  return out;
}

// Z(x, y) = (1 - p_c - p_i) + (p_c + p_i) e^{1/beta_v}, returned as log Z.
inline double partition_log_z(double p_c, double p_i, double beta_v) {
  return std::log1p((p_c + p_i) * std::expm1(1.0 / beta_v));
}

struct PartitionAudit {
  double max_abs_log_z = 0.0;
  std::vector<double> log_z;
  double tolerance = 1e-4;
  bool passed = false;
};

inline PartitionAudit partition_audit(const PolicyParams& ref,
                                      std::span<const TokenSequence> contexts,
                                      const SelfRewardConfig& cfg,
                                      double tolerance = 1e-4) {
  PartitionAudit out;
  out.tolerance = tolerance;
  for (const auto& ctx : contexts) {
    const auto dist = next_log_distribution(ref, ctx);
    const double p_c = std::exp(dist[static_cast<std::size_t>(cfg.zc)]);
    const double p_i = std::exp(dist[static_cast<std::size_t>(cfg.zi)]);
    const double lz = partition_log_z(p_c, p_i, cfg.beta_v);
    out.log_z.push_back(lz);
    out.max_abs_log_z = std::max(out.max_abs_log_z, std::abs(lz));
  }
  out.passed = out.max_abs_log_z < tolerance;
  return out;
}

// beta_v * sum_{m=1..M} log pi(zc | x, y, zc^{m-1}) - M beta_v c_ref.
inline double multi_token_score(const PolicyParams& params, const Problem& p,
                                const Solution& sol,
                                const SelfRewardConfig& cfg, int M) {
  if (M < 1) throw InputError("M must be >= 1");
  if (sol.response.empty()) throw InputError("empty solution");
  TokenSequence ctx = concat(p.prompt, sol.response);
  if (ctx.size() + static_cast<std::size_t>(M - 1) >
      static_cast<std::size_t>(params.arch.max_seq_len))
    throw CapacityError("context plus M scoring tokens exceeds capacity");
  double sum = 0.0;
  for (int m = 0; m < M; ++m) {
    const double lp = next_logprob_of(params, ctx, cfg.zc);
    sum = m == 0 ? lp : sum + lp;
    ctx.push_back(cfg.zc);
  }
  return cfg.beta_v * (sum - static_cast<double>(M) * cfg.c_ref);
}

// Score read from the distribution at the EOS position itself (the one that
// produced EOS), so no extra token is evaluated.
inline double eos_position_score(const PolicyParams& params, const Problem& p,
                                 const Solution& sol,
                                 const SelfRewardConfig& cfg) {
  if (!sol.terminated || sol.response.empty() ||
      sol.response.back() != tok::kEos)
    throw InputError("eos_position_score needs a terminated solution");
  TokenSequence ctx = concat(p.prompt, sol.response);
  ctx.pop_back();
  return score_from_logprob(next_logprob_of(params, ctx, cfg.zc), cfg.c_ref_eos,
                            cfg.beta_v);
}

}  // namespace laser
