#pragma once

// Implicit-reward length bias and reference log-prob statistics.

#include <cmath>
#include <span>
#include <vector>

#include "laser/errors.hpp"
#include "laser/policy.hpp"
#include "laser/selfreward.hpp"

namespace laser {

struct ImplicitRewardCurve {
  // cumulative[t] = beta * sum_{i<=t} [log pi_theta(y_i|.) - log pi_ref(y_i|.)]
  std::vector<double> cumulative;
  double final_value = 0.0;
  std::size_t length = 0;
  double r_v = 0.0;
};

inline ImplicitRewardCurve cumulative_implicit_reward(
    const PolicyParams& theta, const PolicyParams& ref, const Problem& p,
    const Solution& sol, double beta) {
  const TokenSequence seq = concat(p.prompt, sol.response);
  const auto lt = forward_logprobs(theta, seq, p.prompt.size());
  const auto lr = forward_logprobs(ref, seq, p.prompt.size());
  ImplicitRewardCurve c;
  c.length = sol.response.size();
  c.r_v = verify(p, sol);
  double acc = 0.0;
  for (std::size_t t = 0; t < lt.token_logprobs.size(); ++t) {
    acc += beta * (lt.token_logprobs[t] - lr.token_logprobs[t]);
    c.cumulative.push_back(acc);
  }
  c.final_value = acc;
  return c;
}

struct NegLogProbStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

// Mean and population std of -log pi_ref(token | x, y).
inline NegLogProbStats ref_logprob_stats(const PolicyParams& ref, TokenId token,
                                         std::span<const Attempt> pairs) {
  if (pairs.size() < 2) throw InputError("ref_logprob_stats needs >= 2 pairs");
  std::vector<TokenSequence> contexts;
  for (const auto& a : pairs) contexts.push_back(a.context());
  const CrefEstimate e = logprob_stats(ref, contexts, token);
  return {-e.mean, e.std, e.n};
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InputError("pearson needs two equal-length series of >= 2 values");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace laser
