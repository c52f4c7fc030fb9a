#include <gtest/gtest.h>

#include <cmath>

#include "laser/diagnostics.hpp"
#include "laser/trainer.hpp"

using namespace laser;

namespace {

Attempt attempt_of(int a, int b, TokenSequence response) {
  return {make_problem(a, b, 0), make_solution(std::move(response))};
}

}  // namespace

TEST(ImplicitReward, ZeroWhenPolicyEqualsReference) {
  const PolicyParams p = init_policy(Arch{}, 1);
  for (const auto& a : sample_attempts(p, 30, 8, 2)) {
    const auto c = cumulative_implicit_reward(p, p, a.problem, a.solution, 0.1);
    EXPECT_EQ(c.cumulative.size(), a.solution.response.size());
    for (double v : c.cumulative) EXPECT_EQ(v, 0.0);
  }
}

TEST(ImplicitReward, TelescopesToTotalLogRatio) {
  const PolicyParams theta = init_policy(Arch{}, 1);
  const PolicyParams ref = init_policy(Arch{}, 2);
  const double beta = 0.3;
  for (const auto& a : sample_attempts(theta, 40, 8, 3)) {
    const auto c = cumulative_implicit_reward(theta, ref, a.problem, a.solution, beta);
    const TokenSequence seq = a.context();
    const auto lt = forward_logprobs(theta, seq, 5);
    const auto lr = forward_logprobs(ref, seq, 5);
    EXPECT_NEAR(c.final_value, beta * (lt.total_logprob - lr.total_logprob), 1e-10);
    EXPECT_EQ(c.length, a.solution.response.size());
    EXPECT_EQ(c.r_v, verify(a.problem, a.solution));
    for (std::size_t t = 0; t < c.cumulative.size(); ++t) {
      const double prev = t ? c.cumulative[t - 1] : 0.0;
      const TokenSequence prefix(seq.begin(), seq.begin() + 5 + static_cast<long>(t));
      const double step = next_logprob_of(theta, prefix, seq[5 + t]) -
                          next_logprob_of(ref, prefix, seq[5 + t]);
      EXPECT_NEAR(c.cumulative[t] - prev, beta * step, 1e-10);
    }
  }
}

TEST(ImplicitReward, LengthBiasOnTrainedPolicy) {
  LaserConfig cfg;
  cfg.mode = Mode::kGrpo;
  cfg.steps = 200;
  cfg.warmup_reasoning = cfg.warmup_self_reward = 0;
  const auto res = run(cfg);
  const PolicyParams ref = initial_policy(cfg);
  std::vector<double> len, fin;
  for (const auto& a : sample_attempts(res.state.params, 64, 8, 9)) {
    const auto c = cumulative_implicit_reward(res.state.params, ref, a.problem, a.solution, 0.1);
    len.push_back(static_cast<double>(c.length));
    fin.push_back(c.final_value);
  }
  EXPECT_GT(pearson(len, fin), 0.0);
}

TEST(RefStats, SuppressedTokenFarBelowDigits) {
  const PolicyParams ref = init_policy(Arch{}, 4);
  const auto pairs = sample_attempts(ref, 300, 8, 1);
  const auto zc = ref_logprob_stats(ref, tok::kZc, pairs);
  const auto digit = ref_logprob_stats(ref, tok::digit(3), pairs);
  EXPECT_GT(zc.mean, 25.0);
  EXPECT_LT(zc.mean, 25.0 + std::log(16.0) + 1.0);
  EXPECT_LT(zc.std, 0.5);
  EXPECT_LT(digit.mean, 10.0);
  EXPECT_GT(zc.mean - digit.mean, 15.0);
}

TEST(RefStats, AgreesWithCrefUpToSign) {
  const PolicyParams ref = init_policy(Arch{}, 4);
  const auto pairs = sample_attempts(ref, 100, 8, 1);
  const auto s = ref_logprob_stats(ref, tok::kZc, pairs);
  const auto c = estimate_cref(ref, pairs);
  EXPECT_EQ(s.mean + c.mean, 0.0);
  EXPECT_EQ(s.std, c.std);
}

TEST(RefStats, IdenticalPairsAndTooFew) {
  const PolicyParams ref = init_policy(Arch{}, 4);
  const std::vector<Attempt> same = {attempt_of(2, 2, {4, tok::kEos}),
                                     attempt_of(2, 2, {4, tok::kEos})};
  EXPECT_EQ(ref_logprob_stats(ref, tok::kZc, same).std, 0.0);
  const std::vector<Attempt> one = {same[0]};
  EXPECT_THROW(ref_logprob_stats(ref, tok::kZc, one), InputError);
}

TEST(Pearson, KnownValues) {
  const std::vector<double> x = {1, 2, 3, 4}, y = {2, 4, 6, 8}, z = {4, 3, 2, 1};
  EXPECT_NEAR(pearson(x, y), 1.0, 1e-15);
  EXPECT_NEAR(pearson(x, z), -1.0, 1e-15);
  const std::vector<double> flat = {1, 1, 1, 1};
  EXPECT_EQ(pearson(x, flat), 0.0);
  EXPECT_THROW(pearson(x, std::vector<double>{1, 2}), InputError);
}
