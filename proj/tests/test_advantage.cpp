#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "laser/advantage.hpp"
#include "laser/rng.hpp"

using namespace laser;

namespace {

// Mean and population std by a two-pass sum in long double.
std::vector<double> oracle_normalize(const std::vector<double>& r) {
  long double m = 0;
  for (double x : r) m += x;
  m /= r.size();
  long double v = 0;
  for (double x : r) v += (x - m) * (x - m);
  const long double sd = std::sqrt(v / r.size());
  std::vector<double> out(r.size(), 0.0);
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = static_cast<double>((r[i] - m) / sd);
  return out;
}

std::vector<double> random_group(Rng& rng, std::size_t k) {
  std::vector<double> g(k);
  for (auto& x : g) x = rng.below(3) ? 4.0 * rng.uniform() - 2.0 : static_cast<double>(rng.below(2));
  return g;
}

}  // namespace

TEST(Grpo, Examples) {
  const std::vector<double> a = {1, 0, 1, 0};
  EXPECT_EQ(grpo_advantages(a), (std::vector<double>{1, -1, 1, -1}));
  const std::vector<double> b = {1, 1, 1, 1};
  EXPECT_EQ(grpo_advantages(b), (std::vector<double>{0, 0, 0, 0}));
  const std::vector<double> c = {1, 0, 0, 0};
  const auto adv = grpo_advantages(c);
  EXPECT_NEAR(adv[0], 1.732, 1e-3);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(adv[i], -0.577, 1e-3);
  EXPECT_NEAR(adv[0], std::sqrt(3.0), 1e-12);
}

TEST(Grpo, RejectsSingleton) {
  const std::vector<double> one = {1.0};
  EXPECT_THROW(grpo_advantages(one), InputError);
}

TEST(Grpo, MatchesOracleAndZeroMean) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto g = random_group(rng, 2 + rng.below(15));
    const auto adv = grpo_advantages(g);
    const auto want = oracle_normalize(g);
    double sum = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      EXPECT_NEAR(adv[k], want[k], 1e-9);
      sum += adv[k];
    }
    EXPECT_NEAR(sum, 0.0, 1e-9);
  }
}

TEST(Grpo, ShiftAndScaleInvariant) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    auto g = random_group(rng, 2 + rng.below(15));
    const auto base = grpo_advantages(g);
    const double shift = 10.0 * rng.uniform() - 5.0;
    const double scale = 0.01 + 10.0 * rng.uniform();
    auto shifted = g, scaled = g;
    for (auto& x : shifted) x += shift;
    for (auto& x : scaled) x *= scale;
    const auto a1 = grpo_advantages(shifted);
    const auto a2 = grpo_advantages(scaled);
    for (std::size_t k = 0; k < g.size(); ++k) {
      EXPECT_NEAR(a1[k], base[k], 1e-9);
      EXPECT_NEAR(a2[k], base[k], 1e-9);
    }
  }
}

TEST(Grpo, NearlyEqualGroupIsDegenerate) {
  const std::vector<double> g = {0.5, 0.5 + 1e-12, 0.5};
  for (double a : grpo_advantages(g)) EXPECT_EQ(a, 0.0);
}

TEST(Integrated, TauZeroIsGrpoBitwise) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto rv = random_group(rng, 8), rs = random_group(rng, 8);
    const auto set = integrated_advantages(rv, rs, 0.0);
    EXPECT_EQ(set.advantages, grpo_advantages(rv));
    EXPECT_EQ(set.tau_effective, 0.0);
  }
}

TEST(Integrated, SigmaFilterDropsTau) {
  const std::vector<double> rv = {1, 0, 1, 0};
  const std::vector<double> rs = {0.55, 0.45, 0.55, 0.45};  // std 0.05
  const auto set = integrated_advantages(rv, rs, 0.1, 0.1);
  EXPECT_TRUE(set.sigma_filtered);
  EXPECT_EQ(set.tau_effective, 0.0);
  EXPECT_EQ(set.advantages, grpo_advantages(rv));
  EXPECT_NEAR(set.std_rs, 0.05, 1e-15);
}

TEST(Integrated, TwoSampleExample) {
  const std::vector<double> rv = {1, 0}, rs = {0.9, 0.2};
  const auto set = integrated_advantages(rv, rs, 0.1);
  EXPECT_EQ(set.tau_effective, 0.1);
  EXPECT_NEAR(set.advantages[0], 1.0, 1e-12);
  EXPECT_NEAR(set.advantages[1], -1.0, 1e-12);
}

TEST(Integrated, DirectEvaluationAndConvexity) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.below(10);
    const auto rv = random_group(rng, k), rs = random_group(rng, k);
    const double tau = rng.uniform();
    const auto set = integrated_advantages(rv, rs, tau, 0.1);
    const auto nv = oracle_normalize(rv), ns = oracle_normalize(rs);
    long double m = 0, v = 0;
    for (double x : rs) m += x;
    m /= k;
    for (double x : rs) v += (x - m) * (x - m);
    const bool filtered = std::sqrt(v / k) < 0.1;
    EXPECT_EQ(set.sigma_filtered, filtered);
    const double te = filtered ? 0.0 : tau;
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_NEAR(set.advantages[j], (1 - te) * nv[j] + te * ns[j], 1e-9);
      if (!filtered) {
        EXPECT_GE(set.advantages[j], std::min(nv[j], ns[j]) - 1e-9);
        EXPECT_LE(set.advantages[j], std::max(nv[j], ns[j]) + 1e-9);
      }
    }
  }
}

TEST(Integrated, LengthMismatch) {
  const std::vector<double> a = {1, 0}, b = {1, 0, 1};
  EXPECT_THROW(integrated_advantages(a, b, 0.1), InputError);
}
