#pragma once

// Group-relative advantages and the verifier/self-reward integration.

#include <cmath>
#include <span>
#include <vector>

#include "laser/errors.hpp"

namespace laser {

// Groups whose (population) std falls below this are treated as all-equal.
inline constexpr double kDegenerateStd = 1e-8;

struct GroupStats {
  double mean = 0.0;
  double std = 0.0;
};

inline GroupStats population_stats(std::span<const double> xs) {
  GroupStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

inline std::vector<double> grpo_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw InputError("group needs at least 2 rewards");
  const GroupStats s = population_stats(rewards);
  std::vector<double> adv(rewards.size(), 0.0);
  if (s.std < kDegenerateStd) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i)
    adv[i] = (rewards[i] - s.mean) / s.std;
  return adv;
}

struct AdvantageSet {
  std::vector<double> advantages;
  double mean_rv = 0.0, std_rv = 0.0, mean_rs = 0.0, std_rs = 0.0;
  double tau_effective = 0.0;
  // The self-reward spread was below the threshold, so tau was dropped.
  bool sigma_filtered = false;
};

// (1 - tau) * norm(rv) + tau * norm(rs), with tau forced to 0 when the
// self-reward std of the group is below sigma_threshold.
inline AdvantageSet integrated_advantages(std::span<const double> rv,
                                          std::span<const double> rs,
                                          double tau,
                                          double sigma_threshold = 0.1) {
  if (rv.size() != rs.size())
    throw InputError("verifier and self-reward lists differ in length");
  AdvantageSet out;
  const GroupStats srv = population_stats(rv);
  const GroupStats srs = population_stats(rs);
  out.mean_rv = srv.mean;
  out.std_rv = srv.std;
  out.mean_rs = srs.mean;
  out.std_rs = srs.std;
  out.advantages = grpo_advantages(rv);
  out.sigma_filtered = srs.std < sigma_threshold;
  out.tau_effective = out.sigma_filtered ? 0.0 : tau;
  if (out.tau_effective == 0.0) return out;
  const std::vector<double> norm_rs = grpo_advantages(rs);
  for (std::size_t i = 0; i < rv.size(); ++i)
    out.advantages[i] = (1.0 - out.tau_effective) * out.advantages[i] +
                        out.tau_effective * norm_rs[i];
  return out;
}

}  // namespace laser
