#pragma once

// Test-time use of self-rewarding scores: thresholded self-verification,
// verification F1 and (weighted) majority voting.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laser/errors.hpp"
#include "laser/selfreward.hpp"
#include "laser/task.hpp"

namespace laser {

enum class Verdict { kCorrect, kIncorrect };

inline constexpr double kVerifyThreshold = 0.5;

// Strictly above 0.5 is correct; a score of exactly 0.5 is incorrect.
inline Verdict self_verify(double r_s) {
  if (!std::isfinite(r_s)) throw InputError("non-finite self-reward score");
  return r_s > kVerifyThreshold ? Verdict::kCorrect : Verdict::kIncorrect;
}

struct VerificationF1 {
  // Absent when the class has no members.
  std::optional<double> acc_correct;
  std::optional<double> acc_incorrect;
  std::optional<double> f1;
  double overall_acc = 0.0;
  std::size_t n_correct = 0;
  std::size_t n_incorrect = 0;
};

inline double harmonic_f1(double a, double b) {
  return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b);
}

inline VerificationF1 verification_f1(std::span<const ScoredSolution> scored) {
  VerificationF1 out;
  std::size_t hit_c = 0, hit_i = 0;
  for (const auto& s : scored) {
    const bool says_correct = self_verify(s.r_s) == Verdict::kCorrect;
    if (s.r_v == 1.0) {
      ++out.n_correct;
      hit_c += says_correct ? 1 : 0;
    } else {
      ++out.n_incorrect;
      hit_i += says_correct ? 0 : 1;
    }
  }
  if (out.n_correct)
    out.acc_correct = static_cast<double>(hit_c) / static_cast<double>(out.n_correct);
  if (out.n_incorrect)
    out.acc_incorrect =
        static_cast<double>(hit_i) / static_cast<double>(out.n_incorrect);
  if (out.acc_correct && out.acc_incorrect)
    out.f1 = harmonic_f1(*out.acc_correct, *out.acc_incorrect);
  if (!scored.empty())
    out.overall_acc = static_cast<double>(hit_c + hit_i) /
                      static_cast<double>(scored.size());
  return out;
}

struct VoteBallot {
  std::string answer;
  int count = 0;
  double weight_sum = 0.0;
};

struct VoteInput {
  std::optional<std::string> answer;
  double weight = 1.0;
};

// Ballots keyed by normalized answer, sorted lexicographically; absent
// answers are dropped.
inline std::vector<VoteBallot> tally(std::span<const VoteInput> votes) {
  std::map<std::string, VoteBallot> by_answer;
  for (const auto& v : votes) {
    if (!v.answer) continue;
    const std::string key = normalize_answer(*v.answer);
    auto& b = by_answer[key];
    b.answer = key;
    b.count += 1;
    b.weight_sum += v.weight;
  }
  std::vector<VoteBallot> out;
  for (auto& [_, b] : by_answer) out.push_back(b);
  return out;
}

// Most frequent answer; ties go to the larger weight sum, then the
// lexicographically smallest answer.
inline std::optional<std::string> majority_vote(std::span<const VoteInput> votes) {
  const auto ballots = tally(votes);
  if (ballots.empty()) return std::nullopt;
  const VoteBallot* best = &ballots.front();
  for (const auto& b : ballots) {
    if (b.count > best->count ||
        (b.count == best->count && b.weight_sum > best->weight_sum))
      best = &b;
  }
  return best->answer;
}

inline double vote_weight(double r_s) { return std::clamp(r_s, 0.0, 1.0); }

// Each vote weighs clamp(r_s, 0, 1); ties go to the larger count, then the
// lexicographically smallest answer.
inline std::optional<std::string> weighted_majority_vote(
    std::span<const VoteInput> scored_votes) {
  std::vector<VoteInput> weighted(scored_votes.begin(), scored_votes.end());
  for (auto& v : weighted) v.weight = vote_weight(v.weight);
  const auto ballots = tally(weighted);
  if (ballots.empty()) return std::nullopt;
  const VoteBallot* best = &ballots.front();
  for (const auto& b : ballots) {
    if (b.weight_sum > best->weight_sum ||
        (b.weight_sum == best->weight_sum && b.count > best->count))
      best = &b;
  }
  return best->answer;
}

}  // namespace laser
