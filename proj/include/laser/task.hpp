#pragma once

// Single-digit addition problems and the rule-based verifier.
//
// A problem is the prompt "BOS d1 + d2 =" and its ground truth is the decimal
// rendering of d1 + d2. A response is everything the policy emits after the
// prompt; it terminates at the first EOS.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "laser/errors.hpp"
#include "laser/rng.hpp"
#include "laser/vocab.hpp"

namespace laser {

struct Problem {
  TokenSequence prompt;
  std::string gt_answer;
  std::uint64_t id = 0;

  int lhs() const { return prompt.at(1); }
  int rhs() const { return prompt.at(3); }

  bool operator==(const Problem&) const = default;
};

struct Solution {
  TokenSequence response;
  std::optional<std::string> extracted_answer;
  bool terminated = false;
};

inline Problem make_problem(int d1, int d2, std::uint64_t id) {
  if (d1 < 0 || d1 > 9 || d2 < 0 || d2 > 9)
    throw InputError("operands must be single digits");
  return Problem{{tok::kBos, tok::digit(d1), tok::kPlus, tok::digit(d2),
                  tok::kEquals},
                 std::to_string(d1 + d2),
                 id};
}

// Deterministic seed -> (d1, d2), each uniform over 0..9.
inline Problem gen_problem(std::uint64_t seed) {
  const std::uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
  const int d1 = static_cast<int>(h % 10);
  const int d2 = static_cast<int>((h / 10) % 10);
  return make_problem(d1, d2, seed);
}

// Digits of the response up to the first EOS. Absent when there is no EOS or
// no digit precedes it.
inline std::optional<std::string> extract_answer(
    std::span<const TokenId> response) {
  const auto eos = std::find(response.begin(), response.end(), tok::kEos);
  if (eos == response.end()) return std::nullopt;
  std::string digits;
  for (auto it = response.begin(); it != eos; ++it)
    if (tok::is_digit(*it)) digits += static_cast<char>('0' + *it);
  if (digits.empty()) return std::nullopt;
  return digits;
}

inline std::optional<std::string> extract_answer(const Solution& sol) {
  return extract_answer(sol.response);
}

// Builds a Solution from raw response tokens. The response is cut after the
// first EOS, if any.
inline Solution make_solution(TokenSequence response) {
  const auto eos = std::find(response.begin(), response.end(), tok::kEos);
  Solution sol;
  sol.terminated = eos != response.end();
  if (sol.terminated) response.erase(eos + 1, response.end());
  sol.response = std::move(response);
  sol.extracted_answer = extract_answer(sol.response);
  return sol;
}

// "007" -> "7", "000" -> "0".
inline std::string normalize_answer(std::string_view digits) {
  const auto first = digits.find_first_not_of('0');
  if (first == std::string_view::npos) return digits.empty() ? "" : "0";
  return std::string(digits.substr(first));
}

inline double verify(const Problem& p, const Solution& sol) {
  const auto answer = extract_answer(sol);
  if (!answer) return 0.0;
  return normalize_answer(*answer) == normalize_answer(p.gt_answer) ? 1.0
                                                                    : 0.0;
}

// Ground-truth digits followed by EOS.
inline Solution perfect_solution(const Problem& p) {
  TokenSequence response;
  for (char c : p.gt_answer) response.push_back(tok::digit(c - '0'));
  response.push_back(tok::kEos);
  return make_solution(std::move(response));
}

// A problem together with one response to it.
struct Attempt {
  Problem problem;
  Solution solution;

  // prompt followed by response: the context after the last generated token.
  TokenSequence context() const {
    return concat(problem.prompt, solution.response);
  }
};

inline nlohmann::json problem_to_json(const Problem& p) {
  return {{"id", p.id}, {"prompt_ids", p.prompt}, {"gt", p.gt_answer}};
}

inline Problem problem_from_json(const nlohmann::json& j) {
  Problem p;
  p.id = j.at("id").get<std::uint64_t>();
  p.prompt = j.at("prompt_ids").get<TokenSequence>();
  p.gt_answer = j.at("gt").get<std::string>();
  if (p.prompt.size() != 5 || p.prompt[0] != tok::kBos ||
      !tok::is_digit(p.prompt[1]) || p.prompt[2] != tok::kPlus ||
      !tok::is_digit(p.prompt[3]) || p.prompt[4] != tok::kEquals)
    throw InputError("malformed prompt_ids");
  return p;
}

}  // namespace laser
