#pragma once

// Maximum-likelihood pretraining that turns a fresh initialization into a
// weak "base" policy: it learns the answer format from a corpus where only a
// fraction of the answers are right and the rest are uniform over 0..18.
// Reinforcement learning then starts from partial competence.

#include <cstdint>
#include <vector>

#include "laser/policy.hpp"
#include "laser/rng.hpp"
#include "laser/task.hpp"

namespace laser {

struct BaseCorpusOptions {
  int steps = 1000;
  int batch = 64;
  double lr = 1.0;
  // Probability that a corpus answer is the true sum.
  double accuracy = 0.3;
  std::uint64_t seed = 0;
};

inline constexpr int kMaxSum = 18;

// Corpus line for the problem drawn from `rng`.
inline TokenSequence base_corpus_line(Rng& rng, double accuracy) {
  const Problem p = gen_problem(rng.next());
  int answer = static_cast<int>(rng.below(kMaxSum + 1));
  if (rng.uniform() < accuracy) answer = p.lhs() + p.rhs();
  TokenSequence seq = p.prompt;
  if (answer >= 10) seq.push_back(tok::digit(answer / 10));
  seq.push_back(tok::digit(answer % 10));
  seq.push_back(tok::kEos);
  return seq;
}

// Plain SGD on the mean log-likelihood of the answer tokens. The position
// after EOS is never a target.
inline void pretrain_base(PolicyParams& params, const BaseCorpusOptions& opts) {
  if (opts.steps <= 0) return;
  if (opts.batch < 1) throw InputError("base batch must be >= 1");
  Rng rng(derive_seed({opts.seed, 0xba5e}));
  const double w = 1.0 / static_cast<double>(opts.batch);
  constexpr std::size_t kPromptLen = 5;
  for (int s = 0; s < opts.steps; ++s) {
    std::vector<TokenSequence> seqs;
    std::vector<std::vector<double>> coeffs;
    for (int b = 0; b < opts.batch; ++b) {
      TokenSequence seq = base_corpus_line(rng, opts.accuracy);
      std::vector<double> c(seq.size() - 1, 0.0);
      for (std::size_t t = kPromptLen - 1; t < c.size(); ++t) c[t] = w;
      seqs.push_back(std::move(seq));
      coeffs.push_back(std::move(c));
    }
    const auto g = backward(params, seqs, coeffs);
    for (std::size_t k = 0; k < g.size(); ++k) params.theta[k] += opts.lr * g[k];
  }
}

}  // namespace laser
