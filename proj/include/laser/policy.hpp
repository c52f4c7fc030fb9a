#pragma once

// Compact autoregressive policy with exact reverse-mode gradients.
//
// The next-token distribution after position t is computed from the
// embeddings of the last `context_window` tokens seq[t-W+1..t] (zero vectors
// for slots before the start), passed through one tanh hidden layer and a
// linear output layer with per-token bias:
//
//   x = [emb(seq[t-W+1]); ...; emb(seq[t])]
//   h = tanh(W1 x + b1)
//   log p(. | seq[0..t]) = log_softmax(W2 h + b2)
//
// Parameters live in one flat vector, laid out as
// [embedding V*E | W1 H*(W*E) | b1 H | W2 V*H | b2 V], all row-major.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "laser/errors.hpp"
#include "laser/rng.hpp"
#include "laser/task.hpp"
#include "laser/vocab.hpp"

namespace laser {

struct Arch {
  int vocab_size = Vocab::kSize;
  int embed_dim = 16;
  int context_window = 8;
  int hidden_dim = 64;
  // Longest token sequence (prompt, response and any appended scoring token)
  // the policy accepts.
  int max_seq_len = 32;

  int input_dim() const { return context_window * embed_dim; }

  std::size_t param_count() const {
    const auto V = static_cast<std::size_t>(vocab_size);
    const auto E = static_cast<std::size_t>(embed_dim);
    const auto H = static_cast<std::size_t>(hidden_dim);
    const auto D = static_cast<std::size_t>(input_dim());
    return V * E + H * D + H + V * H + V;
  }

  bool operator==(const Arch&) const = default;
};

struct ParamLayout {
  std::size_t embed = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;

  explicit ParamLayout(const Arch& a) {
    const auto V = static_cast<std::size_t>(a.vocab_size);
    const auto E = static_cast<std::size_t>(a.embed_dim);
    const auto H = static_cast<std::size_t>(a.hidden_dim);
    const auto D = static_cast<std::size_t>(a.input_dim());
    embed = 0;
    w1 = embed + V * E;
    b1 = w1 + H * D;
    w2 = b1 + H;
    b2 = w2 + V * H;
    total = b2 + V;
  }
};

struct PolicyParams {
  Arch arch;
  std::vector<double> theta;
  std::uint64_t version = 0;

  ParamLayout layout() const { return ParamLayout(arch); }
};

struct InitOptions {
  // Output bias given to tokens the reference must assign (near) zero mass
  // after a finished response.
  double suppressed_bias = -25.0;
  std::vector<TokenId> suppressed = {tok::kZc, tok::kPad};
  double embed_scale = 1.0;
  double output_scale = 0.1;
};

inline PolicyParams init_policy(const Arch& arch, std::uint64_t seed,
                                const InitOptions& opts = {}) {
  if (arch.vocab_size < 1 || arch.embed_dim < 1 || arch.context_window < 1 ||
      arch.hidden_dim < 1 || arch.max_seq_len < 1)
    throw InputError("architecture dimensions must be positive");
  PolicyParams p{arch, std::vector<double>(arch.param_count(), 0.0), 0};
  const ParamLayout L(arch);
  Rng rng(derive_seed({seed, 0x1417}));
  const double w1_std = 1.0 / std::sqrt(static_cast<double>(arch.input_dim()));
  const double w2_std =
      opts.output_scale / std::sqrt(static_cast<double>(arch.hidden_dim));
  for (std::size_t i = L.embed; i < L.w1; ++i)
    p.theta[i] = opts.embed_scale * rng.normal();
  for (std::size_t i = L.w1; i < L.b1; ++i) p.theta[i] = w1_std * rng.normal();
  for (std::size_t i = L.w2; i < L.b2; ++i) p.theta[i] = w2_std * rng.normal();
  for (TokenId t : opts.suppressed) {
    if (t < 0 || t >= arch.vocab_size)
      throw InputError("suppressed token out of range");
    p.theta[L.b2 + static_cast<std::size_t>(t)] = opts.suppressed_bias;
  }
  return p;
}

// FNV-1a over the little-endian bytes of theta.
inline std::uint64_t checksum(std::span<const double> theta) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : theta) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    h = fnv1a(bytes, 8, h);
  }
  return h;
}

inline std::uint64_t checksum(const PolicyParams& p) { return checksum(p.theta); }

// Log-probabilities of the realized tokens seq[first_scored..], plus the full
// next-token log-distribution after every position when requested.
struct LogProbTrace {
  std::size_t first_scored = 1;
  std::vector<double> token_logprobs;
  // distributions[t] = log p(. | seq[0..t]); the last row is the distribution
  // after the whole sequence.
  std::vector<std::vector<double>> distributions;
  double total_logprob = 0.0;
};

namespace detail {

struct Workspace {
  std::vector<double> x, h, logp, dlogits, dh, dx;

  explicit Workspace(const Arch& a)
      : x(static_cast<std::size_t>(a.input_dim())),
        h(static_cast<std::size_t>(a.hidden_dim)),
        logp(static_cast<std::size_t>(a.vocab_size)),
        dlogits(static_cast<std::size_t>(a.vocab_size)),
        dh(static_cast<std::size_t>(a.hidden_dim)),
        dx(static_cast<std::size_t>(a.input_dim())) {}
};

inline void check_tokens(const Arch& a, std::span<const TokenId> seq) {
  if (seq.size() > static_cast<std::size_t>(a.max_seq_len))
    throw CapacityError("sequence of length " + std::to_string(seq.size()) +
                        " exceeds capacity " + std::to_string(a.max_seq_len));
  for (TokenId t : seq)
    if (t < 0 || t >= a.vocab_size)
      throw InputError("token id " + std::to_string(t) + " out of range");
}

inline void log_softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double z : v) s += std::exp(z - m);
  const double lse = m + std::log(s);
  for (double& z : v) z -= lse;
}

// Fills ws.x, ws.h and ws.logp for the distribution after seq[0..pos].
inline void forward_position(const PolicyParams& p, const ParamLayout& L,
                             std::span<const TokenId> seq, std::size_t pos,
                             Workspace& ws) {
  const Arch& a = p.arch;
  const auto E = static_cast<std::size_t>(a.embed_dim);
  const auto W = static_cast<std::size_t>(a.context_window);
  const auto H = static_cast<std::size_t>(a.hidden_dim);
  const auto V = static_cast<std::size_t>(a.vocab_size);
  const auto D = W * E;
  const double* th = p.theta.data();

  for (std::size_t j = 0; j < W; ++j) {
    const auto src = static_cast<std::ptrdiff_t>(pos) -
                     static_cast<std::ptrdiff_t>(W - 1) +
                     static_cast<std::ptrdiff_t>(j);
    double* slot = ws.x.data() + j * E;
    if (src < 0) {
      std::fill(slot, slot + E, 0.0);
    } else {
      const double* row =
          th + L.embed + static_cast<std::size_t>(seq[static_cast<std::size_t>(src)]) * E;
      std::copy(row, row + E, slot);
    }
  }
  for (std::size_t k = 0; k < H; ++k) {
    const double* w = th + L.w1 + k * D;
    double acc = th[L.b1 + k];
    for (std::size_t d = 0; d < D; ++d) acc += w[d] * ws.x[d];
    ws.h[k] = std::tanh(acc);
  }
  for (std::size_t v = 0; v < V; ++v) {
    const double* w = th + L.w2 + v * H;
    double acc = th[L.b2 + v];
    for (std::size_t k = 0; k < H; ++k) acc += w[k] * ws.h[k];
    ws.logp[v] = acc;
  }
  log_softmax_inplace(ws.logp);
}

// Adds coeff * d log p(target | seq[0..pos]) / d theta into grad. Expects ws
// to hold the forward pass for the same position.
inline void backward_position(const PolicyParams& p, const ParamLayout& L,
                              std::span<const TokenId> seq, std::size_t pos,
                              TokenId target, double coeff, Workspace& ws,
                              std::span<double> grad) {
  const Arch& a = p.arch;
  const auto E = static_cast<std::size_t>(a.embed_dim);
  const auto W = static_cast<std::size_t>(a.context_window);
  const auto H = static_cast<std::size_t>(a.hidden_dim);
  const auto V = static_cast<std::size_t>(a.vocab_size);
  const auto D = W * E;
  const double* th = p.theta.data();
  double* g = grad.data();

  for (std::size_t v = 0; v < V; ++v)
    ws.dlogits[v] = coeff * ((static_cast<TokenId>(v) == target ? 1.0 : 0.0) -
                             std::exp(ws.logp[v]));

  std::fill(ws.dh.begin(), ws.dh.end(), 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const double dl = ws.dlogits[v];
    g[L.b2 + v] += dl;
    double* gw = g + L.w2 + v * H;
    const double* w = th + L.w2 + v * H;
    for (std::size_t k = 0; k < H; ++k) {
      gw[k] += dl * ws.h[k];
      ws.dh[k] += dl * w[k];
    }
  }
  std::fill(ws.dx.begin(), ws.dx.end(), 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    const double da = ws.dh[k] * (1.0 - ws.h[k] * ws.h[k]);
    g[L.b1 + k] += da;
    double* gw = g + L.w1 + k * D;
    const double* w = th + L.w1 + k * D;
    for (std::size_t d = 0; d < D; ++d) {
      gw[d] += da * ws.x[d];
      ws.dx[d] += da * w[d];
    }
  }
  for (std::size_t j = 0; j < W; ++j) {
    const auto src = static_cast<std::ptrdiff_t>(pos) -
                     static_cast<std::ptrdiff_t>(W - 1) +
                     static_cast<std::ptrdiff_t>(j);
    if (src < 0) continue;
    double* row =
        g + L.embed + static_cast<std::size_t>(seq[static_cast<std::size_t>(src)]) * E;
    for (std::size_t e = 0; e < E; ++e) row[e] += ws.dx[j * E + e];
  }
}

}  // namespace detail

inline LogProbTrace forward_logprobs(const PolicyParams& params,
                                     std::span<const TokenId> seq,
                                     std::size_t first_scored = 1,
                                     bool keep_distributions = false) {
  detail::check_tokens(params.arch, seq);
  if (first_scored < 1) first_scored = 1;
  const ParamLayout L(params.arch);
  detail::Workspace ws(params.arch);
  LogProbTrace trace;
  trace.first_scored = first_scored;
  const std::size_t start = keep_distributions ? 0 : first_scored - 1;
  for (std::size_t pos = start; pos < seq.size(); ++pos) {
    detail::forward_position(params, L, seq, pos, ws);
    if (keep_distributions) trace.distributions.push_back(ws.logp);
    if (pos + 1 < seq.size() && pos + 1 >= first_scored) {
      const double lp = ws.logp[static_cast<std::size_t>(seq[pos + 1])];
      trace.token_logprobs.push_back(lp);
      trace.total_logprob += lp;
    }
  }
  return trace;
}

// Log-distribution of the token that would follow ctx.
inline std::vector<double> next_log_distribution(const PolicyParams& params,
                                                 std::span<const TokenId> ctx) {
  if (ctx.empty()) throw InputError("empty context");
  detail::check_tokens(params.arch, ctx);
  const ParamLayout L(params.arch);
  detail::Workspace ws(params.arch);
  detail::forward_position(params, L, ctx, ctx.size() - 1, ws);
  return ws.logp;
}

inline double next_logprob_of(const PolicyParams& params,
                              std::span<const TokenId> ctx, TokenId token) {
  if (token < 0 || token >= params.arch.vocab_size)
    throw InputError("token id " + std::to_string(token) + " out of range");
  return next_log_distribution(params, ctx)[static_cast<std::size_t>(token)];
}

struct Sample {
  Solution solution;
  // Log-probs of the response tokens given everything before them.
  std::vector<double> token_logprobs;
  double total_logprob = 0.0;
};

// Ancestral sampling at temperature 1 until EOS or max_len tokens.
inline Sample sample_sequence(const PolicyParams& params,
                              std::span<const TokenId> prompt, int max_len,
                              Rng& rng) {
  if (max_len < 1) throw InputError("max_len must be at least 1");
  if (prompt.empty()) throw InputError("empty prompt");
  TokenSequence seq(prompt.begin(), prompt.end());
  detail::check_tokens(params.arch, seq);
  if (seq.size() + static_cast<std::size_t>(max_len) >
      static_cast<std::size_t>(params.arch.max_seq_len))
    throw CapacityError("prompt plus max_len exceeds capacity");
  const ParamLayout L(params.arch);
  detail::Workspace ws(params.arch);
  Sample out;
  TokenSequence response;
  for (int i = 0; i < max_len; ++i) {
    detail::forward_position(params, L, seq, seq.size() - 1, ws);
    const double u = rng.uniform();
    double cum = 0.0;
    TokenId chosen = -1;
    for (std::size_t v = 0; v < ws.logp.size(); ++v) {
      const double pv = std::exp(ws.logp[v]);
      if (pv <= 0.0) continue;
      chosen = static_cast<TokenId>(v);
      cum += pv;
      if (u < cum) break;
    }
    seq.push_back(chosen);
    response.push_back(chosen);
    const double lp = ws.logp[static_cast<std::size_t>(chosen)];
    out.token_logprobs.push_back(lp);
    out.total_logprob += lp;
    if (chosen == tok::kEos) break;
  }
  out.solution = make_solution(std::move(response));
  return out;
}

// Adds the gradient of sum_t coeffs[t] * log p(seq[t+1] | seq[0..t]) into
// grad. coeffs has one entry per predicted token (seq.size() - 1); zero
// entries are skipped entirely.
inline void accumulate_gradient(const PolicyParams& params,
                                std::span<const TokenId> seq,
                                std::span<const double> coeffs,
                                std::span<double> grad) {
  detail::check_tokens(params.arch, seq);
  if (seq.empty() || coeffs.size() != seq.size() - 1)
    throw InputError("coefficient count " + std::to_string(coeffs.size()) +
                     " does not match sequence of length " +
                     std::to_string(seq.size()));
  if (grad.size() != params.theta.size())
    throw InputError("gradient buffer has wrong size");
  const ParamLayout L(params.arch);
  detail::Workspace ws(params.arch);
  for (std::size_t t = 0; t < coeffs.size(); ++t) {
    const double c = coeffs[t];
    if (!std::isfinite(c)) throw InputError("non-finite coefficient");
    if (c == 0.0) continue;
    detail::forward_position(params, L, seq, t, ws);
    detail::backward_position(params, L, seq, t, seq[t + 1], c, ws, grad);
  }
}

inline std::vector<double> backward(
    const PolicyParams& params, std::span<const TokenSequence> seqs,
    std::span<const std::vector<double>> coeffs) {
  if (seqs.size() != coeffs.size())
    throw InputError("batch has " + std::to_string(seqs.size()) +
                     " sequences but " + std::to_string(coeffs.size()) +
                     " coefficient rows");
  std::vector<double> grad(params.theta.size(), 0.0);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    accumulate_gradient(params, seqs[i], coeffs[i], grad);
  return grad;
}

// Value of sum_i sum_t coeffs[i][t] * log p(seqs[i][t+1] | seqs[i][0..t]).
inline double weighted_loglik(const PolicyParams& params,
                              std::span<const TokenSequence> seqs,
                              std::span<const std::vector<double>> coeffs) {
  if (seqs.size() != coeffs.size()) throw InputError("batch shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto trace = forward_logprobs(params, seqs[i], 1);
    if (coeffs[i].size() != trace.token_logprobs.size())
      throw InputError("batch shape mismatch");
    for (std::size_t t = 0; t < coeffs[i].size(); ++t)
      if (coeffs[i][t] != 0.0) total += coeffs[i][t] * trace.token_logprobs[t];
  }
  return total;
}

}  // namespace laser
