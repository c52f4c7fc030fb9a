#pragma once

// Central finite-difference check of an analytic gradient.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "laser/policy.hpp"

namespace laser {

struct GradCheckOptions {
  // Coordinates probed; all of them when probe_count >= parameter count.
  std::size_t probe_count = 64;
  double step = 1e-5;
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
  // Denominator floor for coordinates whose gradient is ~0.
  double abs_floor = 1e-5;
  // Test hook: doubles the analytic gradient at this coordinate before the
  // comparison.
  std::optional<std::size_t> corrupt_index;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probed = 0;
  // max_rel_err reached the tolerance.
  bool degraded = false;
};

inline double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// objective: double(const PolicyParams&). analytic: gradient at params.
template <typename Objective>
GradCheckReport grad_check(const PolicyParams& params,
                           std::vector<double> analytic, Objective&& objective,
                           const GradCheckOptions& opts = {}) {
  const std::size_t n = params.theta.size();
  if (analytic.size() != n) throw InputError("gradient has wrong size");
  if (opts.probe_count < 1) throw InputError("probe_count must be >= 1");
  if (opts.corrupt_index && *opts.corrupt_index < n)
    analytic[*opts.corrupt_index] *= 2.0;

  std::vector<std::size_t> probes(n);
  std::iota(probes.begin(), probes.end(), std::size_t{0});
  if (opts.probe_count < n) {
    // Partial Fisher-Yates.
    Rng rng(derive_seed({opts.seed, 0x6c}));
    for (std::size_t i = 0; i < opts.probe_count; ++i) {
      const std::size_t j = i + rng.below(n - i);
      std::swap(probes[i], probes[j]);
    }
    probes.resize(opts.probe_count);
  }

  GradCheckReport report;
  PolicyParams probe = params;
  for (std::size_t idx : probes) {
    const double orig = probe.theta[idx];
    probe.theta[idx] = orig + opts.step;
    const double fp = objective(probe);
    probe.theta[idx] = orig - opts.step;
    const double fm = objective(probe);
    probe.theta[idx] = orig;
    const double numeric = (fp - fm) / (2.0 * opts.step);
    const double err = relative_error(analytic[idx], numeric, opts.abs_floor);
    ++report.probed;
    if (!(err <= report.max_rel_err)) {
      report.max_rel_err = err;
      report.worst_index = idx;
      report.worst_analytic = analytic[idx];
      report.worst_numeric = numeric;
    }
  }
  report.degraded = !(report.max_rel_err < opts.tolerance);
  return report;
}

// Fixed probe batch used when no objective is supplied: random responses to
// random problems with random per-token coefficients.
struct ProbeBatch {
  std::vector<TokenSequence> seqs;
  std::vector<std::vector<double>> coeffs;
};

inline ProbeBatch make_probe_batch(const Arch& arch, std::uint64_t seed,
                                   std::size_t n_seqs = 4) {
  Rng rng(derive_seed({seed, 0x9b}));
  ProbeBatch b;
  for (std::size_t i = 0; i < n_seqs; ++i) {
    const Problem p = gen_problem(rng.next());
    TokenSequence seq = p.prompt;
    const std::size_t room =
        static_cast<std::size_t>(arch.max_seq_len) - seq.size();
    const std::size_t len = 1 + rng.below(std::min<std::size_t>(room, 6));
    for (std::size_t t = 0; t < len; ++t)
      seq.push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(arch.vocab_size))));
    std::vector<double> c(seq.size() - 1, 0.0);
    for (std::size_t t = p.prompt.size() - 1; t < c.size(); ++t)
      c[t] = 2.0 * rng.uniform() - 1.0;
    b.seqs.push_back(std::move(seq));
    b.coeffs.push_back(std::move(c));
  }
  return b;
}

// Checks policy backward against central differences on the weighted
// log-likelihood of a probe batch.
inline GradCheckReport grad_check(const PolicyParams& params,
                                  const GradCheckOptions& opts) {
  const ProbeBatch batch = make_probe_batch(params.arch, opts.seed);
  auto analytic = backward(params, batch.seqs, batch.coeffs);
  return grad_check(
      params, std::move(analytic),
      [&](const PolicyParams& p) {
        return weighted_loglik(p, batch.seqs, batch.coeffs);
      },
      opts);
}

inline GradCheckReport grad_check(const PolicyParams& params,
                                  std::size_t probe_count, double step) {
  GradCheckOptions opts;
  opts.probe_count = probe_count;
  opts.step = step;
  return grad_check(params, opts);
}

}  // namespace laser
