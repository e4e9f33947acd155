#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "beambit/parallel.hpp"
#include "beambit/random.hpp"
#include "beambit/solver.hpp"

namespace beambit {

enum class SchemeId { JBQA, RHC, UNIFORM_BITS, ORACLE };

inline std::string_view scheme_name(SchemeId s) {
  switch (s) {
    case SchemeId::JBQA: return "JBQA";
    case SchemeId::RHC: return "RHC";
    case SchemeId::UNIFORM_BITS: return "UNIFORM_BITS";
    case SchemeId::ORACLE: return "ORACLE";
  }
  throw std::logic_error("scheme_name: unknown scheme");
}

inline SchemeId parse_scheme(std::string_view name) {
  if (name == "JBQA") return SchemeId::JBQA;
  if (name == "RHC") return SchemeId::RHC;
  if (name == "UNIFORM_BITS") return SchemeId::UNIFORM_BITS;
  if (name == "ORACLE") return SchemeId::ORACLE;
  throw std::invalid_argument("unknown scheme: " + std::string(name));
}

namespace detail {

inline double integral_avg_bits(const SystemConfig& cfg) {
  if (cfg.avg_bits != std::round(cfg.avg_bits))
    throw std::invalid_argument(
        "fixed-bit baseline requires an integer avg_bits");
  return cfg.avg_bits;
}

}  // namespace detail

/// Random hybrid combining: a seeded uniformly random valid beam assignment
/// and uniform bits, with powers, receivers, and the baseband combiner
/// optimized for the fixed selection.
inline SolveResult rhc_solve(const Problem& prob, const SolverOptions& opts,
                             std::uint64_t seed) {
  prob.config.validate();
  detail::integral_avg_bits(prob.config);
  Rng rng(seed);
  std::vector<int> perm(prob.config.codebook_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.integer(i + 1)]);
  Mat g = Mat::Zero(prob.config.codebook_size, prob.config.n_rf_chains);
  for (int m = 0; m < prob.config.n_rf_chains; ++m) g(perm[m], m) = 1.0;

  detail::FreezeFlags freeze{true, true};
  return detail::solve_impl(prob, opts, freeze, g);
}

/// Fixed uniform bit allocation with the full penalized optimization of the
/// beam selection, powers, combiners, and receivers.
inline SolveResult uniform_bits_solve(const Problem& prob,
                                      const SolverOptions& opts) {
  prob.config.validate();
  detail::integral_avg_bits(prob.config);
  detail::FreezeFlags freeze{true, false};
  return detail::solve_impl(prob, opts, freeze, std::nullopt);
}

/// Number of ordered assignments of m distinct codewords out of s.
inline std::uint64_t count_assignments(int s, int m) {
  std::uint64_t n = 1;
  for (int i = 0; i < m; ++i) n *= static_cast<std::uint64_t>(s - i);
  return n;
}

/// Number of integer bit vectors in the box with total at most the budget.
inline std::uint64_t count_bit_allocations(const SystemConfig& cfg) {
  const int budget = static_cast<int>(std::floor(cfg.total_bit_budget() + 1e-9));
  // dp[t] = allocations of the chains seen so far with total t
  std::vector<std::uint64_t> dp(budget + 1, 0);
  dp[0] = 1;
  for (int m = 0; m < cfg.n_rf_chains; ++m) {
    std::vector<std::uint64_t> nxt(budget + 1, 0);
    for (int t = 0; t <= budget; ++t) {
      if (dp[t] == 0) continue;
      for (int b = cfg.bit_min; b <= cfg.bit_max && t + b <= budget; ++b)
        nxt[t + b] += dp[t];
    }
    dp.swap(nxt);
  }
  std::uint64_t total = 0;
  for (std::uint64_t v : dp) total += v;
  return total;
}

struct OracleResult {
  DesignPoint design;
  double ee = 0;  // nats/s/Hz per watt
  std::uint64_t combinations = 0;
};

/// Exhaustive search over all valid beam assignments and bit allocations,
/// optimizing the continuous blocks for each. Rejected above 1e5 combinations.
inline OracleResult brute_force_oracle(const Problem& prob,
                                       const SolverOptions& opts,
                                       int n_threads = 1) {
  prob.config.validate();
  const SystemConfig& cfg = prob.config;
  const std::uint64_t n_combos =
      count_assignments(cfg.codebook_size, cfg.n_rf_chains) *
      count_bit_allocations(cfg);
  if (n_combos > 100000)
    throw std::runtime_error("brute_force_oracle: " + std::to_string(n_combos) +
                             " combinations exceed the 1e5 budget");

  // Enumerate assignments (ordered, lexicographic) and bit vectors.
  std::vector<std::vector<int>> assignments;
  {
    std::vector<int> cur;
    std::vector<bool> used(cfg.codebook_size, false);
    auto rec = [&](auto&& self) -> void {
      if (static_cast<int>(cur.size()) == cfg.n_rf_chains) {
        assignments.push_back(cur);
        return;
      }
      for (int s = 0; s < cfg.codebook_size; ++s) {
        if (used[s]) continue;
        used[s] = true;
        cur.push_back(s);
        self(self);
        cur.pop_back();
        used[s] = false;
      }
    };
    rec(rec);
  }
  std::vector<std::vector<int>> bit_vectors;
  {
    const int budget =
        static_cast<int>(std::floor(cfg.total_bit_budget() + 1e-9));
    std::vector<int> cur;
    auto rec = [&](auto&& self, int total) -> void {
      if (static_cast<int>(cur.size()) == cfg.n_rf_chains) {
        bit_vectors.push_back(cur);
        return;
      }
      for (int b = cfg.bit_min; b <= cfg.bit_max && total + b <= budget; ++b) {
        cur.push_back(b);
        self(self, total + b);
        cur.pop_back();
      }
    };
    rec(rec, 0);
  }

  const std::size_t n_total = assignments.size() * bit_vectors.size();
  std::vector<double> ees(n_total, -std::numeric_limits<double>::infinity());
  std::vector<DesignPoint> designs(n_total);

  const detail::SolverContext sctx(prob);
  const detail::FreezeFlags freeze{true, true};
  parallel_for(n_total, n_threads, [&](std::size_t idx) {
    const auto& assign = assignments[idx / bit_vectors.size()];
    const auto& bits = bit_vectors[idx % bit_vectors.size()];
    Mat g = Mat::Zero(cfg.codebook_size, cfg.n_rf_chains);
    for (int m = 0; m < cfg.n_rf_chains; ++m) g(assign[m], m) = 1.0;
    SolverState state = detail::make_initial_state(prob, opts, sctx, g);
    for (int m = 0; m < cfg.n_rf_chains; ++m)
      state.design.bits.b(m) = bits[m];
    state.fp = refresh_fp(state.design, prob);
    detail::inner_loop(state, sctx, opts, freeze, 0,
                       std::max(opts.max_inner, 100));
    const double p_max = cfg.tx_power_budget();
    for (Eigen::Index k = 0; k < state.design.p.size(); ++k)
      state.design.p(k) = std::clamp(state.design.p(k), 0.0, p_max);
    designs[idx] = state.design;
    ees[idx] = energy_efficiency(state.design, prob);
  });

  // Deterministic reduction: best EE, ties to the lexicographically smallest
  // (assignment, bits) encoding, i.e. the smallest index.
  std::size_t best = 0;
  for (std::size_t i = 1; i < n_total; ++i)
    if (ees[i] > ees[best]) best = i;

  OracleResult out;
  out.design = designs[best];
  out.ee = ees[best];
  out.combinations = n_total;
  assert_feasible(out.design, cfg);
  return out;
}

}  // namespace beambit
