#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "beambit/fp.hpp"
#include "beambit/metrics.hpp"
#include "beambit/quantization.hpp"
#include "beambit/scenario.hpp"

namespace beambit {

struct SolverOptions {
  double rho0 = 10.0;        // initial penalty coefficient
  double shrink = 0.7;       // multiplicative shrink for rho and mu
  double tol = 1e-4;         // outer stop on the violation indicator
  int max_inner = 30;
  int max_outer = 150;
  double prox_weight = 10.0;     // proximal curvature of the bit surrogate
  double mu0 = 1.0;              // initial dual-update threshold
  double bisection_tol = 1e-9;   // on the power value at the budget boundary
  double inner_stall_tol = 1e-8; // relative stall of the inner objective
  std::uint64_t seed = 0;
  bool classical_dinkelbach = false;  // refresh eta once per outer loop only
  bool log_block_objectives = false;  // record J after every block update
};

/// Multipliers of the dualized selection constraints: zeta for the copy
/// equality g = ghat, varsigma for unit column sums, nu for the
/// complementarity g (1 - ghat) = 0.
struct DualVars {
  Mat zeta;
  Vec varsigma;
  Mat nu;
};

struct TracePoint {
  int outer = 0;
  int inner = 0;  // inner iterations executed in this outer pass
  double objective = 0;
  double eps = 0;
  double eta = 0;
};

/// J value recorded after a single block update (block indices follow the
/// update order: 0 fp refresh, 1 p, 2 b, 3 g, 4 ghat, 5 u, 6 d).
struct BlockLog {
  int outer = 0;
  int inner = 0;
  int block = 0;
  double objective = 0;
};

struct SolverState {
  DesignPoint design;
  Mat ghat;
  FpState fp;
  DualVars duals;
  double rho = 10.0;
  double mu = 1.0;
  std::vector<TracePoint> trace;
  std::vector<BlockLog> block_log;
  int ridge_events = 0;
};

enum class LinearBlock { g, ghat, u, d };

namespace detail {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kLn4 = 2.0 * kLn2;

/// Problem-constant products reused across all updates.
struct SolverContext {
  const Problem* prob = nullptr;
  CMat WtW;  // S x S, W^H W
  CMat WtH;  // S x K, W^H H

  explicit SolverContext(const Problem& p) : prob(&p) {
    WtW = p.codebook.W.adjoint() * p.codebook.W;
    WtH = p.codebook.W.adjoint() * p.H;
  }
};

/// Quantities derived from the current design; rebuilt after block updates.
struct BlockContext {
  CMat T;       // M x K, Q^H H = G^T WtH
  CMat QtQ;     // M x M, G^T WtW G
  QuantGains qg;
  Vec d_ab;     // alpha .* beta
  Vec t_diag;   // M, diag(Q^H H P^2 H^H Q + sigma_w^2 Q^H Q)
  Vec aq;       // M, quantization noise diagonal
  CMat V;       // M x K, D u_k
  CMat Y;       // M x K, F_alpha D u_k
  CMat C;       // K x K, C(k,l) = u_k^H D^H F_alpha Q^H h_l
  Vec gamma;    // K
};

inline BlockContext block_context(const SolverState& st,
                                  const SolverContext& ctx) {
  const DesignPoint& z = st.design;
  const SystemConfig& cfg = ctx.prob->config;
  BlockContext c;
  const CMat Gc = z.G.cast<cplx>();
  c.T = Gc.transpose() * ctx.WtH;
  c.QtQ = Gc.transpose() * ctx.WtW * Gc;
  c.qg = quant_gains(z.bits);
  c.d_ab = c.qg.alpha.array() * c.qg.beta.array();
  const auto m = z.G.cols();
  const auto k_users = z.p.size();
  c.t_diag = Vec(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double acc = cfg.noise_power * c.QtQ(i, i).real();
    for (Eigen::Index k = 0; k < k_users; ++k)
      acc += z.p(k) * std::norm(c.T(i, k));
    c.t_diag(i) = acc;
  }
  c.aq = c.d_ab.array() * c.t_diag.array();
  c.V = z.D * z.U;
  c.Y = c.qg.alpha.asDiagonal() * c.V;
  c.C = c.Y.adjoint() * c.T;
  c.gamma = Vec(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    double g = cfg.noise_power * (c.Y.col(k).adjoint() * c.QtQ * c.Y.col(k))
                                     .value()
                                     .real();
    g += (c.V.col(k).cwiseAbs2().array() * c.aq.array()).sum();
    for (Eigen::Index l = 0; l < k_users; ++l)
      g += z.p(l) * std::norm(c.C(k, l));
    c.gamma(k) = g;
  }
  return c;
}

inline double surrogate_sum(const SolverState& st, const BlockContext& c) {
  double total = 0;
  for (Eigen::Index k = 0; k < st.design.p.size(); ++k) {
    const double phi = st.fp.phi(k);
    const cplx lam = st.fp.lambda(k);
    const double cross =
        2.0 * (std::sqrt(st.design.p(k) * (1.0 + phi)) * std::conj(lam) *
               c.C(k, k))
                  .real();
    total += std::log1p(phi) - phi + cross - std::norm(lam) * c.gamma(k);
  }
  return total;
}

inline double penalty_sum(const SolverState& st) {
  const Mat& G = st.design.G;
  const Mat& gh = st.ghat;
  const double rho = st.rho;
  double pen = 0;
  for (Eigen::Index s = 0; s < G.rows(); ++s)
    for (Eigen::Index m = 0; m < G.cols(); ++m) {
      const double copy_res = G(s, m) - gh(s, m) + rho * st.duals.zeta(s, m);
      const double comp_res =
          G(s, m) * (1.0 - gh(s, m)) + rho * st.duals.nu(s, m);
      pen += copy_res * copy_res + comp_res * comp_res;
    }
  for (Eigen::Index m = 0; m < G.cols(); ++m) {
    const double col_res =
        G.col(m).sum() - 1.0 + rho * st.duals.varsigma(m);
    pen += col_res * col_res;
  }
  return pen;
}

inline double eval_objective(const SolverState& st, const SolverContext& ctx,
                             const BlockContext& c) {
  const double power = power_consumption(st.design, ctx.prob->config);
  return surrogate_sum(st, c) - st.fp.eta * power -
         penalty_sum(st) / (2.0 * st.rho);
}

}  // namespace detail

/// Penalized objective: surrogate sum rate minus eta-weighted power minus the
/// quadratic penalties of the dualized selection constraints.
inline double augmented_lagrangian(const SolverState& st,
                                   const Problem& prob) {
  if (!(st.rho > 0))
    throw std::invalid_argument("augmented_lagrangian: rho must be positive");
  detail::SolverContext ctx(prob);
  const auto c = detail::block_context(st, ctx);
  return detail::eval_objective(st, ctx, c);
}

/// Term-by-term breakdown of the augmented Lagrangian, for diagnostics.
struct LagrangianTerms {
  double surrogate_sum = 0;
  double weighted_power = 0;  // eta * P_C
  double pen_copy = 0;        // (1/2rho) sum (g - ghat + rho zeta)^2
  double pen_comp = 0;        // (1/2rho) sum (g (1-ghat) + rho nu)^2
  double pen_col = 0;         // (1/2rho) sum (colsum - 1 + rho varsigma)^2
  double total() const {
    return surrogate_sum - weighted_power - pen_copy - pen_comp - pen_col;
  }
};

inline LagrangianTerms al_terms(const SolverState& st, const Problem& prob) {
  if (!(st.rho > 0))
    throw std::invalid_argument("al_terms: rho must be positive");
  detail::SolverContext ctx(prob);
  const auto c = detail::block_context(st, ctx);
  LagrangianTerms t;
  t.surrogate_sum = detail::surrogate_sum(st, c);
  t.weighted_power =
      st.fp.eta * power_consumption(st.design, prob.config);
  const Mat& G = st.design.G;
  const double rho = st.rho;
  for (Eigen::Index s = 0; s < G.rows(); ++s)
    for (Eigen::Index m = 0; m < G.cols(); ++m) {
      const double copy_res =
          G(s, m) - st.ghat(s, m) + rho * st.duals.zeta(s, m);
      const double comp_res =
          G(s, m) * (1.0 - st.ghat(s, m)) + rho * st.duals.nu(s, m);
      t.pen_copy += copy_res * copy_res / (2.0 * rho);
      t.pen_comp += comp_res * comp_res / (2.0 * rho);
    }
  for (Eigen::Index m = 0; m < G.cols(); ++m) {
    const double col_res =
        G.col(m).sum() - 1.0 + rho * st.duals.varsigma(m);
    t.pen_col += col_res * col_res / (2.0 * rho);
  }
  return t;
}

/// Max constraint residual over the copy, column-sum, and complementarity
/// constraints linking G and ghat.
inline double violation_eps(const SolverState& st) {
  const Mat& G = st.design.G;
  double eps = 0;
  for (Eigen::Index s = 0; s < G.rows(); ++s)
    for (Eigen::Index m = 0; m < G.cols(); ++m) {
      eps = std::max(eps, std::abs(G(s, m) - st.ghat(s, m)));
      eps = std::max(eps, std::abs(G(s, m) * (1.0 - st.ghat(s, m))));
    }
  for (Eigen::Index m = 0; m < G.cols(); ++m)
    eps = std::max(eps, std::abs(G.col(m).sum() - 1.0));
  return eps;
}

/// Gradient step on the multipliers at the current residuals.
inline void dual_update(SolverState& st) {
  const Mat& G = st.design.G;
  for (Eigen::Index s = 0; s < G.rows(); ++s)
    for (Eigen::Index m = 0; m < G.cols(); ++m) {
      st.duals.zeta(s, m) += (G(s, m) - st.ghat(s, m)) / st.rho;
      st.duals.nu(s, m) += G(s, m) * (1.0 - st.ghat(s, m)) / st.rho;
    }
  for (Eigen::Index m = 0; m < G.cols(); ++m)
    st.duals.varsigma(m) += (G.col(m).sum() - 1.0) / st.rho;
}

/// Penalty shrink (smaller rho weights the penalty terms more heavily).
inline void penalty_update(SolverState& st, double shrink) {
  st.rho *= shrink;
}

/// Outer-loop step: ascend the duals while the violation is under the
/// threshold, otherwise tighten the penalty; the threshold then tracks a
/// shrunken copy of the violation.
inline void outer_update(SolverState& st, double eps, double shrink) {
  if (eps <= st.mu)
    dual_update(st);
  else
    penalty_update(st, shrink);
  st.mu = shrink * eps;
}

namespace detail {

/// p update, Lagrangian-multiplier form. Separable across users given the
/// auxiliary variables: p_k(sigma) = (num_k / (sigma + theta_k))^2 with the
/// budget multiplier sigma found by bisection when the unconstrained optimum
/// exceeds the budget.
inline void update_powers(SolverState& st, const SolverContext& ctx,
                          double bisection_tol) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const double p_max = cfg.tx_power_budget();
  const auto k_users = st.design.p.size();
  const auto m = st.design.G.cols();
  Vec p_new(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const double num = std::sqrt(1.0 + st.fp.phi(k)) *
                       (std::conj(st.fp.lambda(k)) * c.C(k, k)).real();
    if (num <= 0.0) {
      p_new(k) = 0.0;
      continue;
    }
    double theta = st.fp.eta;
    for (Eigen::Index l = 0; l < k_users; ++l) {
      const double w = std::norm(st.fp.lambda(l));
      theta += w * std::norm(c.C(l, k));
      for (Eigen::Index i = 0; i < m; ++i)
        theta += w * c.d_ab(i) * std::norm(c.T(i, k)) * std::norm(c.V(i, l));
    }
    auto p_of = [&](double sigma) {
      const double d = sigma + theta;
      return d > 0 ? (num / d) * (num / d)
                   : std::numeric_limits<double>::infinity();
    };
    if (p_of(0.0) <= p_max) {
      p_new(k) = p_of(0.0);
      continue;
    }
    double hi = 1.0;
    while (p_of(hi) >= p_max) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double val = p_of(mid);
      if (std::abs(val - p_max) <= bisection_tol) break;
      (val > p_max ? lo : hi) = mid;
    }
    p_new(k) = p_max;  // multiplier active at the boundary
  }
  st.design.p = p_new;
}

/// Solve A x = rhs for Hermitian PSD A, adding a small diagonal ridge when
/// the factorization is unreliable. Returns true if a ridge was applied.
inline bool solve_psd(const CMat& A, const CMat& rhs, CMat& out) {
  Eigen::LDLT<CMat> ldlt(A);
  out = ldlt.solve(rhs);
  const double scale = A.norm() * out.norm() + rhs.norm();
  if (out.allFinite() && (A * out - rhs).norm() <= 1e-8 * scale) return false;
  CMat ridged = A;
  const double ridge =
      1e-10 * std::max(1.0, A.diagonal().real().maxCoeff());
  ridged.diagonal().array() += ridge;
  out = Eigen::LDLT<CMat>(ridged).solve(rhs);
  return true;
}

inline void update_receivers(SolverState& st, const SolverContext& ctx) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const CMat Fd = c.qg.alpha.asDiagonal() * st.design.D;
  const CMat Meff = Fd.adjoint() * c.T;
  CMat gam = Meff * st.design.p.asDiagonal() * Meff.adjoint();
  gam += cfg.noise_power * (Fd.adjoint() * c.QtQ * Fd);
  gam += st.design.D.adjoint() * c.aq.asDiagonal() * st.design.D;

  std::vector<Eigen::Index> active;
  for (Eigen::Index k = 0; k < st.design.p.size(); ++k)
    if (st.fp.lambda(k) != cplx(0, 0)) active.push_back(k);
  if (active.empty()) return;
  CMat rhs(Meff.rows(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i)
    rhs.col(static_cast<Eigen::Index>(i)) = Meff.col(active[i]);
  CMat sol;
  if (solve_psd(gam, rhs, sol)) ++st.ridge_events;
  for (std::size_t i = 0; i < active.size(); ++i) {
    const Eigen::Index k = active[i];
    const double s_k =
        std::sqrt(st.design.p(k) * (1.0 + st.fp.phi(k)));
    st.design.U.col(k) =
        (s_k / st.fp.lambda(k)) * sol.col(static_cast<Eigen::Index>(i));
  }
}

inline void update_combiner(SolverState& st, const SolverContext& ctx) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const auto k_users = st.design.p.size();
  bool any = false;
  for (Eigen::Index k = 0; k < k_users; ++k)
    if (st.fp.lambda(k) != cplx(0, 0)) any = true;
  if (!any) return;

  const CMat Ah = c.qg.alpha.asDiagonal() * c.T;  // columns F_alpha Q^H h_l
  CMat xi = Ah * st.design.p.asDiagonal() * Ah.adjoint();
  xi += cfg.noise_power *
        (c.qg.alpha.asDiagonal() * c.QtQ * c.qg.alpha.asDiagonal());
  xi += c.aq.cast<cplx>().asDiagonal();

  CMat b_mat = CMat::Zero(st.design.D.rows(), st.design.D.cols());
  CMat c_mat = CMat::Zero(st.design.D.rows(), st.design.D.cols());
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const cplx lam = st.fp.lambda(k);
    if (lam == cplx(0, 0)) continue;
    const double s_k =
        std::sqrt(st.design.p(k) * (1.0 + st.fp.phi(k)));
    b_mat += std::norm(lam) * st.design.U.col(k) * st.design.U.col(k).adjoint();
    c_mat += s_k * std::conj(lam) * Ah.col(k) * st.design.U.col(k).adjoint();
  }
  // Stationarity: Xi D B = C  =>  D = Xi^{-1} C B^{-1}.
  CMat x_left;
  bool ridged = solve_psd(xi, c_mat, x_left);
  CMat d_adj;
  ridged |= solve_psd(b_mat, x_left.adjoint(), d_adj);
  if (ridged) ++st.ridge_events;
  st.design.D = d_adj.adjoint();
}

/// Exact maximizer of J over row s of G (a strictly concave quadratic; the
/// penalty terms keep the system positive definite).
inline void update_selection_row(SolverState& st, const SolverContext& ctx,
                                 Eigen::Index s) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const auto m_chains = st.design.G.cols();
  const auto k_users = st.design.p.size();
  const double rho = st.rho;

  // Row-independent pieces of the rate quadratic.
  Mat y_mix = Mat::Zero(m_chains, m_chains);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const double w = std::norm(st.fp.lambda(k));
    if (w == 0.0) continue;
    y_mix += w * (c.Y.col(k).conjugate() * c.Y.col(k).transpose()).real();
  }
  double w_s = 0;  // sum_l p_l |(W^H h_l)_s|^2
  for (Eigen::Index l = 0; l < k_users; ++l)
    w_s += st.design.p(l) * std::norm(ctx.WtH(s, l));
  const double omega_ss = ctx.WtW(s, s).real();

  // R_tilde = W^H (H P^2 H^H + sigma I) W, for the quantization-noise term.
  CMat r_tilde = ctx.WtH * st.design.p.asDiagonal() * ctx.WtH.adjoint();
  r_tilde += cfg.noise_power * ctx.WtW;

  Vec kappa(m_chains);  // per-chain weight of the A_q diagonal
  for (Eigen::Index i = 0; i < m_chains; ++i) {
    double acc = 0;
    for (Eigen::Index k = 0; k < k_users; ++k)
      acc += std::norm(st.fp.lambda(k)) * std::norm(c.V(i, k));
    kappa(i) = acc * c.d_ab(i);
  }

  Mat a_sys = 2.0 * (w_s + cfg.noise_power * omega_ss) * y_mix;
  Vec b_sys = Vec::Zero(m_chains);

  const CMat r_g = r_tilde * st.design.G.cast<cplx>();  // S x M
  for (Eigen::Index i = 0; i < m_chains; ++i) {
    a_sys(i, i) += 2.0 * kappa(i) * r_tilde(s, s).real();
    a_sys(i, i) += (2.0 + (1.0 - st.ghat(s, i)) * (1.0 - st.ghat(s, i))) / rho;
    b_sys(i) += -2.0 * kappa(i) *
                (r_g(s, i) - r_tilde(s, s) * st.design.G(s, i)).real();
    // Penalty linear parts.
    b_sys(i) += st.ghat(s, i) / rho - st.duals.zeta(s, i);
    b_sys(i) += -(1.0 - st.ghat(s, i)) * st.duals.nu(s, i);
    const double col_rest = st.design.G.col(i).sum() - st.design.G(s, i);
    b_sys(i) += (1.0 - col_rest) / rho - st.duals.varsigma(i);
  }

  for (Eigen::Index k = 0; k < k_users; ++k) {
    const cplx lam = st.fp.lambda(k);
    const double s_k = std::sqrt(st.design.p(k) * (1.0 + st.fp.phi(k)));
    // Current row's contribution to c_{kl}, removed to get the row-free part.
    cplx row_dot(0, 0);
    for (Eigen::Index i = 0; i < m_chains; ++i)
      row_dot += st.design.G(s, i) * std::conj(c.Y(i, k));
    cplx tau(0, 0);
    for (Eigen::Index l = 0; l < k_users; ++l) {
      const cplx c0 = c.C(k, l) - ctx.WtH(s, l) * row_dot;
      tau += st.design.p(l) * std::conj(c0) * ctx.WtH(s, l);
    }
    const CVec w_vec = st.design.G.cast<cplx>() * c.Y.col(k);  // S
    cplx rho_k(0, 0);
    for (Eigen::Index sp = 0; sp < st.design.G.rows(); ++sp)
      if (sp != s) rho_k += ctx.WtW(s, sp) * w_vec(sp);

    const double w = std::norm(lam);
    for (Eigen::Index i = 0; i < m_chains; ++i) {
      const cplx y_conj = std::conj(c.Y(i, k));
      b_sys(i) += 2.0 * (s_k * std::conj(lam) * ctx.WtH(s, k) * y_conj).real();
      if (w != 0.0) {
        b_sys(i) += -2.0 * w * (y_conj * tau).real();
        b_sys(i) += -2.0 * w * cfg.noise_power * (rho_k * y_conj).real();
      }
    }
  }

  st.design.G.row(s) = a_sys.ldlt().solve(b_sys).transpose();
}

/// Closed-form per-entry maximizer of J over ghat, clamped to [0, 1].
inline void update_ghat(SolverState& st) {
  const double rho = st.rho;
  for (Eigen::Index s = 0; s < st.ghat.rows(); ++s)
    for (Eigen::Index m = 0; m < st.ghat.cols(); ++m) {
      const double a = st.design.G(s, m);
      const double opt =
          (a + a * a + rho * (st.duals.zeta(s, m) + a * st.duals.nu(s, m))) /
          (1.0 + a * a);
      st.ghat(s, m) = std::clamp(opt, 0.0, 1.0);
    }
}

/// Analytic gradient of J with respect to the bit vector.
inline Vec bit_gradient(const SolverState& st, const SolverContext& ctx) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const auto m_chains = st.design.G.cols();
  const auto k_users = st.design.p.size();
  Vec grad(m_chains);
  const CMat qtq_y = c.QtQ * c.Y;  // M x K
  for (Eigen::Index i = 0; i < m_chains; ++i) {
    const double beta = c.qg.beta(i);
    const double alpha = c.qg.alpha(i);
    double rate_part = 0;
    double quant_weight = 0;
    for (Eigen::Index k = 0; k < k_users; ++k) {
      const cplx lam = st.fp.lambda(k);
      const double w = std::norm(lam);
      const double s_k = std::sqrt(st.design.p(k) * (1.0 + st.fp.phi(k)));
      const cplx v_conj = std::conj(c.V(i, k));
      rate_part += 2.0 * (s_k * std::conj(lam) * v_conj * c.T(i, k)).real();
      if (w != 0.0) {
        double sig = 0;
        for (Eigen::Index l = 0; l < k_users; ++l)
          sig += st.design.p(l) *
                 (std::conj(c.C(k, l)) * v_conj * c.T(i, l)).real();
        rate_part -= w * 2.0 * sig;
        rate_part -=
            w * 2.0 * cfg.noise_power * (v_conj * qtq_y(i, k)).real();
        quant_weight += w * std::norm(c.V(i, k));
      }
    }
    grad(i) = kLn4 * beta * rate_part -
              kLn4 * beta * (beta - alpha) * c.t_diag(i) * quant_weight -
              st.fp.eta * kLn2 * cfg.adc_energy_coeff * cfg.sampling_rate *
                  std::exp2(st.design.bits.b(i) + 1.0);
  }
  return grad;
}

/// Reductions that make the bit objective independent of the problem size:
/// everything except alpha(b), beta(b), and the ADC power is frozen.
struct BitBlockData {
  std::vector<CMat> e;   // per user k: E_k(m, l) = conj(V(m,k)) T(m,l)
  std::vector<CMat> z;   // per user k: Z_k(m, m') = conj(V(m,k)) QtQ(m,m') V(m',k)
  Mat v_abs2;            // M x K
  Vec t_diag;            // M
  Vec p;                 // K
  Vec w2;                // K, |lambda_k|^2
  CVec s_lam;            // K, sqrt(p_k (1+phi_k)) conj(lambda_k)
  double eta = 0;
  double noise_power = 0;
  double adc_coeff = 0;  // adc_energy_coeff * sampling_rate
};

inline BitBlockData bit_block_data(const SolverState& st,
                                   const SolverContext& ctx,
                                   const BlockContext& c) {
  const SystemConfig& cfg = ctx.prob->config;
  const auto k_users = st.design.p.size();
  BitBlockData d;
  d.e.resize(k_users);
  d.z.resize(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    d.e[k] = c.V.col(k).conjugate().asDiagonal() * c.T;
    d.z[k] = c.V.col(k).conjugate().asDiagonal() * c.QtQ *
             c.V.col(k).asDiagonal();
  }
  d.v_abs2 = c.V.cwiseAbs2();
  d.t_diag = c.t_diag;
  d.p = st.design.p;
  d.w2 = Vec(k_users);
  d.s_lam = CVec(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    d.w2(k) = std::norm(st.fp.lambda(k));
    d.s_lam(k) = std::sqrt(st.design.p(k) * (1.0 + st.fp.phi(k))) *
                 std::conj(st.fp.lambda(k));
  }
  d.eta = st.fp.eta;
  d.noise_power = cfg.noise_power;
  d.adc_coeff = cfg.adc_energy_coeff * cfg.sampling_rate;
  return d;
}

/// b-dependent part of J (constants in b omitted).
inline double bit_block_objective(const BitBlockData& d, const Vec& b) {
  const auto m = b.size();
  Vec alpha(m), beta(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    beta(i) = quant_beta(b(i));
    alpha(i) = 1.0 - beta(i);
  }
  double total = 0;
  const auto k_users = d.p.size();
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const CVec c_row = d.e[k].transpose() * alpha.cast<cplx>();  // c_{kl}
    total += 2.0 * (d.s_lam(k) * c_row(k)).real();
    if (d.w2(k) == 0.0) continue;
    double gam = 0;
    for (Eigen::Index l = 0; l < k_users; ++l)
      gam += d.p(l) * std::norm(c_row(l));
    gam += d.noise_power *
           (alpha.cast<cplx>().adjoint() * d.z[k] * alpha.cast<cplx>())
               .value()
               .real();
    for (Eigen::Index i = 0; i < m; ++i)
      gam += d.v_abs2(i, k) * alpha(i) * beta(i) * d.t_diag(i);
    total -= d.w2(k) * gam;
  }
  for (Eigen::Index i = 0; i < m; ++i)
    total -= d.eta * d.adc_coeff * std::exp2(b(i) + 1.0);
  return total;
}

inline Vec bit_block_gradient(const BitBlockData& d, const Vec& b) {
  const auto m = b.size();
  Vec alpha(m), beta(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    beta(i) = quant_beta(b(i));
    alpha(i) = 1.0 - beta(i);
  }
  Vec grad = Vec::Zero(m);
  const auto k_users = d.p.size();
  const CVec alpha_c = alpha.cast<cplx>();
  for (Eigen::Index k = 0; k < k_users; ++k) {
    const CVec c_row = d.e[k].transpose() * alpha_c;
    const CVec z_alpha = d.z[k] * alpha_c;
    for (Eigen::Index i = 0; i < m; ++i) {
      double r = 2.0 * (d.s_lam(k) * d.e[k](i, k)).real();
      if (d.w2(k) != 0.0) {
        double sig = 0;
        for (Eigen::Index l = 0; l < k_users; ++l)
          sig += d.p(l) * (std::conj(c_row(l)) * d.e[k](i, l)).real();
        r -= d.w2(k) * 2.0 * sig;
        r -= d.w2(k) * 2.0 * d.noise_power * z_alpha(i).real();
      }
      grad(i) += kLn4 * beta(i) * r;
      if (d.w2(k) != 0.0)
        grad(i) -= d.w2(k) * d.v_abs2(i, k) * d.t_diag(i) * kLn4 * beta(i) *
                   (beta(i) - alpha(i));
    }
  }
  for (Eigen::Index i = 0; i < m; ++i)
    grad(i) -= d.eta * kLn2 * d.adc_coeff * std::exp2(b(i) + 1.0);
  return grad;
}

/// Maximize the proximal-linear bit surrogate over the box and the total
/// bit budget. The unconstrained step is b + grad/(2 theta); a common shift
/// found by bisection restores the budget (water-filling).
inline Vec bit_step(const Vec& b, const Vec& grad, double prox_weight,
                    double bit_min, double bit_max, double budget) {
  const Vec target = b + grad / (2.0 * prox_weight);
  auto clamped = [&](double shift) -> Vec {
    Vec v(target.size());
    for (Eigen::Index i = 0; i < target.size(); ++i)
      v(i) = std::clamp(target(i) - shift, bit_min, bit_max);
    return v;
  };
  Vec out = clamped(0.0);
  if (out.sum() <= budget + 1e-12) return out;
  double lo = 0.0, hi = target.maxCoeff() - bit_min;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double s = clamped(mid).sum();
    if (std::abs(s - budget) <= 1e-12 * std::max(1.0, budget)) {
      lo = hi = mid;
      break;
    }
    (s > budget ? lo : hi) = mid;
  }
  return clamped(hi);
}

}  // namespace detail

/// Gradient of the augmented Lagrangian with respect to the bit vector,
/// holding (eta, phi, lambda) and all other blocks fixed.
inline Vec gradient_b(const SolverState& st, const Problem& prob) {
  detail::SolverContext ctx(prob);
  return detail::bit_gradient(st, ctx);
}

/// One proximal-linear (majorize-minimize) step on the bits, projected onto
/// the box and the total budget.
inline void update_b(SolverState& st, const Problem& prob,
                     double prox_weight) {
  detail::SolverContext ctx(prob);
  const Vec grad = detail::bit_gradient(st, ctx);
  const SystemConfig& cfg = prob.config;
  if (cfg.bit_min * cfg.n_rf_chains > cfg.total_bit_budget() + 1e-12)
    throw std::invalid_argument("update_b: infeasible bit box");
  st.design.bits.b = detail::bit_step(
      st.design.bits.b, grad, prox_weight, cfg.bit_min, cfg.bit_max,
      cfg.total_bit_budget());
}

/// Closed-form power update at the current auxiliary variables.
inline void update_p(SolverState& st, const Problem& prob,
                     double bisection_tol = 1e-9) {
  detail::SolverContext ctx(prob);
  detail::update_powers(st, ctx, bisection_tol);
}

/// First-order-condition update of one linear block.
inline void update_linear_block(SolverState& st, LinearBlock block,
                                const Problem& prob) {
  detail::SolverContext ctx(prob);
  switch (block) {
    case LinearBlock::g:
      for (Eigen::Index s = 0; s < st.design.G.rows(); ++s)
        detail::update_selection_row(st, ctx, s);
      break;
    case LinearBlock::ghat:
      detail::update_ghat(st);
      break;
    case LinearBlock::u:
      detail::update_receivers(st, ctx);
      break;
    case LinearBlock::d:
      detail::update_combiner(st, ctx);
      break;
  }
}

/// Threshold rounding: floor entries whose fractional part is at most delta,
/// ceil the rest, with delta the smallest candidate that meets the budget.
inline BitAllocation round_bits(const Vec& b_star, double avg_bits, int m) {
  const double budget = avg_bits * m;
  std::vector<double> candidates{0.0};
  for (Eigen::Index i = 0; i < b_star.size(); ++i)
    candidates.push_back(b_star(i) - std::floor(b_star(i)));
  std::sort(candidates.begin(), candidates.end());
  Vec rounded(b_star.size());
  for (double delta : candidates) {
    for (Eigen::Index i = 0; i < b_star.size(); ++i) {
      const double fl = std::floor(b_star(i));
      rounded(i) = (b_star(i) - fl) <= delta ? fl : fl + 1.0;
    }
    if (rounded.sum() <= budget + 1e-9) return BitAllocation{rounded};
  }
  return BitAllocation{b_star.unaryExpr(
      [](double v) { return std::floor(v); })};  // delta = 1 fallback
}

namespace detail {

/// Bit finalization used by solve(): among the threshold-rounding family
/// (one allocation per candidate delta), keep the feasible allocation with
/// the best EE at the current continuous blocks; ties go to the smallest
/// delta. The plain smallest-delta rule keeps the most ceilings, which
/// maximizes rate but can overshoot the EE optimum when the budget is slack.
inline BitAllocation round_bits_best_ee(const Vec& b_star,
                                        const DesignPoint& design,
                                        const Problem& prob) {
  const SystemConfig& cfg = prob.config;
  const double budget = cfg.total_bit_budget();
  std::vector<double> candidates{0.0};
  for (Eigen::Index i = 0; i < b_star.size(); ++i)
    candidates.push_back(b_star(i) - std::floor(b_star(i)));
  std::sort(candidates.begin(), candidates.end());
  DesignPoint trial = design;
  Vec best;
  double best_ee = -std::numeric_limits<double>::infinity();
  Vec rounded(b_star.size());
  for (double delta : candidates) {
    for (Eigen::Index i = 0; i < b_star.size(); ++i) {
      const double fl = std::floor(b_star(i));
      rounded(i) = (b_star(i) - fl) <= delta ? fl : fl + 1.0;
    }
    if (rounded.sum() > budget + 1e-9) continue;
    trial.bits.b = rounded;
    const double ee = energy_efficiency(trial, prob);
    if (ee > best_ee) {
      best_ee = ee;
      best = rounded;
    }
  }
  if (best.size() == 0)  // delta = 1 fallback, mirrors round_bits
    best = b_star.unaryExpr([](double v) { return std::floor(v); });
  return BitAllocation{best};
}

inline Mat greedy_selection_from_scores(const Vec& scores, int m_chains) {
  const auto s_size = scores.size();
  std::vector<int> order(s_size);
  for (int i = 0; i < s_size; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores(a) > scores(b); });
  Mat g = Mat::Zero(s_size, m_chains);
  for (int m = 0; m < m_chains; ++m) g(order[m], m) = 1.0;
  return g;
}

/// Deterministic greedy rounding of a relaxed selection matrix: repeatedly
/// assign the largest remaining entry, one codeword per chain and at most
/// one chain per codeword.
inline Mat project_selection(const Mat& g_relaxed) {
  const auto s_size = g_relaxed.rows();
  const auto m_size = g_relaxed.cols();
  Mat out = Mat::Zero(s_size, m_size);
  std::vector<bool> row_used(s_size, false), col_used(m_size, false);
  for (Eigen::Index n = 0; n < m_size; ++n) {
    Eigen::Index best_s = -1, best_m = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s < s_size; ++s) {
      if (row_used[s]) continue;
      for (Eigen::Index m = 0; m < m_size; ++m) {
        if (col_used[m]) continue;
        if (g_relaxed(s, m) > best) {
          best = g_relaxed(s, m);
          best_s = s;
          best_m = m;
        }
      }
    }
    out(best_s, best_m) = 1.0;
    row_used[best_s] = true;
    col_used[best_m] = true;
  }
  return out;
}

inline void mmse_receivers(SolverState& st, const SolverContext& ctx) {
  const BlockContext c = block_context(st, ctx);
  const SystemConfig& cfg = ctx.prob->config;
  const CMat Fd = c.qg.alpha.asDiagonal() * st.design.D;
  const CMat Meff = Fd.adjoint() * c.T;
  CMat gam = Meff * st.design.p.asDiagonal() * Meff.adjoint();
  gam += cfg.noise_power * (Fd.adjoint() * c.QtQ * Fd);
  gam += st.design.D.adjoint() * c.aq.asDiagonal() * st.design.D;
  CMat sol;
  solve_psd(gam, Meff, sol);
  for (Eigen::Index k = 0; k < st.design.p.size(); ++k)
    st.design.U.col(k) = std::sqrt(st.design.p(k)) * sol.col(k);
}

inline SolverState make_initial_state(const Problem& prob,
                                      const SolverOptions& opts,
                                      const SolverContext& ctx,
                                      const std::optional<Mat>& fixed_g) {
  const SystemConfig& cfg = prob.config;
  SolverState st;
  const int m = cfg.n_rf_chains;
  const int k_users = cfg.n_users;
  st.design.p = Vec::Constant(k_users, cfg.tx_power_budget());
  st.design.bits = BitAllocation::uniform(m, cfg.avg_bits);
  st.design.D = CMat::Identity(m, m);
  st.design.U = CMat::Zero(m, k_users);
  if (fixed_g) {
    st.design.G = *fixed_g;
  } else {
    Vec scores = ctx.WtH.cwiseAbs2().rowwise().sum();
    st.design.G = greedy_selection_from_scores(scores, m);
  }
  st.ghat = st.design.G;
  st.duals.zeta = Mat::Zero(cfg.codebook_size, m);
  st.duals.nu = Mat::Zero(cfg.codebook_size, m);
  st.duals.varsigma = Vec::Zero(m);
  st.rho = opts.rho0;
  st.mu = opts.mu0;
  mmse_receivers(st, ctx);
  st.fp = refresh_fp(st.design, prob);
  return st;
}

struct FreezeFlags {
  bool bits = false;
  bool selection = false;
};

/// Bit block: repeat the projected surrogate step until it converges. Each
/// step maximizes the strongly concave surrogate at the current point; the
/// curvature starts at prox_weight and adapts with an ascent check, so J
/// never decreases across the block.
inline void optimize_bit_block(SolverState& st, const SolverContext& ctx,
                               const SolverOptions& opts) {
  const SystemConfig& cfg = ctx.prob->config;
  if (cfg.bit_min * cfg.n_rf_chains > cfg.total_bit_budget() + 1e-12)
    throw std::invalid_argument("bit block: infeasible bit box");
  const BlockContext c = block_context(st, ctx);
  const BitBlockData data = bit_block_data(st, ctx, c);
  Vec b = st.design.bits.b;
  double j_cur = bit_block_objective(data, b);
  double theta = opts.prox_weight;
  for (int step = 0; step < 500; ++step) {
    const Vec grad = bit_block_gradient(data, b);
    bool accepted = false;
    Vec b_try;
    for (int attempt = 0; attempt < 80 && !accepted; ++attempt) {
      b_try = bit_step(b, grad, theta, cfg.bit_min, cfg.bit_max,
                       cfg.total_bit_budget());
      const double j_try = bit_block_objective(data, b_try);
      if (j_try >= j_cur - 1e-14 * (1.0 + std::abs(j_cur))) {
        accepted = true;
        j_cur = j_try;
      } else {
        theta *= 4.0;
      }
    }
    if (!accepted) break;
    const double travel = (b_try - b).lpNorm<Eigen::Infinity>();
    b = b_try;
    theta = std::max(theta * 0.5, 1e-8);
    if (travel < 1e-9) break;
  }
  st.design.bits.b = b;
}

inline void log_block(SolverState& st, const SolverOptions& opts,
                      const SolverContext& ctx, int outer, int inner,
                      int block) {
  if (!opts.log_block_objectives) return;
  const BlockContext c = block_context(st, ctx);
  st.block_log.push_back(
      BlockLog{outer, inner, block, eval_objective(st, ctx, c)});
}

/// One pass over the blocks in order: (eta, phi, lambda), p, b, g, ghat, u, d.
/// Returns J after the pass.
inline double inner_iteration(SolverState& st, const SolverContext& ctx,
                              const SolverOptions& opts,
                              const FreezeFlags& freeze, int outer,
                              int inner) {
  const Problem& prob = *ctx.prob;
  if (!opts.classical_dinkelbach || inner == 0)
    st.fp.eta = dinkelbach_eta(st.design, prob);
  st.fp.phi = optimal_phi(st.design, prob);
  st.fp.lambda = optimal_lambda(st.design, st.fp.phi, prob);
  log_block(st, opts, ctx, outer, inner, 0);

  update_powers(st, ctx, opts.bisection_tol);
  log_block(st, opts, ctx, outer, inner, 1);

  if (!freeze.bits) {
    optimize_bit_block(st, ctx, opts);
    log_block(st, opts, ctx, outer, inner, 2);
  }

  if (!freeze.selection) {
    for (Eigen::Index s = 0; s < st.design.G.rows(); ++s)
      update_selection_row(st, ctx, s);
    log_block(st, opts, ctx, outer, inner, 3);
    update_ghat(st);
    log_block(st, opts, ctx, outer, inner, 4);
  }

  update_receivers(st, ctx);
  log_block(st, opts, ctx, outer, inner, 5);
  update_combiner(st, ctx);
  log_block(st, opts, ctx, outer, inner, 6);

  const BlockContext c = block_context(st, ctx);
  return eval_objective(st, ctx, c);
}

/// Inner loop: block passes until the objective stalls or the cap is hit.
/// Returns the number of iterations executed.
inline int inner_loop(SolverState& st, const SolverContext& ctx,
                      const SolverOptions& opts, const FreezeFlags& freeze,
                      int outer, int cap) {
  double j_prev = std::numeric_limits<double>::quiet_NaN();
  int v = 0;
  for (; v < cap; ++v) {
    const double j = inner_iteration(st, ctx, opts, freeze, outer, v);
    if (v > 0 &&
        std::abs(j - j_prev) <= opts.inner_stall_tol * (1.0 + std::abs(j)))
      return v + 1;
    j_prev = j;
  }
  return v;
}

}  // namespace detail

struct SolveDiagnostics {
  bool converged = false;
  int outer_iters = 0;
  double final_eps = 0;
  double sum_rate_nats = 0;
  double power = 0;
  double ee = 0;  // nats/s/Hz per watt
  int ridge_events = 0;
  Mat relaxed_selection;  // G at termination, before binary projection
  std::vector<TracePoint> trace;
  std::vector<BlockLog> block_log;
};

struct SolveResult {
  DesignPoint design;
  SolveDiagnostics diag;
};

/// Exact feasibility of a finalized design; throws std::logic_error.
inline void assert_feasible(const DesignPoint& z, const SystemConfig& cfg) {
  const double p_max = cfg.tx_power_budget();
  for (Eigen::Index k = 0; k < z.p.size(); ++k)
    if (!(z.p(k) >= 0.0 && z.p(k) <= p_max))
      throw std::logic_error("design: power outside budget");
  Vec row_sum = z.G.rowwise().sum();
  for (Eigen::Index s = 0; s < z.G.rows(); ++s) {
    if (row_sum(s) > 1.0)
      throw std::logic_error("design: codeword reused across chains");
    for (Eigen::Index m = 0; m < z.G.cols(); ++m)
      if (z.G(s, m) != 0.0 && z.G(s, m) != 1.0)
        throw std::logic_error("design: selection not binary");
  }
  for (Eigen::Index m = 0; m < z.G.cols(); ++m)
    if (z.G.col(m).sum() != 1.0)
      throw std::logic_error("design: chain without exactly one codeword");
  double bit_sum = 0;
  for (Eigen::Index m = 0; m < z.bits.b.size(); ++m) {
    const double b = z.bits.b(m);
    if (b != std::round(b) || b < cfg.bit_min || b > cfg.bit_max)
      throw std::logic_error("design: bits not integer in box");
    bit_sum += b;
  }
  if (bit_sum > cfg.total_bit_budget() + 1e-9)
    throw std::logic_error("design: bit budget exceeded");
}

namespace detail {

inline SolveResult solve_impl(const Problem& prob, const SolverOptions& opts,
                              const FreezeFlags& freeze,
                              const std::optional<Mat>& fixed_g) {
  prob.config.validate();
  const SolverContext ctx(prob);
  SolverState st = make_initial_state(prob, opts, ctx, fixed_g);

  SolveResult out;
  bool converged = false;
  int outer = 0;
  double eps = violation_eps(st);

  double best_ee = -std::numeric_limits<double>::infinity();
  DesignPoint best_design;
  SolverState best_state = st;

  const bool pdd_active = !freeze.selection;
  const int polish_cap = std::max(opts.max_inner, 100);

  for (outer = 0; outer < opts.max_outer; ++outer) {
    const int inners =
        inner_loop(st, ctx, opts, freeze, outer,
                   pdd_active ? opts.max_inner : polish_cap);
    eps = violation_eps(st);
    const BlockContext c = block_context(st, ctx);
    st.trace.push_back(
        TracePoint{outer, inners, eval_objective(st, ctx, c), eps, st.fp.eta});

    // Track the best feasible (projected) iterate for the non-converged exit.
    {
      DesignPoint cand = st.design;
      cand.G = project_selection(st.design.G);
      cand.bits = freeze.bits
                      ? st.design.bits
                      : round_bits_best_ee(st.design.bits.b, cand, prob);
      const double cand_ee = energy_efficiency(cand, prob);
      if (cand_ee > best_ee) {
        best_ee = cand_ee;
        best_design = cand;
        best_state = st;
      }
    }

    if (eps <= opts.tol) {
      converged = true;
      ++outer;
      break;
    }
    if (!pdd_active) break;  // selection fixed: single outer pass suffices
    outer_update(st, eps, opts.shrink);
  }

  // Finalize: binary selection, integer bits, then re-optimize the
  // continuous blocks once with the discrete variables frozen.
  SolverState fin = converged ? st : best_state;
  fin.design.G = converged ? project_selection(st.design.G) : best_design.G;
  if (converged && !freeze.bits)
    fin.design.bits =
        round_bits_best_ee(st.design.bits.b, fin.design, prob);
  else if (!converged)
    fin.design.bits = best_design.bits;
  fin.ghat = fin.design.G;
  fin.duals.zeta.setZero();
  fin.duals.nu.setZero();
  fin.duals.varsigma.setZero();
  fin.fp = refresh_fp(fin.design, prob);
  FreezeFlags polish{true, true};
  inner_loop(fin, ctx, opts, polish, outer, polish_cap);

  const double p_max = prob.config.tx_power_budget();
  for (Eigen::Index k = 0; k < fin.design.p.size(); ++k)
    fin.design.p(k) = std::clamp(fin.design.p(k), 0.0, p_max);
  assert_feasible(fin.design, prob.config);

  out.design = fin.design;
  out.diag.converged = converged;
  out.diag.outer_iters = outer;
  out.diag.final_eps = eps;
  out.diag.relaxed_selection = st.design.G;
  out.diag.trace = std::move(st.trace);
  out.diag.block_log = std::move(fin.block_log);
  out.diag.ridge_events = fin.ridge_events;
  out.diag.sum_rate_nats = sum_rate(out.design, prob);
  out.diag.power = power_consumption(out.design, prob.config);
  out.diag.ee = out.diag.sum_rate_nats / out.diag.power;
  return out;
}

}  // namespace detail

/// Joint optimization of powers, beam selection, combiners, receivers, and
/// ADC bits by the penalized double loop.
inline SolveResult solve(const Problem& prob, const SolverOptions& opts) {
  return detail::solve_impl(prob, opts, detail::FreezeFlags{}, std::nullopt);
}

}  // namespace beambit
