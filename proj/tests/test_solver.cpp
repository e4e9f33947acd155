#include <catch2/catch.hpp>
#include <cmath>

#include "beambit/solver.hpp"
#include "support/builders.hpp"
#include "support/reference.hpp"

using namespace beambit;

namespace {

Problem desk_problem(std::uint64_t seed) {
  return make_problem(SystemConfig::desk(), seed);
}

SolverState feasible_state(const Problem& prob, Rng& rng) {
  SolverState st;
  st.design = testkit::random_design(prob, rng);
  st.ghat = st.design.G;
  st.duals.zeta = Mat::Zero(prob.config.codebook_size, prob.config.n_rf_chains);
  st.duals.nu = Mat::Zero(prob.config.codebook_size, prob.config.n_rf_chains);
  st.duals.varsigma = Vec::Zero(prob.config.n_rf_chains);
  st.rho = 10.0;
  st.mu = 1.0;
  st.fp = refresh_fp(st.design, prob);
  return st;
}

}  // namespace

TEST_CASE("augmented Lagrangian reduces to the unpenalized objective on a "
          "feasible point",
          "[solver]") {
  Rng rng(31);
  const Problem prob = desk_problem(1);
  SolverState st = feasible_state(prob, rng);
  const double j = augmented_lagrangian(st, prob);
  const double want = surrogate_sum_rate(st.design, st.fp, prob) -
                      st.fp.eta * power_consumption(st.design, prob.config);
  CHECK(j == Approx(want).margin(1e-12 * (1.0 + std::abs(want))));
  const LagrangianTerms terms = al_terms(st, prob);
  CHECK(terms.pen_copy == 0.0);
  CHECK(terms.pen_comp == 0.0);
  CHECK(terms.pen_col == 0.0);
  CHECK(terms.total() == Approx(j));

  st.rho = -1.0;
  CHECK_THROWS_AS(augmented_lagrangian(st, prob), std::invalid_argument);
}

TEST_CASE("a single copy-constraint violation is penalized quadratically",
          "[solver]") {
  Rng rng(33);
  const Problem prob = desk_problem(2);
  SolverState st = feasible_state(prob, rng);
  st.rho = 10.0;
  // g = 0.5 at an entry whose ghat is 1: only the copy residual is nonzero
  // for that entry (0.5 * (1 - 1) = 0 kills the complementarity term).
  int s0 = -1, m0 = 0;
  for (int s = 0; s < st.design.G.rows(); ++s)
    if (st.design.G(s, m0) == 1.0) s0 = s;
  st.design.G(s0, m0) = 0.5;
  st.ghat(s0, m0) = 1.0;
  const LagrangianTerms terms = al_terms(st, prob);
  CHECK(terms.pen_copy == Approx(0.0125).epsilon(1e-12));  // (1/20) * 0.25
  CHECK(terms.pen_comp == 0.0);
  // column sum dropped to 0.5: that residual is also 0.25-squared
  CHECK(terms.pen_col == Approx(0.0125).epsilon(1e-12));
}

TEST_CASE("violation indicator takes the max residual", "[solver]") {
  Rng rng(35);
  const Problem prob = desk_problem(3);
  SolverState st = feasible_state(prob, rng);
  CHECK(violation_eps(st) == 0.0);

  // g = 1 with ghat = 0.5 contributes 0.5 through the complementarity term
  int s0 = -1;
  for (int s = 0; s < st.design.G.rows(); ++s)
    if (st.design.G(s, 0) == 1.0) s0 = s;
  st.ghat(s0, 0) = 0.5;
  CHECK(violation_eps(st) == Approx(0.5));

  // the indicator is a max, not a sum
  SolverState st2 = feasible_state(prob, rng);
  int s1 = -1;
  for (int s = 0; s < st2.design.G.rows(); ++s)
    if (st2.design.G(s, 0) == 1.0) s1 = s;
  st2.ghat(s1, 0) = 0.8;  // residual 0.2 (copy), 0.2 (comp)
  int s2 = -1;
  for (int s = 0; s < st2.design.G.rows(); ++s)
    if (st2.design.G(s, 1) == 1.0) s2 = s;
  st2.ghat(s2, 1) = 0.7;  // residual 0.3
  CHECK(violation_eps(st2) == Approx(0.3));
}

TEST_CASE("dual updates follow the scaled residuals", "[solver]") {
  Rng rng(37);
  const Problem prob = desk_problem(4);
  SolverState st = feasible_state(prob, rng);
  st.rho = 10.0;
  const DualVars before = st.duals;
  dual_update(st);
  CHECK((st.duals.zeta - before.zeta).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.duals.nu - before.nu).cwiseAbs().maxCoeff() == 0.0);
  CHECK((st.duals.varsigma - before.varsigma).cwiseAbs().maxCoeff() == 0.0);

  int s0 = -1;
  for (int s = 0; s < st.design.G.rows(); ++s)
    if (st.design.G(s, 0) == 1.0) s0 = s;
  st.ghat(s0, 0) = 0.6;
  dual_update(st);
  CHECK(st.duals.zeta(s0, 0) == Approx(0.04));
  CHECK(st.duals.nu(s0, 0) == Approx(0.04));

  const double rho_before = st.rho;
  penalty_update(st, 0.7);
  CHECK(st.rho == Approx(0.7 * rho_before));
}

TEST_CASE("outer step branches on the violation threshold", "[solver]") {
  Rng rng(38);
  const Problem prob = desk_problem(17);
  SolverState st = feasible_state(prob, rng);
  st.rho = 10.0;
  st.mu = 0.1;
  int s0 = -1;
  for (int s = 0; s < st.design.G.rows(); ++s)
    if (st.design.G(s, 0) == 1.0) s0 = s;

  // violation above the threshold: rho shrinks, duals stay
  st.ghat(s0, 0) = 0.5;  // eps = 0.5 > mu
  const DualVars before = st.duals;
  outer_update(st, violation_eps(st), 0.7);
  CHECK(st.rho == Approx(7.0));
  CHECK((st.duals.zeta - before.zeta).cwiseAbs().maxCoeff() == 0.0);
  CHECK(st.mu == Approx(0.7 * 0.5));

  // violation under the threshold: duals move, rho stays
  st.mu = 0.6;
  outer_update(st, violation_eps(st), 0.7);
  CHECK(st.rho == Approx(7.0));
  CHECK(st.duals.zeta(s0, 0) == Approx(0.5 / 7.0));
}

TEST_CASE("power update: zero channel, budget clamp, and the 1-D oracle",
          "[solver]") {
  Rng rng(39);

  SECTION("zero effective channel gives zero power") {
    const Problem prob = desk_problem(5);
    SolverState st = feasible_state(prob, rng);
    st.fp.lambda(1) = cplx(0, 0);
    update_p(st, prob);
    CHECK(st.design.p(1) == 0.0);
  }

  SECTION("budget-limited users sit exactly at the boundary") {
    SystemConfig cfg = SystemConfig::desk();
    cfg.snr_scale = 1e-4;  // tiny budget: unconstrained optimum far above
    const Problem prob = make_problem(cfg, 6);
    SolverState st = feasible_state(prob, rng);
    st.fp = refresh_fp(st.design, prob);
    update_p(st, prob);
    int at_boundary = 0;
    for (int k = 0; k < st.design.p.size(); ++k)
      if (st.design.p(k) == cfg.tx_power_budget()) ++at_boundary;
    CHECK(at_boundary > 0);
  }

  SECTION("matches the golden-section reference, clamped cases included") {
    double worst = 0;
    int clamped = 0;
    for (int trial = 0; trial < 25; ++trial) {
      SystemConfig cfg = SystemConfig::desk();
      if (trial % 2) cfg.snr_scale = 0.01;
      const Problem prob = make_problem(cfg, 40 + trial);
      SolverState st = feasible_state(prob, rng);
      st.fp = refresh_fp(st.design, prob);
      SolverState ref = st;
      update_p(st, prob);
      for (int k = 0; k < st.design.p.size(); ++k) {
        const double oracle =
            refimpl::best_power_1d(ref, prob, k, cfg.tx_power_budget());
        if (st.design.p(k) == cfg.tx_power_budget()) ++clamped;
        const double rel = std::abs(st.design.p(k) - oracle) /
                           std::max(1e-300, oracle);
        worst = std::max(worst, rel);
      }
    }
    INFO("worst relative deviation " << worst << ", clamped " << clamped);
    CHECK(worst <= 1e-6);
    CHECK(clamped > 0);
  }
}

TEST_CASE("ghat update solves its scalar quadratic", "[solver]") {
  Rng rng(41);
  const Problem prob = desk_problem(7);
  SolverState st = feasible_state(prob, rng);
  st.fp.lambda.setZero();  // penalty-only objective
  st.rho = 10.0;
  st.duals.zeta.setZero();
  st.duals.nu.setZero();
  // an entry with g = 1, zero duals: the maximizer is ghat = 1
  int s0 = -1;
  for (int s = 0; s < st.design.G.rows(); ++s)
    if (st.design.G(s, 0) == 1.0) s0 = s;
  st.ghat(s0, 0) = 0.3;
  update_linear_block(st, LinearBlock::ghat, prob);
  CHECK(st.ghat(s0, 0) == Approx(1.0));
  // an entry with g = 0 and zero duals stays at 0
  int s1 = (s0 + 1) % st.design.G.rows();
  CHECK(st.design.G(s1, 0) == 0.0);
  CHECK(st.ghat(s1, 0) == Approx(0.0).margin(1e-15));
}

TEST_CASE("receiver update is the regularized MMSE direction for one user",
          "[solver]") {
  SystemConfig cfg = SystemConfig::tiny();
  cfg.n_users = 1;
  cfg.bit_max = 1000;
  cfg.avg_bits = 600;  // beta underflows: no quantization noise
  const Problem prob = make_problem(cfg, 8);
  Rng rng(43);
  SolverState st = feasible_state(prob, rng);
  st.design.bits = BitAllocation::uniform(cfg.n_rf_chains, 600.0);
  st.design.D = CMat::Identity(cfg.n_rf_chains, cfg.n_rf_chains);
  st.fp = refresh_fp(st.design, prob);
  update_linear_block(st, LinearBlock::u, prob);

  const CMat q = effective_combiner(prob.codebook, st.design.G);
  const CVec m = q.adjoint() * prob.H.col(0);
  const CMat gram = st.design.p(0) * m * m.adjoint() +
                    prob.config.noise_power * (q.adjoint() * q);
  const CVec want = gram.ldlt().solve(m);
  const CVec got = st.design.U.col(0);
  const cplx scale = want.dot(got) / want.squaredNorm();
  CHECK((got - scale * want).norm() < 1e-8 * got.norm());
}

TEST_CASE("every block update increases the penalized objective", "[solver]") {
  Rng rng(45);
  for (int trial = 0; trial < 8; ++trial) {
    const Problem prob = desk_problem(60 + trial);
    SolverState st = testkit::random_state(prob, rng, true);
    double j = augmented_lagrangian(st, prob);
    for (LinearBlock block : {LinearBlock::g, LinearBlock::ghat,
                              LinearBlock::u, LinearBlock::d}) {
      update_linear_block(st, block, prob);
      const double j2 = augmented_lagrangian(st, prob);
      REQUIRE(j2 >= j - 1e-9 * (1.0 + std::abs(j)));
      j = j2;
    }
    update_p(st, prob);
    const double j3 = augmented_lagrangian(st, prob);
    REQUIRE(j3 >= j - 1e-9 * (1.0 + std::abs(j)));
  }
}

TEST_CASE("linear block updates land on stationary points", "[solver]") {
  Rng rng(47);
  const Problem prob = desk_problem(9);
  SolverState st = testkit::random_state(prob, rng, true);
  const double h = 1e-6;

  update_linear_block(st, LinearBlock::g, prob);
  // last row updated: J must be stationary in that row
  const auto s_last = st.design.G.rows() - 1;
  const double j0 = augmented_lagrangian(st, prob);
  for (int m = 0; m < st.design.G.cols(); ++m) {
    SolverState up = st, dn = st;
    up.design.G(s_last, m) += h;
    dn.design.G(s_last, m) -= h;
    const double fd =
        (augmented_lagrangian(up, prob) - augmented_lagrangian(dn, prob)) /
        (2.0 * h);
    REQUIRE(std::abs(fd) < 1e-5 * (1.0 + std::abs(j0)));
  }

  update_linear_block(st, LinearBlock::d, prob);
  for (int i = 0; i < st.design.D.rows(); ++i)
    for (int j = 0; j < st.design.D.cols(); ++j)
      for (int part = 0; part < 2; ++part) {
        SolverState up = st, dn = st;
        const cplx delta = part == 0 ? cplx(h, 0) : cplx(0, h);
        up.design.D(i, j) += delta;
        dn.design.D(i, j) -= delta;
        const double fd = (augmented_lagrangian(up, prob) -
                           augmented_lagrangian(dn, prob)) /
                          (2.0 * h);
        REQUIRE(std::abs(fd) < 1e-5 * (1.0 + std::abs(j0)));
      }
}

TEST_CASE("bit gradient matches central finite differences", "[solver]") {
  Rng rng(49);
  for (int trial = 0; trial < 10; ++trial) {
    const Problem prob = desk_problem(80 + trial);
    SolverState st = testkit::random_state(prob, rng, true);
    st.fp.eta = rng.uniform(0.1, 3.0);
    const Vec grad = gradient_b(st, prob);
    const double h = 1e-5;
    for (int m = 0; m < grad.size(); ++m) {
      SolverState up = st, dn = st;
      up.design.bits.b(m) += h;
      dn.design.bits.b(m) -= h;
      const double fd =
          (augmented_lagrangian(up, prob) - augmented_lagrangian(dn, prob)) /
          (2.0 * h);
      REQUIRE(std::abs(fd - grad(m)) <=
              1e-4 * std::max(1e-12, std::abs(fd)));
    }
  }
}

TEST_CASE("bit gradient reduces to the power term when lambda vanishes",
          "[solver]") {
  Rng rng(51);
  const Problem prob = desk_problem(10);
  SolverState st = testkit::random_state(prob, rng, true);
  st.fp.lambda.setZero();
  st.fp.eta = 1.7;
  const Vec grad = gradient_b(st, prob);
  const SystemConfig& cfg = prob.config;
  for (int m = 0; m < grad.size(); ++m) {
    const double want = -st.fp.eta * std::log(2.0) * cfg.adc_energy_coeff *
                        cfg.sampling_rate *
                        std::exp2(st.design.bits.b(m) + 1.0);
    REQUIRE(grad(m) == Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("bit gradient is symmetric across identical chains", "[solver]") {
  const SystemConfig cfg = SystemConfig::tiny();
  const Problem prob = make_problem(cfg, 11);
  Rng rng(53);
  SolverState st = feasible_state(prob, rng);
  // duplicate chain 0's effective path on chain 1
  st.design.G.col(1) = st.design.G.col(0);
  st.design.U.row(1) = st.design.U.row(0);
  st.design.D = CMat::Identity(2, 2);
  st.design.bits.b.setConstant(2.0);
  st.fp = refresh_fp(st.design, prob);
  const Vec grad = gradient_b(st, prob);
  CHECK(grad(0) == Approx(grad(1)).epsilon(1e-10));
}

TEST_CASE("bit step arithmetic", "[solver]") {
  const double theta = 10.0;
  Vec b(2);
  b << 4.0, 5.0;

  // zero gradient: proximal point
  CHECK((detail::bit_step(b, Vec::Zero(2), theta, 1, 8, 16) - b).norm() ==
        0.0);

  // interior stationarity: step is grad / (2 theta)
  Vec g(2);
  g << 4.0 * theta, -4.0 * theta;
  const Vec stepped = detail::bit_step(b, g, theta, 1, 8, 16);
  CHECK(stepped(0) == Approx(6.0));
  CHECK(stepped(1) == Approx(3.0));
}

TEST_CASE("bit step with an active budget matches the KKT oracle",
          "[solver]") {
  Rng rng(55);
  for (int trial = 0; trial < 40; ++trial) {
    const int m = 3;
    Vec b(m), g(m);
    for (int i = 0; i < m; ++i) {
      b(i) = rng.uniform(1.0, 8.0);
      g(i) = rng.normal() * 30.0;
    }
    const double theta = 10.0;
    const double budget = 9.0;  // tight enough to activate often
    const Vec mine = detail::bit_step(b, g, theta, 1.0, 8.0, budget);
    const Vec oracle = refimpl::qp_oracle(b, g, theta, 1.0, 8.0, budget);
    REQUIRE((mine - oracle).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("rounding rule follows the smallest workable threshold",
          "[solver]") {
  Vec ints(3);
  ints << 2, 5, 7;
  CHECK((round_bits(ints, 8.0, 3).b - ints).cwiseAbs().maxCoeff() == 0.0);

  Vec frac(2);
  frac << 2.3, 3.7;
  const BitAllocation r6 = round_bits(frac, 3.0, 2);  // budget 6
  CHECK(r6.b(0) == 2.0);
  CHECK(r6.b(1) == 4.0);
  const BitAllocation r5 = round_bits(frac, 2.5, 2);  // budget 5
  CHECK(r5.b(0) == 2.0);
  CHECK(r5.b(1) == 3.0);
}

TEST_CASE("trace increases across block updates within an inner pass",
          "[solver]") {
  SolverOptions opts;
  opts.log_block_objectives = true;
  const Problem prob = desk_problem(12);
  const SolveResult res = solve(prob, opts);
  REQUIRE(!res.diag.block_log.empty());
  int checked = 0;
  for (std::size_t i = 1; i < res.diag.block_log.size(); ++i) {
    const auto& prev = res.diag.block_log[i - 1];
    const auto& cur = res.diag.block_log[i];
    if (prev.outer == cur.outer && prev.inner == cur.inner) {
      REQUIRE(cur.objective >=
              prev.objective - 1e-9 * (1.0 + std::abs(prev.objective)));
      ++checked;
    }
  }
  CHECK(checked > 10);
}

TEST_CASE("solve is deterministic and returns a feasible design", "[solver]") {
  const Problem prob = desk_problem(13);
  SolverOptions opts;
  const SolveResult a = solve(prob, opts);
  const SolveResult b = solve(prob, opts);
  CHECK((a.design.p - b.design.p).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.design.G - b.design.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.design.bits.b - b.design.bits.b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.design.D - b.design.D).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.design.U - b.design.U).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.diag.ee == b.diag.ee);
  CHECK_NOTHROW(assert_feasible(a.design, prob.config));
}

TEST_CASE("converged solves satisfy the stopping contract", "[solver]") {
  SolverOptions opts;
  for (int trial = 0; trial < 5; ++trial) {
    const Problem prob = desk_problem(90 + trial);
    const SolveResult res = solve(prob, opts);
    if (!res.diag.converged) continue;
    REQUIRE(res.diag.final_eps <= opts.tol);
    const Mat& g = res.diag.relaxed_selection;
    for (int s = 0; s < g.rows(); ++s)
      for (int m = 0; m < g.cols(); ++m) {
        const double d = std::min(std::abs(g(s, m)), std::abs(g(s, m) - 1.0));
        REQUIRE(d <= 1e-3);
      }
  }
}

TEST_CASE("dinkelbach consistency at the returned design", "[solver]") {
  const Problem prob = desk_problem(14);
  const SolveResult res = solve(prob, SolverOptions{});
  const double eta = res.diag.ee;
  const double gap = res.diag.sum_rate_nats - eta * res.diag.power;
  CHECK(std::abs(gap) <= 1e-10 * (1.0 + res.diag.sum_rate_nats));
}

TEST_CASE("degenerate all-zero channels are legal", "[solver]") {
  Problem prob = desk_problem(15);
  prob.H.col(2).setZero();
  const SolveResult res = solve(prob, SolverOptions{});
  CHECK(res.design.p(2) == 0.0);
  CHECK_NOTHROW(assert_feasible(res.design, prob.config));
  CHECK(sinr(res.design, prob, 2) == 0.0);
}

TEST_CASE("classical Dinkelbach variant also converges", "[solver]") {
  SolverOptions opts;
  opts.classical_dinkelbach = true;
  const Problem prob = desk_problem(16);
  const SolveResult res = solve(prob, opts);
  CHECK(res.diag.converged);
  CHECK_NOTHROW(assert_feasible(res.design, prob.config));
}
