#include <catch2/catch.hpp>

#include "beambit/baselines.hpp"
#include "support/builders.hpp"

using namespace beambit;

TEST_CASE("scheme names round-trip", "[baselines]") {
  for (SchemeId s : {SchemeId::JBQA, SchemeId::RHC, SchemeId::UNIFORM_BITS,
                     SchemeId::ORACLE})
    CHECK(parse_scheme(scheme_name(s)) == s);
  CHECK_THROWS_AS(parse_scheme("FDC"), std::invalid_argument);
}

TEST_CASE("random hybrid combining is seeded and feasible", "[baselines]") {
  const Problem prob = make_problem(SystemConfig::tiny(), 21);
  SolverOptions opts;
  const SolveResult a = rhc_solve(prob, opts, 5);
  const SolveResult b = rhc_solve(prob, opts, 5);
  CHECK((a.design.G - b.design.G).cwiseAbs().maxCoeff() == 0.0);
  const SolveResult c = rhc_solve(prob, opts, 6);
  CHECK((a.design.G - c.design.G).cwiseAbs().maxCoeff() >= 0.0);
  CHECK_NOTHROW(assert_feasible(a.design, prob.config));
  // bits stay at the uniform allocation
  CHECK((a.design.bits.b.array() == prob.config.avg_bits).all());
}

TEST_CASE("uniform-bit scheme equals the joint scheme when the box is a "
          "point",
          "[baselines]") {
  SystemConfig cfg = SystemConfig::tiny();
  cfg.bit_min = 2;
  cfg.bit_max = 2;
  cfg.avg_bits = 2.0;
  const Problem prob = make_problem(cfg, 22);
  SolverOptions opts;
  const SolveResult joint = solve(prob, opts);
  const SolveResult uniform = uniform_bits_solve(prob, opts);
  CHECK((joint.design.bits.b - uniform.design.bits.b).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK_NOTHROW(assert_feasible(uniform.design, prob.config));
}

TEST_CASE("uniform-bit scheme requires integer average bits", "[baselines]") {
  SystemConfig cfg = SystemConfig::tiny();
  cfg.avg_bits = 2.5;
  const Problem prob = make_problem(cfg, 23);
  CHECK_THROWS_AS(uniform_bits_solve(prob, SolverOptions{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(rhc_solve(prob, SolverOptions{}, 1), std::invalid_argument);
}

TEST_CASE("enumeration counts", "[baselines]") {
  CHECK(count_assignments(3, 2) == 6);
  CHECK(count_assignments(6, 4) == 360);
  const SystemConfig tiny = SystemConfig::tiny();  // M=2, bits 1..4, budget 4
  CHECK(count_bit_allocations(tiny) == 6);
}

TEST_CASE("oracle rejects oversized instances", "[baselines]") {
  SystemConfig cfg = SystemConfig::desk();
  cfg.n_rf_chains = 4;
  cfg.codebook_size = 6;
  cfg.bit_max = 8;
  cfg.avg_bits = 8.0;  // large bit space: 360 * huge > 1e5
  const Problem prob = make_problem(cfg, 24);
  try {
    brute_force_oracle(prob, SolverOptions{});
    FAIL("expected the combination budget to be exceeded");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("combinations") != std::string::npos);
  }
}

TEST_CASE("oracle enumerates and dominates the heuristics", "[baselines]") {
  SolverOptions opts;
  for (std::uint64_t seed : {31, 32, 33}) {
    const Problem prob = make_problem(SystemConfig::tiny(), seed);
    const OracleResult oracle = brute_force_oracle(prob, opts, 2);
    CHECK(oracle.combinations == 36);  // 6 assignments x 6 allocations
    CHECK_NOTHROW(assert_feasible(oracle.design, prob.config));

    const SolveResult joint = solve(prob, opts);
    const SolveResult random_g = rhc_solve(prob, opts, seed);
    const SolveResult uniform = uniform_bits_solve(prob, opts);
    const double slack = 1e-6 * (1.0 + oracle.ee);
    CHECK(oracle.ee >= joint.diag.ee - slack);
    CHECK(oracle.ee >= random_g.diag.ee - slack);
    CHECK(oracle.ee >= uniform.diag.ee - slack);
  }
}

TEST_CASE("oracle parallel reduction is deterministic", "[baselines]") {
  const Problem prob = make_problem(SystemConfig::tiny(), 34);
  SolverOptions opts;
  const OracleResult serial = brute_force_oracle(prob, opts, 1);
  const OracleResult parallel = brute_force_oracle(prob, opts, 4);
  CHECK(serial.ee == parallel.ee);
  CHECK((serial.design.G - parallel.design.G).cwiseAbs().maxCoeff() == 0.0);
  CHECK((serial.design.bits.b - parallel.design.bits.b).cwiseAbs().maxCoeff() ==
        0.0);
}
