// Command-line front end: run sweeps from a config file, summarize result
// CSVs, and check the solver against the exhaustive oracle on instances
// small enough to enumerate.

#include <CLI11.hpp>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "beambit/beambit.hpp"

namespace {

int cmd_run(const std::string& config_path,
            const std::optional<std::uint64_t>& seed,
            const std::optional<int>& trials,
            const std::optional<std::string>& out, bool timing) {
  beambit::ExperimentConfig exp =
      beambit::load_experiment_config(config_path);
  if (seed) exp.base_seed = *seed;
  if (trials) exp.n_trials = *trials;
  if (out) exp.output_path = *out;
  if (timing) exp.record_timing = true;

  const auto records = beambit::run_sweep(exp);
  beambit::write_file(exp.output_path, beambit::records_to_csv(records));
  std::cout << "wrote " << records.size() << " records to "
            << exp.output_path << "\n";
  int errors = 0;
  for (const auto& r : records)
    if (r.scheme.find(":error:") != std::string::npos) ++errors;
  if (errors > 0)
    std::cerr << errors << " trial(s) recorded an error\n";
  return 0;
}

int cmd_summarize(const std::string& csv_path,
                  const std::optional<std::string>& out) {
  const auto records =
      beambit::records_from_csv(beambit::read_file(csv_path));
  const auto rows = beambit::summarize(records);
  std::string out_path;
  if (out) {
    out_path = *out;
  } else {
    std::filesystem::path p(csv_path);
    p.replace_extension();
    out_path = p.string() + "_summary.csv";
  }
  beambit::write_file(out_path, beambit::summary_to_csv(rows));
  std::cout << "wrote " << rows.size() << " groups to " << out_path << "\n";
  return 0;
}

int cmd_oracle_check(const std::string& config_path,
                     const std::optional<std::uint64_t>& seed,
                     const std::optional<int>& trials) {
  beambit::ExperimentConfig exp =
      beambit::load_experiment_config(config_path);
  if (seed) exp.base_seed = *seed;
  if (trials) exp.n_trials = *trials;

  const int n = exp.n_trials;
  int hits = 0;
  for (int t = 0; t < n; ++t) {
    const std::uint64_t s = exp.base_seed + t;
    const beambit::Problem prob = beambit::make_problem(exp.base, s);
    const auto jbqa = beambit::solve(prob, exp.solver);
    const auto oracle = beambit::brute_force_oracle(
        prob, exp.solver, beambit::default_thread_count());
    const double ratio = oracle.ee > 0 ? jbqa.diag.ee / oracle.ee : 1.0;
    const bool ok = ratio >= 0.90;
    hits += ok;
    std::cout << "seed " << s << ": solver_ee=" << jbqa.diag.ee
              << " oracle_ee=" << oracle.ee << " ratio=" << ratio << " "
              << (ok ? "ok" : "below-0.90") << "\n";
  }
  const double frac = static_cast<double>(hits) / n;
  std::cout << "within 0.90 of the oracle on " << hits << "/" << n
            << " seeds (" << 100.0 * frac << "%)\n";
  if (frac < 0.80) {
    std::cerr << "oracle-check failed: below the 80% requirement\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beam selection and ADC bit allocation experiments"};
  app.require_subcommand(1);

  std::string config_path, csv_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  std::optional<std::string> out;
  bool timing = false;

  auto* run = app.add_subcommand("run", "run a sweep from a config file");
  run->add_option("config", config_path, "config file path")->required();
  run->add_option("--seed", seed, "override base_seed");
  run->add_option("--trials", trials, "override n_trials");
  run->add_option("--out", out, "override output_path");
  run->add_flag("--timing", timing,
                "record wall time per trial (output no longer reproducible)");

  auto* summ = app.add_subcommand("summarize", "group a trial CSV");
  summ->add_option("csv", csv_path, "trial CSV path")->required();
  summ->add_option("--out", out, "summary output path");

  auto* oracle =
      app.add_subcommand("oracle-check", "compare against exhaustive search");
  oracle->add_option("config", config_path, "config file path (tiny instance)")
      ->required();
  oracle->add_option("--seed", seed, "override base_seed");
  oracle->add_option("--trials", trials, "override n_trials");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, seed, trials, out, timing);
    if (summ->parsed()) return cmd_summarize(csv_path, out);
    if (oracle->parsed()) return cmd_oracle_check(config_path, seed, trials);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
