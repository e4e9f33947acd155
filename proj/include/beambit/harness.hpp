#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "beambit/baselines.hpp"
#include "beambit/parallel.hpp"
#include "beambit/solver.hpp"

namespace beambit {

enum class SweepAxis { snr_db, n_rf_chains, n_antennas, avg_bits };

inline std::string_view axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::snr_db: return "snr_db";
    case SweepAxis::n_rf_chains: return "n_rf_chains";
    case SweepAxis::n_antennas: return "n_antennas";
    case SweepAxis::avg_bits: return "avg_bits";
  }
  throw std::logic_error("axis_name: unknown axis");
}

inline SweepAxis parse_axis(std::string_view name) {
  if (name == "snr_db") return SweepAxis::snr_db;
  if (name == "n_rf_chains") return SweepAxis::n_rf_chains;
  if (name == "n_antennas") return SweepAxis::n_antennas;
  if (name == "avg_bits") return SweepAxis::avg_bits;
  throw std::invalid_argument("unknown sweep axis: " + std::string(name));
}

struct ExperimentConfig {
  SystemConfig base;
  SolverOptions solver;
  SweepAxis sweep_axis = SweepAxis::snr_db;
  std::vector<double> sweep_values{10.0};
  std::vector<SchemeId> schemes{SchemeId::JBQA};
  int n_trials = 1;
  std::uint64_t base_seed = 1;
  std::string output_path = "trials.csv";
  bool record_timing = false;  // off by default so reruns are byte-identical
};

/// One CSV row. Rates are reported in bits/s/Hz and EE in bits/s/Hz per watt.
struct TrialRecord {
  std::uint64_t seed = 0;
  std::string sweep_axis;
  double sweep_value = 0;
  std::string scheme;
  double sum_rate = 0;
  double power = 0;
  double ee = 0;
  int outer_iters = 0;
  double final_eps = 0;
  bool converged = false;
  double wall_time = 0;  // seconds; 0 unless timing was enabled
};

/// Config for one sweep point. The SNR axis multiplies the transmit budget,
/// anchored so that snr_db = 10 reproduces the nominal budget.
inline SystemConfig apply_sweep_value(const SystemConfig& base, SweepAxis axis,
                                      double value) {
  SystemConfig cfg = base;
  switch (axis) {
    case SweepAxis::snr_db:
      cfg.snr_scale = std::pow(10.0, (value - 10.0) / 10.0);
      break;
    case SweepAxis::n_rf_chains:
      cfg.n_rf_chains = static_cast<int>(std::llround(value));
      break;
    case SweepAxis::n_antennas:
      cfg.n_antennas = static_cast<int>(std::llround(value));
      break;
    case SweepAxis::avg_bits:
      cfg.avg_bits = value;
      break;
  }
  cfg.validate();
  return cfg;
}

namespace detail {

inline std::string format_g12(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace detail

/// Run every (sweep value, trial, scheme) combination. Trial seeds are shared
/// across schemes and sweep values so comparisons are paired; rows come back
/// in canonical order (sweep value, scheme, seed).
inline std::vector<TrialRecord> run_sweep(const ExperimentConfig& exp,
                                          int n_threads = 0) {
  if (exp.n_trials < 1)
    throw std::invalid_argument("run_sweep: n_trials must be >= 1");
  if (exp.sweep_values.empty())
    throw std::invalid_argument("run_sweep: empty sweep_values");
  if (exp.schemes.empty())
    throw std::invalid_argument("run_sweep: empty scheme list");
  if (n_threads <= 0) n_threads = default_thread_count();

  struct Task {
    std::size_t value_idx;
    std::size_t scheme_idx;
    int trial;
  };
  std::vector<Task> tasks;
  for (std::size_t vi = 0; vi < exp.sweep_values.size(); ++vi)
    for (std::size_t si = 0; si < exp.schemes.size(); ++si)
      for (int t = 0; t < exp.n_trials; ++t) tasks.push_back({vi, si, t});

  std::vector<TrialRecord> records(tasks.size());
  parallel_for(tasks.size(), n_threads, [&](std::size_t i) {
    const Task& task = tasks[i];
    const double value = exp.sweep_values[task.value_idx];
    const SchemeId scheme = exp.schemes[task.scheme_idx];
    const std::uint64_t seed = exp.base_seed + task.trial;

    TrialRecord rec;
    rec.seed = seed;
    rec.sweep_axis = std::string(axis_name(exp.sweep_axis));
    rec.sweep_value = value;
    rec.scheme = std::string(scheme_name(scheme));
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SystemConfig cfg = apply_sweep_value(exp.base, exp.sweep_axis, value);
      const Problem prob = make_problem(cfg, seed);
      double rate_nats = 0, power = 0;
      if (scheme == SchemeId::ORACLE) {
        const OracleResult r = brute_force_oracle(prob, exp.solver);
        rate_nats = sum_rate(r.design, prob);
        power = power_consumption(r.design, cfg);
        rec.converged = true;
      } else {
        SolveResult r;
        if (scheme == SchemeId::JBQA)
          r = solve(prob, exp.solver);
        else if (scheme == SchemeId::RHC)
          r = rhc_solve(prob, exp.solver, seed);
        else
          r = uniform_bits_solve(prob, exp.solver);
        rate_nats = r.diag.sum_rate_nats;
        power = r.diag.power;
        rec.outer_iters = r.diag.outer_iters;
        rec.final_eps = r.diag.final_eps;
        rec.converged = r.diag.converged;
      }
      rec.sum_rate = rate_nats / detail::kLn2;
      rec.power = power;
      rec.ee = rec.sum_rate / rec.power;
    } catch (const std::exception& e) {
      rec.scheme += std::string(":error:") + e.what();
    }
    if (exp.record_timing) {
      const auto t1 = std::chrono::steady_clock::now();
      rec.wall_time = std::chrono::duration<double>(t1 - t0).count();
    }
    records[i] = rec;
  });

  std::stable_sort(records.begin(), records.end(),
                   [](const TrialRecord& a, const TrialRecord& b) {
                     if (a.sweep_value != b.sweep_value)
                       return a.sweep_value < b.sweep_value;
                     if (a.scheme != b.scheme) return a.scheme < b.scheme;
                     return a.seed < b.seed;
                   });
  return records;
}

inline std::string records_to_csv(const std::vector<TrialRecord>& records) {
  std::string out =
      "seed,sweep_axis,sweep_value,scheme,sum_rate,power,ee,outer_iters,"
      "final_eps,converged,wall_time\n";
  for (const TrialRecord& r : records) {
    out += std::to_string(r.seed);
    out += ',';
    out += r.sweep_axis;
    out += ',';
    out += detail::format_g12(r.sweep_value);
    out += ',';
    out += r.scheme;
    out += ',';
    out += detail::format_g12(r.sum_rate);
    out += ',';
    out += detail::format_g12(r.power);
    out += ',';
    out += detail::format_g12(r.ee);
    out += ',';
    out += std::to_string(r.outer_iters);
    out += ',';
    out += detail::format_g12(r.final_eps);
    out += ',';
    out += r.converged ? '1' : '0';
    out += ',';
    out += detail::format_g12(r.wall_time);
    out += '\n';
  }
  return out;
}

inline std::vector<TrialRecord> records_from_csv(const std::string& text) {
  std::vector<TrialRecord> out;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("records_from_csv: empty input");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    f.push_back(cur);
    if (f.size() != 11)
      throw std::invalid_argument("records_from_csv: malformed row: " + line);
    TrialRecord r;
    r.seed = std::stoull(f[0]);
    r.sweep_axis = f[1];
    r.sweep_value = std::stod(f[2]);
    r.scheme = f[3];
    r.sum_rate = std::stod(f[4]);
    r.power = std::stod(f[5]);
    r.ee = std::stod(f[6]);
    r.outer_iters = std::stoi(f[7]);
    r.final_eps = std::stod(f[8]);
    r.converged = f[9] == "1";
    r.wall_time = std::stod(f[10]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Mean and standard error of EE per (sweep value, scheme) group.
struct SummaryRow {
  std::string sweep_axis;
  double sweep_value = 0;
  std::string scheme;
  int n = 0;
  double ee_mean = 0;
  double ee_stderr = 0;
};

inline std::vector<SummaryRow> summarize(
    const std::vector<TrialRecord>& records) {
  if (records.empty())
    throw std::invalid_argument("summarize: no records");
  std::map<std::pair<double, std::string>, std::vector<const TrialRecord*>>
      groups;
  for (const TrialRecord& r : records)
    groups[{r.sweep_value, r.scheme}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, rows] : groups) {
    SummaryRow s;
    s.sweep_axis = rows.front()->sweep_axis;
    s.sweep_value = key.first;
    s.scheme = key.second;
    s.n = static_cast<int>(rows.size());
    double mean = 0;
    for (const TrialRecord* r : rows) mean += r->ee;
    mean /= s.n;
    double var = 0;
    for (const TrialRecord* r : rows)
      var += (r->ee - mean) * (r->ee - mean);
    s.ee_mean = mean;
    s.ee_stderr = s.n > 1 ? std::sqrt(var / (s.n - 1)) / std::sqrt(s.n) : 0.0;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string summary_to_csv(const std::vector<SummaryRow>& rows) {
  std::string out = "sweep_axis,sweep_value,scheme,n,ee_mean,ee_stderr\n";
  for (const SummaryRow& s : rows) {
    out += s.sweep_axis;
    out += ',';
    out += detail::format_g12(s.sweep_value);
    out += ',';
    out += s.scheme;
    out += ',';
    out += std::to_string(s.n);
    out += ',';
    out += detail::format_g12(s.ee_mean);
    out += ',';
    out += detail::format_g12(s.ee_stderr);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat key = value config files ('#' starts a comment, lists are
// comma-separated). Keys mirror the SystemConfig / ExperimentConfig /
// SolverOptions field names.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig exp;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    SystemConfig& c = exp.base;
    SolverOptions& o = exp.solver;
    try {
      if (key == "preset") {
        if (value == "desk")
          c = SystemConfig::desk();
        else if (value == "full")
          c = SystemConfig::full();
        else if (value == "tiny")
          c = SystemConfig::tiny();
        else
          throw std::invalid_argument("unknown preset: " + value);
      } else if (key == "n_antennas") c.n_antennas = std::stoi(value);
      else if (key == "n_rf_chains") c.n_rf_chains = std::stoi(value);
      else if (key == "codebook_size") c.codebook_size = std::stoi(value);
      else if (key == "n_users") c.n_users = std::stoi(value);
      else if (key == "n_paths") c.n_paths = std::stoi(value);
      else if (key == "noise_power") c.noise_power = std::stod(value);
      else if (key == "per_user_power_budget")
        c.per_user_power_budget = std::stod(value);
      else if (key == "bit_min") c.bit_min = std::stoi(value);
      else if (key == "bit_max") c.bit_max = std::stoi(value);
      else if (key == "avg_bits") c.avg_bits = std::stod(value);
      else if (key == "adc_energy_coeff") c.adc_energy_coeff = std::stod(value);
      else if (key == "sampling_rate") c.sampling_rate = std::stod(value);
      else if (key == "baseband_power") c.baseband_power = std::stod(value);
      else if (key == "rf_chain_power") c.rf_chain_power = std::stod(value);
      else if (key == "switch_power") c.switch_power = std::stod(value);
      else if (key == "lna_power") c.lna_power = std::stod(value);
      else if (key == "cell_radius") c.cell_radius = std::stod(value);
      else if (key == "snr_scale") c.snr_scale = std::stod(value);
      else if (key == "rho0") o.rho0 = std::stod(value);
      else if (key == "shrink") o.shrink = std::stod(value);
      else if (key == "tol") o.tol = std::stod(value);
      else if (key == "max_inner") o.max_inner = std::stoi(value);
      else if (key == "max_outer") o.max_outer = std::stoi(value);
      else if (key == "prox_weight") o.prox_weight = std::stod(value);
      else if (key == "mu0") o.mu0 = std::stod(value);
      else if (key == "bisection_tol") o.bisection_tol = std::stod(value);
      else if (key == "inner_stall_tol") o.inner_stall_tol = std::stod(value);
      else if (key == "classical_dinkelbach")
        o.classical_dinkelbach = value == "true" || value == "1";
      else if (key == "sweep_axis") exp.sweep_axis = parse_axis(value);
      else if (key == "sweep_values") {
        exp.sweep_values.clear();
        for (const std::string& v : detail::split_list(value))
          exp.sweep_values.push_back(std::stod(v));
      } else if (key == "schemes") {
        exp.schemes.clear();
        for (const std::string& v : detail::split_list(value))
          exp.schemes.push_back(parse_scheme(v));
      } else if (key == "n_trials") exp.n_trials = std::stoi(value);
      else if (key == "base_seed") exp.base_seed = std::stoull(value);
      else if (key == "output_path") exp.output_path = value;
      else if (key == "record_timing")
        exp.record_timing = value == "true" || value == "1";
      else
        throw std::invalid_argument("unknown key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": bad value for " + key);
    }
  }
  return exp;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(read_file(path));
}

}  // namespace beambit
