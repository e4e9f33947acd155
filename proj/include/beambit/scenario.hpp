#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "beambit/random.hpp"

namespace beambit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using cplx = std::complex<double>;

/// Scenario and hardware constants for one cell.
///
/// Counts: n_antennas (BS array), n_rf_chains, codebook_size, n_users,
/// n_paths per user. Powers are in watts, the ADC energy coefficient in
/// joules per conversion step, the sampling rate in Hz, distances in meters.
/// snr_scale multiplies the per-user transmit budget; 1.0 reproduces the
/// nominal operating point.
struct SystemConfig {
  int n_antennas = 16;
  int n_rf_chains = 4;
  int codebook_size = 6;
  int n_users = 4;
  int n_paths = 4;
  double noise_power = 1e-13;           // -100 dBm
  double per_user_power_budget = 1e-2;  // 10 dBm
  int bit_min = 1;
  int bit_max = 8;
  double avg_bits = 3.0;
  double adc_energy_coeff = 9e-12;
  double sampling_rate = 1e9;
  double baseband_power = 0.2;
  double rf_chain_power = 0.04;
  double switch_power = 0.005;
  double lna_power = 0.02;
  double cell_radius = 200.0;
  double snr_scale = 1.0;

  /// Effective transmit budget per user (snr_scale applied).
  double tx_power_budget() const { return per_user_power_budget * snr_scale; }

  /// Bit budget over all RF chains.
  double total_bit_budget() const { return n_rf_chains * avg_bits; }

  /// Fixed circuit power P_B + M (P_R + P_S + P_L).
  double fixed_circuit_power() const {
    return baseband_power +
           n_rf_chains * (rf_chain_power + switch_power + lna_power);
  }

  void validate() const {
    if (!(n_antennas >= codebook_size && codebook_size >= n_rf_chains &&
          n_rf_chains >= 1))
      throw std::invalid_argument("config: need N >= S >= M >= 1");
    if (n_users < 1 || n_paths < 1)
      throw std::invalid_argument("config: need K >= 1 and L >= 1");
    if (!(bit_min >= 1 && bit_min <= avg_bits && avg_bits <= bit_max))
      throw std::invalid_argument("config: need 1 <= b_min <= b_avg <= b_max");
    if (!(noise_power > 0) || !(per_user_power_budget > 0) ||
        !(adc_energy_coeff > 0) || !(sampling_rate > 0) ||
        !(baseband_power > 0) || !(rf_chain_power > 0) ||
        !(switch_power > 0) || !(lna_power > 0) || !(snr_scale > 0))
      throw std::invalid_argument("config: power constants must be positive");
    if (!(cell_radius >= 1.0))
      throw std::invalid_argument("config: cell radius below minimum distance");
  }

  /// Small profile used for CI-scale experiments.
  static SystemConfig desk() { return SystemConfig{}; }

  /// Full-size profile (64 antennas, 12-beam codebook, 12 users).
  static SystemConfig full() {
    SystemConfig c;
    c.n_antennas = 64;
    c.n_rf_chains = 8;
    c.codebook_size = 12;
    c.n_users = 12;
    c.n_paths = 10;
    return c;
  }

  /// Instance small enough for exhaustive search over (G, b).
  static SystemConfig tiny() {
    SystemConfig c;
    c.n_antennas = 4;
    c.n_rf_chains = 2;
    c.codebook_size = 3;
    c.n_users = 2;
    c.n_paths = 2;
    c.bit_min = 1;
    c.bit_max = 4;
    c.avg_bits = 2.0;
    return c;
  }
};

/// Per-user multipath parameters drawn for one trial.
struct PathParams {
  CVec gains;           // L complex gains, unit variance
  Vec angles;           // L angles of arrival in [-pi/2, pi/2]
  double distance = 0;  // meters from the BS
  double shadowing_db = 0;
};

/// Channel matrix H (N x K, linear amplitude) plus the draw that produced it.
struct ChannelSet {
  CMat H;
  std::vector<PathParams> paths;  // one entry per user
};

/// RF combining codebook, N x S. Columns are candidate beams.
struct Codebook {
  CMat W;
};

/// Uniform linear array response, entry m = (1/n) exp(j pi m sin(angle)).
inline CVec array_response(double angle, int n) {
  CVec a(n);
  const double s = std::sin(angle);
  for (int m = 0; m < n; ++m) {
    const double phase = std::numbers::pi * m * s;
    a(m) = cplx(std::cos(phase), std::sin(phase)) / static_cast<double>(n);
  }
  return a;
}

/// Large-scale fading in dB: 72 + 29.2 log10(d) + shadowing.
inline double path_loss_db(double distance, double shadowing) {
  if (!(distance > 0))
    throw std::invalid_argument("path_loss_db: distance must be positive");
  return 72.0 + 29.2 * std::log10(distance) + shadowing;
}

/// Draw one channel realization. Deterministic in (config, seed): users are
/// placed uniformly in a disk of radius cell_radius (at least 1 m out), path
/// gains are CN(0,1), angles uniform on [-pi/2, pi/2], shadowing N(0,1) dB.
inline ChannelSet gen_channel(const SystemConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const int n = cfg.n_antennas;
  const int k_users = cfg.n_users;
  const int n_paths = cfg.n_paths;

  ChannelSet out;
  out.H = CMat::Zero(n, k_users);
  out.paths.resize(k_users);

  for (int k = 0; k < k_users; ++k) {
    PathParams& pp = out.paths[k];
    // Uniform over the disk area; resample inside the 1 m exclusion zone.
    do {
      pp.distance = cfg.cell_radius * std::sqrt(rng.uniform());
    } while (pp.distance < 1.0);
    pp.shadowing_db = rng.normal();
    pp.gains = CVec(n_paths);
    pp.angles = Vec(n_paths);
    for (int l = 0; l < n_paths; ++l) {
      pp.angles(l) =
          rng.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
      pp.gains(l) = rng.cnormal();
    }

    const double pl_db = path_loss_db(pp.distance, pp.shadowing_db);
    const double pl_gain = std::pow(10.0, -pl_db / 10.0);
    const double scale = std::sqrt(pl_gain * n / static_cast<double>(n_paths));
    CVec h = CVec::Zero(n);
    for (int l = 0; l < n_paths; ++l)
      h += pp.gains(l) * array_response(pp.angles(l), n);
    out.H.col(k) = scale * h;
  }
  return out;
}

/// Codebook of s uniformly spaced columns of the n-point unitary DFT matrix.
/// Target column indices are round(i*n/s); collisions advance to the next
/// unused index (mod n).
inline Codebook dft_codebook(int n, int s) {
  if (s < 1 || s > n)
    throw std::invalid_argument("dft_codebook: need 1 <= s <= n");
  std::vector<bool> used(n, false);
  std::vector<int> cols(s);
  for (int i = 0; i < s; ++i) {
    int q = static_cast<int>(
                std::llround(static_cast<double>(i) * n / s)) %
            n;
    while (used[q]) q = (q + 1) % n;
    used[q] = true;
    cols[i] = q;
  }
  Codebook cb;
  cb.W = CMat(n, s);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < s; ++i) {
    for (int m = 0; m < n; ++m) {
      const double phase =
          -2.0 * std::numbers::pi * m * cols[i] / static_cast<double>(n);
      cb.W(m, i) = norm * cplx(std::cos(phase), std::sin(phase));
    }
  }
  return cb;
}

/// One solvable instance: constants, codebook, channel.
struct Problem {
  SystemConfig config;
  Codebook codebook;
  CMat H;
};

inline Problem make_problem(const SystemConfig& cfg, std::uint64_t seed) {
  Problem p;
  p.config = cfg;
  p.codebook = dft_codebook(cfg.n_antennas, cfg.codebook_size);
  p.H = gen_channel(cfg, seed).H;
  return p;
}

}  // namespace beambit
