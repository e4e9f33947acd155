#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "beambit/scenario.hpp"

namespace beambit {

/// Per-RF-chain ADC resolutions. Entries are real during relaxation and
/// integer after rounding.
struct BitAllocation {
  Vec b;

  static BitAllocation uniform(int m, double bits) {
    return BitAllocation{Vec::Constant(m, bits)};
  }
};

/// Linear-gain model of a b-bit quantizer: gain alpha = 1 - beta plus
/// uncorrelated noise, with beta = (pi sqrt(3) / 2) 4^(-b).
struct QuantGains {
  Vec beta;
  Vec alpha;
};

inline double quant_beta(double bits) {
  return (std::numbers::pi * std::sqrt(3.0) / 2.0) * std::exp2(-2.0 * bits);
}

inline QuantGains quant_gains(const BitAllocation& ba) {
  QuantGains g;
  g.beta = ba.b.unaryExpr([](double b) { return quant_beta(b); });
  g.alpha = 1.0 - g.beta.array();
  return g;
}

/// Diagonal of the quantization-noise covariance
/// A_q = F_alpha F_beta diag(Q^H H P^2 H^H Q + noise * Q^H Q).
inline Vec quant_noise_cov(const CMat& Q, const CMat& H, const Vec& p,
                           double noise_power, const BitAllocation& ba) {
  const auto m = Q.cols();
  if (H.rows() != Q.rows() || p.size() != H.cols() || ba.b.size() != m)
    throw std::invalid_argument("quant_noise_cov: dimension mismatch");
  const QuantGains g = quant_gains(ba);
  const CMat T = Q.adjoint() * H;  // M x K
  Vec d(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double acc = noise_power * Q.col(i).squaredNorm();
    for (Eigen::Index k = 0; k < p.size(); ++k)
      acc += p(k) * std::norm(T(i, k));
    d(i) = g.alpha(i) * g.beta(i) * acc;
  }
  return d;
}

/// Total ADC power, sum over chains of coeff * f_s * 2^(b+1).
inline double adc_power(const BitAllocation& ba, double adc_energy_coeff,
                        double sampling_rate) {
  double total = 0;
  for (Eigen::Index i = 0; i < ba.b.size(); ++i)
    total += adc_energy_coeff * sampling_rate * std::exp2(ba.b(i) + 1.0);
  return total;
}

/// Uniform mid-rise quantizer applied independently to the real and imaginary
/// part of each element, 2^b levels over the clipping range +/- 3*agc_scale.
inline CVec simulate_quantizer(const CVec& y, const BitAllocation& ba,
                               const Vec& agc_scale) {
  if (ba.b.size() != y.size() || agc_scale.size() != y.size())
    throw std::invalid_argument("simulate_quantizer: dimension mismatch");
  CVec out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!(agc_scale(i) > 0))
      throw std::invalid_argument("simulate_quantizer: agc_scale must be > 0");
    const double clip = 3.0 * agc_scale(i);
    const double step = 2.0 * clip / std::exp2(ba.b(i));
    auto q = [&](double x) {
      double v = (std::floor(x / step) + 0.5) * step;
      return std::clamp(v, -clip + step / 2.0, clip - step / 2.0);
    };
    out(i) = cplx(q(y(i).real()), q(y(i).imag()));
  }
  return out;
}

/// Default AGC loading: per-element RMS of the real/imaginary components,
/// i.e. |y_m| / sqrt(2) for a circularly symmetric input.
inline CVec simulate_quantizer(const CVec& y, const BitAllocation& ba) {
  Vec agc = (y.array().abs() / std::sqrt(2.0)).matrix();
  return simulate_quantizer(y, ba, agc);
}

}  // namespace beambit
