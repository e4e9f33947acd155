#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "beambit/quantization.hpp"
#include "beambit/scenario.hpp"

namespace beambit {

/// Full design variable: transmit powers p (K), beam selection G (S x M,
/// relaxed to [0,1] while solving, binary when finalized), baseband combiner
/// D (M x M), per-user receivers U (columns u_k, M x K), and ADC bits.
struct DesignPoint {
  Vec p;
  Mat G;
  CMat D;
  CMat U;
  BitAllocation bits;
};

/// Effective RF combiner Q = W G.
inline CMat effective_combiner(const Codebook& cb, const Mat& G) {
  if (cb.W.cols() != G.rows())
    throw std::invalid_argument("effective_combiner: dimension mismatch");
  return cb.W * G.cast<cplx>();
}

namespace detail {

/// Quantities shared by the SINR of every user.
struct RateContext {
  CMat Q;      // N x M
  CMat T;      // M x K, Q^H H
  QuantGains qg;
  Vec aq;      // diag of A_q
  CMat V;      // M x K, columns D u_k
  CMat Y;      // M x K, columns F_alpha D u_k
  CMat C;      // K x K, C(k,l) = u_k^H D^H F_alpha Q^H h_l
  Vec qy_norm; // K, ||Q y_k||^2
  Vec quant;   // K, y-weighted quantization noise u_k^H D^H A_q D u_k
};

inline RateContext rate_context(const DesignPoint& z, const Problem& prob) {
  RateContext c;
  c.Q = effective_combiner(prob.codebook, z.G);
  c.T = c.Q.adjoint() * prob.H;
  c.qg = quant_gains(z.bits);
  c.aq = quant_noise_cov(c.Q, prob.H, z.p, prob.config.noise_power, z.bits);
  c.V = z.D * z.U;
  c.Y = c.qg.alpha.asDiagonal() * c.V;
  c.C = c.Y.adjoint() * c.T;
  const auto k_users = z.U.cols();
  c.qy_norm = Vec(k_users);
  c.quant = Vec(k_users);
  for (Eigen::Index k = 0; k < k_users; ++k) {
    c.qy_norm(k) = (c.Q * c.Y.col(k)).squaredNorm();
    c.quant(k) = (c.V.col(k).cwiseAbs2().array() * c.aq.array()).sum();
  }
  return c;
}

inline double sinr_from_context(const RateContext& c, const Vec& p,
                                double noise_power, int k) {
  const double num = p(k) * std::norm(c.C(k, k));
  double den = noise_power * c.qy_norm(k) + c.quant(k);
  for (Eigen::Index l = 0; l < p.size(); ++l)
    if (l != k) den += p(l) * std::norm(c.C(k, l));
  if (num == 0.0) return 0.0;
  if (den <= 0.0)
    throw std::domain_error("sinr: degenerate zero denominator");
  return num / den;
}

}  // namespace detail

/// Post-combining SINR of user k.
inline double sinr(const DesignPoint& z, const Problem& prob, int k) {
  const auto c = detail::rate_context(z, prob);
  return detail::sinr_from_context(c, z.p, prob.config.noise_power, k);
}

inline Vec sinr_all(const DesignPoint& z, const Problem& prob) {
  const auto c = detail::rate_context(z, prob);
  Vec out(z.p.size());
  for (Eigen::Index k = 0; k < z.p.size(); ++k)
    out(k) = detail::sinr_from_context(c, z.p, prob.config.noise_power,
                                       static_cast<int>(k));
  return out;
}

/// Sum rate in nats/s/Hz.
inline double sum_rate(const DesignPoint& z, const Problem& prob) {
  const Vec t = sinr_all(z, prob);
  double r = 0;
  for (Eigen::Index k = 0; k < t.size(); ++k) r += std::log1p(t(k));
  return r;
}

/// Transmit power + ADC power + fixed circuit power, watts.
inline double power_consumption(const DesignPoint& z,
                                const SystemConfig& cfg) {
  return z.p.sum() +
         adc_power(z.bits, cfg.adc_energy_coeff, cfg.sampling_rate) +
         cfg.fixed_circuit_power();
}

/// Sum rate divided by consumed power, nats/s/Hz per watt.
inline double energy_efficiency(const DesignPoint& z, const Problem& prob) {
  return sum_rate(z, prob) / power_consumption(z, prob.config);
}

}  // namespace beambit
