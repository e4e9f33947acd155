#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "beambit/metrics.hpp"

namespace beambit {

/// Auxiliary variables of the ratio decoupling: eta is the rate/power
/// trade-off, phi_k linearizes the log ratio of user k, lambda_k pulls the
/// SINR ratio out of the log.
struct FpState {
  double eta = 0;
  Vec phi;
  CVec lambda;
};

/// Rate/power trade-off at the current design.
inline double dinkelbach_eta(const DesignPoint& z, const Problem& prob) {
  return sum_rate(z, prob) / power_consumption(z, prob.config);
}

/// Optimal phi: the per-user SINR.
inline Vec optimal_phi(const DesignPoint& z, const Problem& prob) {
  return sinr_all(z, prob);
}

namespace detail {

/// gamma_k: full received power at the output of receiver k, including the
/// desired signal (sum over all l), thermal noise, and quantization noise.
inline double gamma_from_context(const RateContext& c, const Vec& p,
                                 double noise_power, int k) {
  double g = noise_power * c.qy_norm(k) + c.quant(k);
  for (Eigen::Index l = 0; l < p.size(); ++l)
    g += p(l) * std::norm(c.C(k, l));
  return g;
}

inline cplx lambda_from_context(const RateContext& c, const Vec& p,
                                const Vec& phi, double noise_power, int k) {
  const cplx num = std::sqrt(p(k) * (1.0 + phi(k))) * c.C(k, k);
  if (num == cplx(0, 0)) return {0, 0};
  const double g = gamma_from_context(c, p, noise_power, k);
  if (g <= 0.0)
    throw std::domain_error("optimal_lambda: degenerate gamma_k = 0");
  return num / g;
}

}  // namespace detail

inline double gamma_k(const DesignPoint& z, const Problem& prob, int k) {
  const auto c = detail::rate_context(z, prob);
  return detail::gamma_from_context(c, z.p, prob.config.noise_power, k);
}

/// Closed-form optimal lambda given phi:
/// lambda_k = sqrt(p_k (1+phi_k)) u_k^H D^H F_alpha Q^H h_k / gamma_k.
inline CVec optimal_lambda(const DesignPoint& z, const Vec& phi,
                           const Problem& prob) {
  const auto c = detail::rate_context(z, prob);
  CVec out(z.p.size());
  for (Eigen::Index k = 0; k < z.p.size(); ++k)
    out(k) = detail::lambda_from_context(c, z.p, phi, prob.config.noise_power,
                                         static_cast<int>(k));
  return out;
}

/// Surrogate rate of user k,
/// r_hat = log(1+phi) - phi + 2 Re{sqrt(p(1+phi)) lambda^* c_kk}
///         - |lambda|^2 gamma_k.
inline double surrogate_rate(const DesignPoint& z, const FpState& fp,
                             const Problem& prob, int k) {
  const auto c = detail::rate_context(z, prob);
  const double phi = fp.phi(k);
  if (phi < 0) throw std::invalid_argument("surrogate_rate: phi must be >= 0");
  const cplx lam = fp.lambda(k);
  const double cross =
      2.0 * (std::sqrt(z.p(k) * (1.0 + phi)) * std::conj(lam) * c.C(k, k))
                .real();
  const double g =
      detail::gamma_from_context(c, z.p, prob.config.noise_power, k);
  return std::log1p(phi) - phi + cross - std::norm(lam) * g;
}

inline double surrogate_sum_rate(const DesignPoint& z, const FpState& fp,
                                 const Problem& prob) {
  const auto c = detail::rate_context(z, prob);
  double total = 0;
  for (Eigen::Index k = 0; k < z.p.size(); ++k) {
    const double phi = fp.phi(k);
    const cplx lam = fp.lambda(k);
    const double cross =
        2.0 *
        (std::sqrt(z.p(k) * (1.0 + phi)) * std::conj(lam) * c.C(k, k)).real();
    const double g = detail::gamma_from_context(
        c, z.p, prob.config.noise_power, static_cast<int>(k));
    total += std::log1p(phi) - phi + cross - std::norm(lam) * g;
  }
  return total;
}

/// Refresh (eta, phi, lambda) from the current design, in that order.
inline FpState refresh_fp(const DesignPoint& z, const Problem& prob) {
  FpState fp;
  fp.eta = dinkelbach_eta(z, prob);
  fp.phi = optimal_phi(z, prob);
  fp.lambda = optimal_lambda(z, fp.phi, prob);
  return fp;
}

}  // namespace beambit
