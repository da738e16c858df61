#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace gradphi {

struct ExponentTable {
  int d = 2;
  double p = 3, p_prime = 3;
  double lambda = 0, kappa = 0, sigma = 0, tau = 0;
  double lambda_prime = 0, tau_prime = 0, theta_d = 0;
  double theta_c = 0;
  double alpha = 0, beta = 0, gamma = 0;

  /// Largest violation among the bookkeeping identities.
  double identity_residual() const {
    double r = 0.0;
    auto upd = [&](double v) { r = std::max(r, std::abs(v)); };
    upd(1 / tau + 0.5 - 1 / lambda);
    upd(1 / kappa + 1 / sigma - 0.5);
    upd(1 / sigma + 1 / tau - 1.0 / d);
    upd(1 / tau_prime + 0.5 - 1 / lambda_prime);
    upd(alpha + beta + gamma - 1.0);
    upd(alpha - (p - d) * gamma / 2 - 0.5 * d * (1 - alpha));
    return r;
  }
};

/// Exponents of the GNS/Holder bookkeeping and of the anchored Nash
/// inequality with theta = theta_c. For d = 1, kappa_d is negative; the
/// identities still hold as algebraic relations.
inline ExponentTable exponent_table(int d, double p, double p_prime) {
  if (d < 1) throw std::invalid_argument("exponent_table: d must be >= 1");
  if (!(p > d) || !(p_prime > d)) throw std::invalid_argument("exponent_table: p and p' must exceed d");
  ExponentTable e;
  e.d = d;
  e.p = p;
  e.p_prime = p_prime;
  const double dd = d;
  e.lambda = (2 * dd + 2) / (dd + 2);
  e.kappa = dd * e.lambda / (dd - e.lambda);
  e.sigma = 2 * e.kappa / (e.kappa - 2);
  e.tau = 2 * e.lambda / (2 - e.lambda);
  e.lambda_prime = (2 * dd + 3) / (dd + 2);
  e.tau_prime = 2 * e.lambda_prime / (2 - e.lambda_prime);
  e.theta_d = (2.0 / 3.0) * (2 * dd + 3) / (2 * dd + 2);
  e.theta_c = 1.0 / (1.0 + (dd * p + 2 * p) / (dd * p + 2 * dd) * (p_prime / dd - 1.0));
  const double th = e.theta_c;
  e.alpha = (1 - th) * dd / (dd + 2) + th * p / (p + 2);
  e.beta = (1 - th) * 2 / (dd + 2);
  e.gamma = th * 2 / (p + 2);
  const double res = e.identity_residual();
  if (!(res <= 1e-12))
    throw std::logic_error("exponent_table: identity check failed (residual " + std::to_string(res) + ")");
  return e;
}

}  // namespace gradphi
