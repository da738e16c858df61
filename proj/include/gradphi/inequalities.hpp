#pragma once

// Empirical constants for the functional inequalities, Efron's monotonicity
// theorem on gridded densities, and re-verification of the kernel bounds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include "gradphi/exponents.hpp"
#include "gradphi/heat_kernel.hpp"
#include "gradphi/lattice.hpp"
#include "gradphi/moderation.hpp"
#include "gradphi/rng.hpp"
#include "gradphi/spectral.hpp"
#include "gradphi/stats.hpp"

namespace gradphi {

namespace detail {
inline void require_mean_zero(std::span<const double> f, const char* who) {
  double s = 0.0, m = 0.0;
  for (const double v : f) s += v, m = std::max(m, std::abs(v));
  if (std::abs(s) > 1e-9 * std::max(1.0, m) * static_cast<double>(f.size()))
    throw std::invalid_argument(std::string(who) + ": field must be mean-zero");
  if (m == 0.0) throw std::invalid_argument(std::string(who) + ": zero field rejected");
}

inline std::vector<Index> all_edges(const Torus& t) {
  std::vector<Index> e(static_cast<std::size_t>(t.edge_count()));
  for (Index i = 0; i < t.edge_count(); ++i) e[i] = i;
  return e;
}
}  // namespace detail

// --- discrete GNS --------------------------------------------------------------

/// ||f||_{kappa} / (L^theta ||grad f||_lambda^theta ||f||_mu^{1-theta}) with
/// normalized norms on the torus.
inline double check_gns(const LatticeField& f, double kappa, double lambda, double mu, double theta) {
  const Torus& t = f.torus();
  const double d = t.dim();
  if (std::abs(1 / kappa - (theta * (1 / lambda - 1 / d) + (1 - theta) / mu)) > 1e-10)
    throw std::invalid_argument("check_gns: exponent relation violated");
  detail::require_mean_zero(f.values(), "check_gns");
  const Region whole = Region::whole(t);
  const auto grad = gradient_field(f);
  const double lhs = lp_norm(f, kappa, whole, true);
  const double g = lp_norm(grad, lambda, whole, true);
  const double m = lp_norm(f, mu, whole, true);
  const double rhs = std::pow(static_cast<double>(t.half_side()), theta) * std::pow(g, theta) * std::pow(m, 1 - theta);
  if (!(rhs > 0.0)) throw std::invalid_argument("check_gns: zero denominator");
  return lhs / rhs;
}

/// Mean-zero Gaussian field with E|f_k|^2 proportional to lambda_k^{-2 s}
/// (s = 1 by default), normalized to unit empirical L^2 norm. Built by a
/// direct sum over Fourier modes.
inline LatticeField smooth_random_field(const Torus& t, const Stream& stream, double smoothness = 1.0) {
  const int d = t.dim();
  const int N = t.side();
  LatticeField f(t);
  std::vector<double> axis(static_cast<std::size_t>(N));
  for (int j = 0; j < N; ++j) {
    const double s = std::sin(std::numbers::pi * j / N);
    axis[j] = 4.0 * s * s;
  }
  std::vector<std::vector<double>> coords(static_cast<std::size_t>(t.vertex_count()));
  for (Index x = 0; x < t.vertex_count(); ++x) {
    const auto c = t.coords(x);
    coords[x].assign(c.begin(), c.end());
  }
  std::vector<int> k(d, 0);
  std::uint64_t mode = 0;
  for (Index idx = 0; idx < t.vertex_count(); ++idx, ++mode) {
    Index r = idx;
    double lam = 0.0;
    for (int i = 0; i < d; ++i) {
      k[i] = static_cast<int>(r % N);
      r /= N;
      lam += axis[k[i]];
    }
    if (lam == 0.0) continue;
    const auto z = stream.normals(mode, 0);
    const double amp = std::pow(lam, -smoothness);
    for (Index x = 0; x < t.vertex_count(); ++x) {
      double ph = 0.0;
      for (int i = 0; i < d; ++i) ph += k[i] * coords[x][i];
      ph *= 2.0 * std::numbers::pi / N;
      f[x] += amp * (z[0] * std::cos(ph) + z[1] * std::sin(ph));
    }
  }
  project_mean_zero(f.raw());
  double s = 0.0;
  for (const double v : f.values()) s += v * v;
  s = std::sqrt(s / static_cast<double>(t.vertex_count()));
  for (auto& v : f.raw()) v /= s;
  return f;
}

// --- anchored Nash on the torus ---------------------------------------------------

/// M_{p'} at a single time from a w slice.
inline double m_p_prime(const Torus& t, std::span<const double> w, const ExponentTable& ex) {
  std::vector<double> inv(w.size());
  for (std::size_t e = 0; e < w.size(); ++e) {
    if (!(w[e] > 0.0)) throw std::invalid_argument("check_anchored_nash: w must be positive");
    inv[e] = 1.0 / w[e];
  }
  const auto all = detail::all_edges(t);
  const double n = static_cast<double>(t.vertex_count());
  const double holder = 1.0 + power_mean(w, all, ex.sigma, n) * power_mean(inv, all, ex.tau, n);
  double sup = 0.0;
  for (int r = 1; r <= t.half_side(); ++r) {
    const auto box = t.box_edges(r);
    sup = std::max(sup, power_mean(inv, box, ex.p_prime, static_cast<double>(t.box(r).size())));
  }
  return 1.0 + holder * holder * sup * sup;
}

struct NashRatio {
  double ratio = 0.0;
  double m_pp = 0.0;
};

/// ||u||_2 / ((M_{p'}^{1/2} ||w grad u||_2)^alpha ||u||_1^beta
/// || |x|_*^{p/2} u ||_2^gamma), plain norms, M_{p'} recomputed from w.
inline NashRatio check_anchored_nash(const LatticeField& u, std::span<const double> w, const ExponentTable& ex) {
  const Torus& t = u.torus();
  if (static_cast<Index>(w.size()) != t.edge_count()) throw std::invalid_argument("check_anchored_nash: w size");
  detail::require_mean_zero(u.values(), "check_anchored_nash");
  NashRatio out;
  out.m_pp = m_p_prime(t, w, ex);
  double l2 = 0, l1 = 0, anch = 0, dir = 0;
  for (Index x = 0; x < t.vertex_count(); ++x) {
    l2 += u[x] * u[x];
    l1 += std::abs(u[x]);
    anch += std::pow(t.anchored_norm(x), ex.p) * u[x] * u[x];
  }
  for (Index e = 0; e < t.edge_count(); ++e) {
    const double g = w[e] * gradient(u, e);
    dir += g * g;
  }
  const double rhs = std::pow(std::sqrt(out.m_pp) * std::sqrt(dir), ex.alpha) * std::pow(l1, ex.beta) *
                     std::pow(std::sqrt(anch), ex.gamma);
  if (!(rhs > 0.0)) throw std::invalid_argument("check_anchored_nash: zero denominator");
  out.ratio = std::sqrt(l2) / rhs;
  return out;
}

// --- moderation inequality ----------------------------------------------------------

struct ModerationSample {
  std::int64_t node = 0;
  Index edge = 0;
};

struct ModerationStats {
  std::vector<double> ratios;
  double max = 0.0, median = 0.0, p99 = 0.0;
  double max_truncation = 0.0;  // relative bound on the omitted tail of the right side
};

/// w(t,e)^2 (grad u(t,e))^2 / sum_{e' cap e != 0} int_t^inf K_{s-t} a(s,e') (grad u(s,e'))^2 ds
/// with u = P_a recorded at every trajectory node. The kernel argument is
/// s - t. The time integral runs to the end of the recorded solve; the
/// omitted part is bounded through the energy decay of u.
inline ModerationStats check_moderation(const EnvironmentTrajectory& traj, const SolveResult& solve,
                                        const ModeratedEnvironment& env,
                                        const std::vector<ModerationSample>& samples) {
  const Torus& t = traj.torus();
  if (solve.fields.empty()) throw std::invalid_argument("check_moderation: solve must record fields");
  const auto last = static_cast<std::int64_t>(solve.fields.size()) - 1;
  const double h = traj.node_dt();
  const ModerationWeights& K = env.weights();
  std::vector<double> Kg(static_cast<std::size_t>(last + 1));
  for (std::int64_t j = 0; j <= last; ++j) Kg[j] = K.K(static_cast<double>(j) * h);
  auto grad = [&](std::int64_t k, Index e) { return solve.fields[k][t.edge_head(e)] - solve.fields[k][t.edge_tail(e)]; };
  ModerationStats out;
  for (const auto& smp : samples) {
    if (smp.node < 0 || smp.node > std::min(last, env.last_node()))
      throw std::invalid_argument("check_moderation: sample outside the recorded window");
    const double w = env.at(smp.node, smp.edge).w;
    const double g0 = grad(smp.node, smp.edge);
    const double lhs = w * w * g0 * g0;
    double rhs = 0.0;
    for (const Index f : t.edge_closure(smp.edge)) {
      double acc = 0.0;
      const std::int64_t m = last - smp.node;
      for (std::int64_t j = 0; j <= m; ++j) {
        const double g = grad(smp.node + j, f);
        const double v = Kg[j] * traj.at(smp.node + j, f) * g * g;
        acc += (j == 0 || j == m) ? 0.5 * v : v;
      }
      rhs += acc * h;
    }
    double ratio = 0.0;
    if (rhs > 0.0) {
      ratio = lhs / rhs;
    } else if (lhs > 1e-300) {
      throw std::runtime_error("check_moderation: right side vanishes with nonzero left side (quadrature failure)");
    }
    out.ratios.push_back(ratio);
  }
  if (!out.ratios.empty()) {
    out.max = *std::max_element(out.ratios.begin(), out.ratios.end());
    out.median = stats::quantile(out.ratios, 0.5);
    out.p99 = stats::quantile(out.ratios, 0.99);
  }
  return out;
}

// --- Efron monotonicity --------------------------------------------------------------

/// Uniform grid x_i = lo + i h, i = 0..n-1, shared by both densities.
struct DensityGrid {
  double lo = -8.0;
  double hi = 8.0;
  int n = 2048;
  double step() const { return (hi - lo) / (n - 1); }
  double at(int i) const { return lo + i * step(); }
};

struct EfronVerdict {
  bool nondecreasing = false;
  double worst_drop = 0.0;  // largest decrease of g relative to range(g)
  double range = 0.0;
  std::vector<std::pair<double, double>> g;  // (s, E[Psi | X + Y = s])
};

namespace detail {
inline void require_log_concave(const std::vector<double>& f, const char* name) {
  std::size_t first = f.size(), last = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] < 0.0 || !std::isfinite(f[i])) throw std::invalid_argument(std::string("check_efron: ") + name + " invalid");
    if (f[i] > 0.0) first = std::min(first, i), last = i;
  }
  if (first > last) throw std::invalid_argument(std::string("check_efron: ") + name + " is not integrable");
  for (std::size_t i = first; i <= last; ++i)
    if (f[i] <= 0.0) throw std::invalid_argument(std::string("check_efron: ") + name + " fails log-concavity");
  for (std::size_t i = first + 1; i < last; ++i) {
    const double mid = std::log(f[i]);
    const double avg = 0.5 * (std::log(f[i - 1]) + std::log(f[i + 1]));
    if (mid < avg - 1e-9 * std::max(1.0, std::abs(avg)))
      throw std::invalid_argument(std::string("check_efron: ") + name + " fails log-concavity");
  }
}
}  // namespace detail

/// g(s) = E[Psi(X, Y) | X + Y = s] along anti-diagonals of the product grid.
/// The verdict requires g nondecreasing up to 1e-6 range(g) on
/// anti-diagonals carrying at least 1e-12 of the peak diagonal mass.
inline EfronVerdict check_efron(const std::vector<double>& fx, const std::vector<double>& fy, const DensityGrid& grid,
                                const std::function<double(double, double)>& psi) {
  const int n = grid.n;
  if (static_cast<int>(fx.size()) != n || static_cast<int>(fy.size()) != n)
    throw std::invalid_argument("check_efron: density size mismatch");
  detail::require_log_concave(fx, "density_X");
  detail::require_log_concave(fy, "density_Y");
  std::vector<double> P(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) P[static_cast<std::size_t>(i) * n + j] = psi(grid.at(i), grid.at(j));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = P[static_cast<std::size_t>(i) * n + j];
      if ((i + 1 < n && P[static_cast<std::size_t>(i + 1) * n + j] < v - 1e-12 * std::max(1.0, std::abs(v))) ||
          (j + 1 < n && P[static_cast<std::size_t>(i) * n + j + 1] < v - 1e-12 * std::max(1.0, std::abs(v))))
        throw std::invalid_argument("check_efron: Psi is not nondecreasing on the grid");
    }
  std::vector<double> mass(2 * n - 1, 0.0), num(2 * n - 1, 0.0);
  for (int i = 0; i < n; ++i) {
    if (fx[i] == 0.0) continue;
    for (int j = 0; j < n; ++j) {
      const double m = fx[i] * fy[j];
      mass[i + j] += m;
      num[i + j] += m * P[static_cast<std::size_t>(i) * n + j];
    }
  }
  const double peak = *std::max_element(mass.begin(), mass.end());
  EfronVerdict v;
  for (int m = 0; m < 2 * n - 1; ++m)
    if (mass[m] > 1e-12 * peak) v.g.emplace_back(2 * grid.lo + m * grid.step(), num[m] / mass[m]);
  double gmin = kInfinity, gmax = -kInfinity;
  for (const auto& [s, g] : v.g) gmin = std::min(gmin, g), gmax = std::max(gmax, g);
  v.range = gmax - gmin;
  double drop = 0.0;
  for (std::size_t k = 1; k < v.g.size(); ++k) drop = std::max(drop, v.g[k - 1].second - v.g[k].second);
  v.worst_drop = v.range > 0 ? drop / v.range : 0.0;
  v.nondecreasing = drop <= 1e-6 * v.range;
  return v;
}

/// Density exp(-H) on the grid with H(x) = a x^2 + l x + sum_k c_k ((x - b_k)_+)^2,
/// convex for a > 0 and c_k >= 0; normalized to unit grid mass.
inline std::vector<double> random_log_concave(const DensityGrid& grid, const Stream& s) {
  const double a = 0.1 + 0.9 * s.uniform(0, 0);
  const double l = 2.0 * s.uniform(0, 1) - 1.0;
  std::vector<double> c(3), b(3);
  for (int k = 0; k < 3; ++k) {
    c[k] = 2.0 * s.uniform(1, k);
    b[k] = 6.0 * s.uniform(2, k) - 3.0;
  }
  std::vector<double> f(static_cast<std::size_t>(grid.n));
  double z = 0.0;
  for (int i = 0; i < grid.n; ++i) {
    const double x = grid.at(i);
    double H = a * x * x + l * x;
    for (int k = 0; k < 3; ++k) H += c[k] * std::pow(std::max(0.0, x - b[k]), 2);
    f[i] = std::exp(-H);
    z += f[i];
  }
  for (auto& v : f) v /= z * grid.step();
  return f;
}

// --- kernel properties ------------------------------------------------------------

struct KernelVerdict {
  bool pass = false;
  double integral_margin = 0.0;     // 1 - int_0^inf K
  double convolution_margin = 0.0;  // min over the grid of (K - K*K) / K
  double worst_t = 0.0, worst_s_prime = 0.0;
};

/// Re-verifies both kernel properties with tanh-sinh quadrature on a grid of
/// s' - t in [1e-3, 1e4] with 40 points per decade.
inline KernelVerdict check_k_properties(const ModerationWeights& w, int per_decade = 40) {
  boost::math::quadrature::tanh_sinh<double> ts;
  KernelVerdict v;
  v.integral_margin = 1.0 - ts.integrate([&](double s) { return w.K(s); }, 0.0,
                                         std::numeric_limits<double>::infinity());
  v.convolution_margin = kInfinity;
  for (const double tau : detail::log_grid(1e-3, 1e4, per_decade)) {
    const double conv = 2.0 * ts.integrate([&](double u) { return w.K(u) * w.K(tau - u); }, 0.0, 0.5 * tau);
    const double m = (w.K(tau) - conv) / w.K(tau);
    if (m < v.convolution_margin) {
      v.convolution_margin = m;
      v.worst_t = 0.0;
      v.worst_s_prime = tau;
    }
  }
  v.pass = v.integral_margin > 0.0 && v.convolution_margin > 0.0;
  return v;
}

}  // namespace gradphi
