#pragma once

// Weight kernels k, K; the moderated environment w; maximal quantities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "gradphi/dynamics.hpp"
#include "gradphi/exponents.hpp"
#include "gradphi/lattice.hpp"

namespace gradphi {

/// k_t = delta (1+t)^{-(p+3)} and K_t = k_t + int_t^inf s k_s ds.
class ModerationWeights {
 public:
  ModerationWeights(double p, double delta) : p_(p), delta_(delta), q_(p + 3.0) {
    if (!(p > 0.0)) throw std::invalid_argument("moderation: p must be positive");
    if (!(delta > 0.0)) throw std::invalid_argument("moderation: delta must be positive");
  }

  double p() const { return p_; }
  double delta() const { return delta_; }

  double k(double t) const { return delta_ * std::pow(1.0 + t, -q_); }

  double K(double t) const {
    const double u = 1.0 + t;
    return delta_ * (std::pow(u, -q_) + std::pow(u, 2.0 - q_) / (q_ - 2.0) - std::pow(u, 1.0 - q_) / (q_ - 1.0));
  }

  /// int_0^inf k = delta / (p + 2).
  double integral_k() const { return delta_ / (q_ - 1.0); }

  /// int_a^inf k.
  double tail_k(double a) const { return delta_ * std::pow(1.0 + a, 1.0 - q_) / (q_ - 1.0); }

  /// int_a^inf K in closed form.
  double tail_K(double a) const {
    const double u = 1.0 + a;
    return delta_ * (std::pow(u, 1.0 - q_) / (q_ - 1.0) + std::pow(u, 3.0 - q_) / ((q_ - 2.0) * (q_ - 3.0)) -
                     std::pow(u, 2.0 - q_) / ((q_ - 1.0) * (q_ - 2.0)));
  }

  double integral_K() const { return tail_K(0.0); }

  ModerationWeights with_delta(double delta) const { return ModerationWeights(p_, delta); }

 private:
  double p_, delta_, q_;
};

namespace detail {

/// int_0^tau K_u K_{tau-u} du, split at tau/2 by symmetry.
inline double k_convolution(const ModerationWeights& w, double tau) {
  using boost::math::quadrature::gauss_kronrod;
  double err = 0.0;
  const double half = gauss_kronrod<double, 31>::integrate([&](double u) { return w.K(u) * w.K(tau - u); }, 0.0,
                                                           0.5 * tau, 15, 1e-10, &err);
  return 2.0 * half;
}

inline std::vector<double> log_grid(double lo, double hi, int per_decade) {
  std::vector<double> g;
  const int n = static_cast<int>(std::ceil(std::log10(hi / lo) * per_decade));
  for (int i = 0; i <= n; ++i) g.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / n));
  return g;
}

}  // namespace detail

/// Both kernel properties at a fixed delta on the calibration grid.
inline bool kernel_properties_hold(const ModerationWeights& w, const std::vector<double>& taus) {
  using boost::math::quadrature::gauss_kronrod;
  const double total = gauss_kronrod<double, 61>::integrate([&](double s) { return w.K(s); }, 0.0,
                                                            std::numeric_limits<double>::infinity(), 15, 1e-10);
  if (total > 1.0) return false;
  for (const double tau : taus)
    if (detail::k_convolution(w, tau) > w.K(tau)) return false;
  return true;
}

/// Largest delta = 2^{-k} such that both properties hold at 1.1 delta on a
/// log grid of s' - t in [1e-3, 1e4].
inline double calibrate_delta(double p) {
  const auto taus = detail::log_grid(1e-3, 1e4, 12);
  for (int k = 0; k <= 60; ++k) {
    const double delta = std::ldexp(1.0, -k);
    if (kernel_properties_hold(ModerationWeights(p, 1.1 * delta), taus)) return delta;
  }
  throw std::runtime_error("calibrate_delta: calibration failed below 2^-60");
}

struct ModerationOptions {
  double horizon = 10.0;    // H
  double tolerance = 0.0;   // relative truncation tolerance; <= 0 disables the check
  bool sketch_variant = false;  // w = int a(s,e) (1+s-t)^{-4} ds instead of the moderated w^2
};

struct ModeratedValue {
  double w = 0.0;
  double truncation_bound = 0.0;  // on w^2 (or on w for the sketch variant)
};

/// Moderated environment on a stored trajectory. Closure sums
/// sum_{e' cap e != 0} a v 1 are cached per node on construction.
class ModeratedEnvironment {
 public:
  ModeratedEnvironment(const EnvironmentTrajectory& traj, ModerationWeights weights, ModerationOptions opt = {})
      : traj_(&traj), weights_(weights), opt_(opt) {
    const Torus& t = traj.torus();
    span_ = static_cast<std::int64_t>(std::llround(opt.horizon / traj.node_dt()));
    if (span_ < 1) throw std::invalid_argument("moderated_environment: horizon shorter than one node");
    if (!opt.sketch_variant) {
      const auto E = static_cast<std::size_t>(t.edge_count());
      closure_.resize(static_cast<std::size_t>(traj.node_count()) * E);
      for (std::int64_t k = 0; k < traj.node_count(); ++k) {
        const auto a = traj.slice(k);
        double* c = closure_.data() + k * static_cast<std::int64_t>(E);
        for (Index e = 0; e < t.edge_count(); ++e) {
          double s = 0.0;
          for (const Index f : t.edge_closure(e)) s += std::max(a[f], 1.0);
          c[e] = s;
        }
      }
    }
  }

  const ModerationWeights& weights() const { return weights_; }
  const ModerationOptions& options() const { return opt_; }
  const EnvironmentTrajectory& trajectory() const { return *traj_; }

  /// Last node at which w is available (t + H inside the trajectory).
  std::int64_t last_node() const { return traj_->node_count() - 1 - span_; }

  /// Analytic bound on the omitted int_{t+H}^inf of the w^2 integrand.
  double tail_bound() const {
    const double closure = 4.0 * traj_->torus().dim() - 1.0;
    return weights_.tail_k(static_cast<double>(span_) * traj_->node_dt()) / closure;
  }

  ModeratedValue at(std::int64_t node, Index e) const {
    if (node < 0 || node > last_node())
      throw std::invalid_argument("moderated_environment: t + H beyond trajectory horizon");
    const double h = traj_->node_dt();
    const auto E = traj_->torus().edge_count();
    ModeratedValue out;
    if (opt_.sketch_variant) {
      // Kernel (1+s)^{-4} integrated exactly per interval, a averaged.
      double acc = 0.0;
      for (std::int64_t j = 0; j < span_; ++j) {
        const double kw = (std::pow(1.0 + j * h, -3.0) - std::pow(1.0 + (j + 1) * h, -3.0)) / 3.0;
        acc += kw * 0.5 * (traj_->at(node + j, e) + traj_->at(node + j + 1, e));
      }
      out.w = acc;
      out.truncation_bound = kInfinity;
      return out;
    }
    // inner(j) = int_t^{t + j h} closure sum, by trapezoid. The outer
    // integral is a trapezoid rule in which k is integrated exactly over
    // each interval and the rest of the integrand is averaged at its ends.
    double inner = 0.0;
    double acc = 0.0;
    double prev_g = 0.0, prev_c = 0.0;
    for (std::int64_t j = 0; j <= span_; ++j) {
      const double a = traj_->at(node + j, e);
      const double c = closure_[(node + j) * E + e];
      if (j > 0) inner += 0.5 * h * (prev_c + c);
      prev_c = c;
      const double s = static_cast<double>(j) * h;
      // At s = t the ratio s / inner tends to 1 / c(t).
      const double g = std::min(a, 1.0) * (j == 0 ? 1.0 / c : s / inner);
      if (j > 0) acc += (weights_.tail_k(s - h) - weights_.tail_k(s)) * 0.5 * (prev_g + g);
      prev_g = g;
    }
    const double w2 = acc;
    out.truncation_bound = tail_bound();
    if (opt_.tolerance > 0.0 && w2 > 0.0 && out.truncation_bound > opt_.tolerance * w2)
      throw std::invalid_argument("moderated_environment: horizon too short for tolerance");
    out.w = std::sqrt(w2);
    return out;
  }

  std::vector<double> slice(std::int64_t node) const {
    std::vector<double> out(static_cast<std::size_t>(traj_->torus().edge_count()));
    for (Index e = 0; e < traj_->torus().edge_count(); ++e) out[e] = at(node, e).w;
    return out;
  }

 private:
  const EnvironmentTrajectory* traj_;
  ModerationWeights weights_;
  ModerationOptions opt_;
  std::int64_t span_ = 0;
  std::vector<double> closure_;
};

inline ModeratedValue moderated_environment(const EnvironmentTrajectory& traj, double t, Index e,
                                            const ModerationWeights& weights, ModerationOptions opt = {}) {
  const ModeratedEnvironment env(traj, weights, opt);
  const auto node = static_cast<std::int64_t>(std::llround(t / traj.node_dt()));
  return env.at(node, e);
}

/// w sampled on every `stride`-th trajectory node from 0 up to `last`.
struct WGrid {
  double dt = 0.0;                         // time between slices
  std::vector<std::int64_t> nodes;         // trajectory node per slice
  std::vector<std::vector<double>> slices;  // [slice][edge]
};

inline WGrid sample_w_grid(const ModeratedEnvironment& env, std::int64_t stride, std::int64_t last) {
  if (stride < 1) throw std::invalid_argument("sample_w_grid: stride must be >= 1");
  last = std::min(last, env.last_node());
  WGrid g;
  g.dt = env.trajectory().node_dt() * static_cast<double>(stride);
  for (std::int64_t k = 0; k <= last; k += stride) {
    g.nodes.push_back(k);
    g.slices.push_back(env.slice(k));
  }
  return g;
}

struct MaximalDiagnostics {
  std::vector<double> t;
  std::vector<double> m_pp, m0, m1, m2, m3, m4;
  double scr1 = 1, scr2 = 1, scr3 = 1, scr4 = 1;
  double scr = 1, scr_prime = 1;
  ExponentTable exponents;
  double window = 0.0;  // running sup/inf taken over t in [1, window]
};

namespace detail {

/// Radii boxes with their edge sets. For r = 0 the box is the origin and
/// its edge set is the 2d incident edges, so the normalized norms are
/// defined.
struct BoxFamily {
  std::vector<std::vector<Index>> edges;
  std::vector<double> counts;  // |Lambda_r|

  BoxFamily(const Torus& t) {
    for (int r = 0; r <= t.half_side(); ++r) {
      auto verts = t.box(r);
      counts.push_back(static_cast<double>(verts.size()));
      if (r == 0) {
        std::vector<Index> inc;
        for (int i = 0; i < t.dim(); ++i) {
          inc.push_back(t.edge(0, i));
          inc.push_back(t.edge(t.neighbor(0, i, -1), i));
        }
        edges.push_back(std::move(inc));
      } else {
        edges.push_back(t.box_edges(r));
      }
    }
  }
};

/// int_{j dt}^{(j+1) dt} K for j = 0..n-2.
inline std::vector<double> interval_weights(const ModerationWeights& w, std::size_t n, double dt) {
  std::vector<double> out(n > 0 ? n - 1 : 0);
  for (std::size_t j = 0; j + 1 < n; ++j)
    out[j] = w.tail_K(static_cast<double>(j) * dt) - w.tail_K(static_cast<double>(j + 1) * dt);
  return out;
}

/// int_0^inf K_s f(t_j + s) ds on a uniform grid, holding f at its last
/// value beyond the grid end.
inline std::vector<double> forward_smooth(const ModerationWeights& w, const std::vector<double>& f, double dt) {
  const std::size_t n = f.size();
  std::vector<double> out(n);
  const auto Kw = interval_weights(w, n, dt);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::size_t m = n - 1 - i;
    for (std::size_t j = 0; j < m; ++j) acc += Kw[j] * 0.5 * (f[i + j] + f[i + j + 1]);
    out[i] = acc + f.back() * w.tail_K(static_cast<double>(m) * dt);
  }
  return out;
}

/// Running averages (1/t) int_0^t f on a uniform grid, for t >= 1.
template <class Select>
double running_extreme(const std::vector<double>& f, double dt, double window, Select better, double init) {
  double acc = 0.0, best = init;
  bool any = false;
  for (std::size_t i = 1; i < f.size(); ++i) {
    acc += 0.5 * dt * (f[i - 1] + f[i]);
    const double t = static_cast<double>(i) * dt;
    if (t + 1e-12 < 1.0 || t > window + 1e-12) continue;
    best = any ? better(best, acc / t) : acc / t;
    any = true;
  }
  if (!any) throw std::invalid_argument("maximal_quantities: window must contain t >= 1");
  return best;
}

}  // namespace detail

/// Evaluates the maximal functions on the w grid. Temporal integrals against
/// K run to the end of the grid and hold the last value beyond it. The
/// running sup/inf over t >= 1 covers [1, window]; M_4 needs w on [t, t+1],
/// so the window must end at least one time unit before the grid does.
inline MaximalDiagnostics maximal_quantities(const EnvironmentTrajectory& traj, const WGrid& grid,
                                             const ModerationWeights& weights, const ExponentTable& ex,
                                             double window) {
  if (grid.slices.empty()) throw std::invalid_argument("maximal_quantities: missing w grid");
  const Torus& T = traj.torus();
  const double n_vertices = static_cast<double>(T.vertex_count());
  const detail::BoxFamily boxes(T);
  std::vector<Index> all(static_cast<std::size_t>(T.edge_count()));
  for (Index e = 0; e < T.edge_count(); ++e) all[e] = e;
  std::vector<double> anchor(static_cast<std::size_t>(T.vertex_count()));
  for (Index x = 0; x < T.vertex_count(); ++x) anchor[x] = std::pow(T.anchored_norm(x), (ex.p - 2) / (ex.p - 1));

  MaximalDiagnostics out;
  out.exponents = ex;
  out.window = window;
  const std::size_t n = grid.slices.size();
  std::vector<double> inv_d_norm(n);
  std::vector<double> inv(static_cast<std::size_t>(T.edge_count())), sqrt_a(inv.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = grid.slices[i];
    for (Index e = 0; e < T.edge_count(); ++e) {
      if (!(w[e] > 0.0)) throw std::invalid_argument("maximal_quantities: w must be positive");
      inv[e] = 1.0 / w[e];
    }
    const auto a = traj.slice(grid.nodes[i]);
    for (Index e = 0; e < T.edge_count(); ++e) sqrt_a[e] = std::sqrt(a[e]);

    const double holder = 1.0 + power_mean(w, all, ex.sigma, n_vertices) * power_mean(inv, all, ex.tau, n_vertices);
    double sup_pp = 0.0;
    for (int r = 1; r <= T.half_side(); ++r)
      sup_pp = std::max(sup_pp, power_mean(inv, boxes.edges[r], ex.p_prime, boxes.counts[r]));
    out.m_pp.push_back(1.0 + holder * holder * sup_pp * sup_pp);

    double sup0 = 0.0;
    for (int r = 0; r <= T.half_side(); ++r) {
      const double na = power_mean(sqrt_a, boxes.edges[r], ex.sigma, boxes.counts[r]);
      const double nw = power_mean(inv, boxes.edges[r], ex.tau_prime, boxes.counts[r]);
      sup0 = std::max(sup0, na * na * (1.0 + nw * nw));
    }
    out.m0.push_back(1.0 + sup0);

    double sup2 = 0.0;
    const auto heads = T.heads();
    std::vector<double> rows(static_cast<std::size_t>(T.vertex_count()), 0.0);
    for (Index e = 0; e < T.edge_count(); ++e) {
      rows[T.edge_tail(e)] += a[e];
      rows[heads[e]] += a[e];
    }
    for (Index x = 0; x < T.vertex_count(); ++x) sup2 = std::max(sup2, rows[x] / anchor[x]);
    out.m2.push_back(1.0 + sup2);

    const double nd = power_mean(inv, all, static_cast<double>(T.dim()), n_vertices);
    inv_d_norm[i] = nd * nd;
    out.t.push_back(static_cast<double>(i) * grid.dt);
  }

  // M_4(t) = 1 + sup_{s in [t, t+1]} ||w^{-1}(s)||^2; defined where t + 1 is on the grid.
  const auto one = static_cast<std::size_t>(std::llround(1.0 / grid.dt));
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (std::size_t j = i; j <= std::min(n - 1, i + one); ++j) m = std::max(m, inv_d_norm[j]);
    out.m4.push_back(1.0 + m);
  }

  const double e1 = ex.p / (2.0 * (1.0 - ex.theta_d));
  std::vector<double> f1(n), f3(n);
  for (std::size_t i = 0; i < n; ++i) {
    f1[i] = std::pow(out.m0[i], e1);
    f3[i] = std::pow(out.m_pp[i], ex.alpha / ex.beta);
  }
  const auto s1 = detail::forward_smooth(weights, f1, grid.dt);
  const auto s3 = detail::forward_smooth(weights, f3, grid.dt);
  for (std::size_t i = 0; i < n; ++i) {
    out.m1.push_back(1.0 + s1[i]);
    out.m3.push_back(1.0 + std::pow(s3[i], ex.beta));
  }

  const double last_t = static_cast<double>(n - 1) * grid.dt;
  if (window > last_t - 1.0 + 1e-9)
    throw std::invalid_argument("maximal_quantities: window must end one time unit before the w grid");
  auto mx = [](double a, double b) { return std::max(a, b); };
  auto mn = [](double a, double b) { return std::min(a, b); };
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::pow(out.m1[i], 2.0 / ex.p);
  out.scr1 = std::pow(detail::running_extreme(g, grid.dt, window, mx, 0.0), ex.p / 2.0);
  out.scr2 = std::pow(detail::running_extreme(out.m2, grid.dt, window, mx, 0.0), ex.p - 1.0);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::pow(out.m3[i], -1.0 / ex.alpha);
  out.scr3 = std::pow(detail::running_extreme(g, grid.dt, window, mn, 0.0), -ex.alpha / ex.gamma);
  for (std::size_t i = 0; i < n; ++i) g[i] = 1.0 / out.m4[i];
  out.scr4 = 1.0 / detail::running_extreme(g, grid.dt, window, mn, 0.0);
  out.scr = std::pow((out.scr1 + out.scr2) * out.scr3, ex.gamma / (1.0 - ex.alpha - ex.gamma));
  out.scr_prime =
      std::pow(out.scr3, 2.0 * ex.gamma / (ex.d * ex.beta + ex.p * ex.gamma) + ex.gamma / ex.alpha) * out.scr4;
  return out;
}

struct SmoothedValue {
  double value = 0.0;
  double truncation_bound = 0.0;
};

/// f_bar(t_i) = int_{t_i}^inf K_{s - t_i} f_s ds on a uniform grid with
/// spacing dt (K integrated exactly per interval, f averaged at the ends). Beyond the last sample f is continued as
/// f_T exp(-tail_rate (s - T)); the bound is f_T int_{T - t}^inf K, which
/// dominates the continuation whenever tail_rate >= 0.
inline std::vector<SmoothedValue> smoothed_functionals(const std::vector<double>& f, double dt,
                                                       const ModerationWeights& w, double tail_rate = 0.0,
                                                       std::span<const std::size_t> at = {}) {
  using boost::math::quadrature::gauss_kronrod;
  std::vector<std::size_t> idx(at.begin(), at.end());
  if (idx.empty())
    for (std::size_t i = 0; i < f.size(); ++i) idx.push_back(i);
  const std::size_t n = f.size();
  const auto Kw = detail::interval_weights(w, n, dt);
  std::vector<SmoothedValue> out;
  out.reserve(idx.size());
  for (const std::size_t i : idx) {
    const std::size_t m = n - 1 - i;
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += Kw[j] * 0.5 * (f[i + j] + f[i + j + 1]);
    const double offset = static_cast<double>(m) * dt;
    const double tail = f.back() * gauss_kronrod<double, 31>::integrate(
                                       [&](double u) { return w.K(offset + u) * std::exp(-tail_rate * u); }, 0.0,
                                       std::numeric_limits<double>::infinity(), 15, 1e-12);
    out.push_back({acc + tail, std::abs(f.back()) * w.tail_K(offset)});
  }
  return out;
}

}  // namespace gradphi
