#pragma once

// Heat kernel of  d/dt P - div a grad P = 0  on the torus with a time-dependent
// environment a(t, e) >= 0, started from  delta_source - 1/|T|.
//
// Time stepping is explicit forward Euler. On each trajectory interval
// [t_k, t_{k+1}] the coefficient is frozen at (a(t_k) + a(t_{k+1})) / 2 and
// the interval is split into equal substeps h with h * max_x sum_{e~x} a <= 1
// (1/2 by default), which makes every substep matrix symmetric, doubly stochastic and
// nonnegative (mass conservation and the maximum principle hold exactly in
// exact arithmetic). Time integrals of P(t, source) are left Riemann sums over
// substeps; for a frozen environment that sum equals the continuum integral.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/lattice.hpp"

namespace gradphi {

class CflViolation : public std::runtime_error {
 public:
  CflViolation(const std::string& what, double max_row_sum) : std::runtime_error(what), max_row_sum(max_row_sum) {}
  double max_row_sum;
};

struct HeatKernelState {
  const Torus* torus = nullptr;
  std::vector<double> P;
  double t = 0.0;
  Index source = 0;
};

inline HeatKernelState init_heat_kernel(const Torus& torus, Index source, double start_time = 0.0) {
  if (source < 0 || source >= torus.vertex_count()) throw std::invalid_argument("heat kernel: invalid source");
  HeatKernelState s;
  s.torus = &torus;
  s.P.assign(static_cast<std::size_t>(torus.vertex_count()), -1.0 / static_cast<double>(torus.vertex_count()));
  s.P[source] += 1.0;
  s.t = start_time;
  s.source = source;
  return s;
}

/// max_x sum_{e ~ x} a(e).
inline double max_row_sum(const Torus& t, std::span<const double> a) {
  std::vector<double> rows(static_cast<std::size_t>(t.vertex_count()), 0.0);
  const int d = t.dim();
  const auto heads = t.heads();
  for (Index e = 0; e < t.edge_count(); ++e) {
    rows[e / d] += a[e];
    rows[heads[e]] += a[e];
  }
  return *std::max_element(rows.begin(), rows.end());
}

namespace detail {
/// P <- P + h div a grad P, using `scratch` for the divergence.
inline void euler_substep(const Torus& t, std::span<const double> a, double h, std::vector<double>& P,
                          std::vector<double>& scratch) {
  apply_dynamic_divergence(t, P, a, scratch);
  for (std::size_t x = 0; x < P.size(); ++x) P[x] += h * scratch[x];
}
}  // namespace detail

/// One explicit step with a frozen coefficient; rejects h beyond the
/// explicit-scheme bound 1 / max_x sum_{e~x} a(e).
inline void step_heat_kernel(HeatKernelState& s, std::span<const double> a, double dt_pde) {
  const double rows = max_row_sum(*s.torus, a);
  if (dt_pde * rows > 1.0 + 1e-12)
    throw CflViolation("CFL violated: dt_pde=" + std::to_string(dt_pde) + " with max row sum " + std::to_string(rows),
                       rows);
  std::vector<double> scratch(s.P.size());
  detail::euler_substep(*s.torus, a, dt_pde, s.P, scratch);
  s.t += dt_pde;
}

struct EnergyFunctionals {
  std::vector<double> t;          // node times
  std::vector<double> p_diag;     // P(t, source)
  std::vector<double> energy;     // sum_x P^2
  std::vector<double> dirichlet;  // sum_e a (grad P)^2
  std::vector<double> weighted;   // sum_x |x|_*^p P^2 (|x| relative to the source)
};

struct InvariantMonitor {
  bool enabled = false;
  double max_mass_drift = 0.0;
  std::int64_t bound_violations = 0;
  double max_l1 = 0.0;
  std::int64_t substeps_checked = 0;
};

/// Streaming solver: feed environment nodes one interval at a time.
class HeatKernelSolver {
 public:
  HeatKernelSolver(const Torus& torus, Index source, double weight_exponent = 0.0)
      : state_(init_heat_kernel(torus, source)),
        scratch_(state_.P.size()),
        coeff_(static_cast<std::size_t>(torus.edge_count())),
        weight_exponent_(weight_exponent > 0.0 ? weight_exponent : torus.dim() + 1.0) {
    anchor_.resize(state_.P.size());
    // |x - source|_*^p on the torus.
    const auto src = torus.coords(source);
    for (Index x = 0; x < torus.vertex_count(); ++x) {
      auto c = torus.coords(x);
      for (int i = 0; i < torus.dim(); ++i) c[i] -= src[i];
      anchor_[x] = std::pow(torus.anchored_norm(torus.vertex(c)), weight_exponent_);
    }
  }

  const HeatKernelState& state() const { return state_; }
  std::span<const double> field() const { return state_.P; }
  double time() const { return state_.t; }
  double integral() const { return integral_; }
  std::int64_t substeps() const { return substeps_; }
  InvariantMonitor& monitor() { return monitor_; }
  const InvariantMonitor& monitor() const { return monitor_; }

  /// Records the functionals at the current time using the node environment.
  void record(EnergyFunctionals& out, std::span<const double> a_node) const {
    const Torus& t = *state_.torus;
    const auto& P = state_.P;
    double e = 0.0, n = 0.0, dsum = 0.0;
    for (std::size_t x = 0; x < P.size(); ++x) {
      e += P[x] * P[x];
      n += anchor_[x] * P[x] * P[x];
    }
    for (Index k = 0; k < t.edge_count(); ++k) {
      const double g = P[t.edge_head(k)] - P[t.edge_tail(k)];
      dsum += a_node[k] * g * g;
    }
    out.t.push_back(state_.t);
    out.p_diag.push_back(P[state_.source]);
    out.energy.push_back(e);
    out.dirichlet.push_back(dsum);
    out.weighted.push_back(n);
  }

  /// Advances across one interval of length dt with endpoint environments.
  void advance_interval(std::span<const double> a_left, std::span<const double> a_right, double dt,
                        std::int64_t min_substeps = 1) {
    for (std::size_t e = 0; e < coeff_.size(); ++e) coeff_[e] = 0.5 * (a_left[e] + a_right[e]);
    advance_frozen(coeff_, dt, min_substeps);
  }

  /// Substeps use h <= cfl_fraction / max row sum. Below 1/2 every mode of
  /// the substep matrix decays without sign oscillation.
  void set_cfl_fraction(double f) {
    if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("heat kernel: cfl_fraction must be in (0, 1]");
    cfl_fraction_ = f;
  }

  /// Advances by dt with a frozen coefficient, using the fewest substeps
  /// (at least min_substeps) with h * max row sum <= cfl_fraction.
  void advance_frozen(std::span<const double> a, double dt, std::int64_t min_substeps = 1) {
    const double rows = max_row_sum(*state_.torus, a);
    std::int64_t n =
        std::max<std::int64_t>(min_substeps, static_cast<std::int64_t>(std::ceil(dt * rows / cfl_fraction_ - 1e-9)));
    if (n < 1) n = 1;
    const double h = dt / static_cast<double>(n);
    if (h * rows > 1.0 + 1e-12)
      throw CflViolation("CFL violated: substep " + std::to_string(h) + " with max row sum " + std::to_string(rows),
                         rows);
    auto& P = state_.P;
    for (std::int64_t i = 0; i < n; ++i) {
      integral_ += h * P[state_.source];
      detail::euler_substep(*state_.torus, a, h, P, scratch_);
      if (monitor_.enabled) check_invariants();
    }
    substeps_ += n;
    state_.t += dt;
  }

 private:
  void check_invariants() {
    const auto& P = state_.P;
    const double inv = 1.0 / static_cast<double>(P.size());
    double mass = 0.0, l1 = 0.0;
    for (const double v : P) {
      mass += v;
      l1 += std::abs(v);
      if (v < -inv - 1e-10 || v > 1.0 - inv + 1e-10) ++monitor_.bound_violations;
    }
    monitor_.max_mass_drift = std::max(monitor_.max_mass_drift, std::abs(mass));
    monitor_.max_l1 = std::max(monitor_.max_l1, l1);
    ++monitor_.substeps_checked;
  }

  HeatKernelState state_;
  std::vector<double> scratch_, coeff_, anchor_;
  double weight_exponent_;
  double cfl_fraction_ = 0.5;
  double integral_ = 0.0;
  std::int64_t substeps_ = 0;
  InvariantMonitor monitor_;
};

struct TailClosure {
  double rate = 0.0;   // fitted decay rate mu of P, from E_t ~ exp(-2 mu t)
  double tail = 0.0;   // P(T, source) / mu
  double bound = kInfinity;  // sqrt(E_T) / mu >= |int_T^inf P dt|
};

/// Exponential tail fitted on the last decade [T/10, T] of the energy trace.
inline TailClosure fit_tail(const EnergyFunctionals& f) {
  TailClosure out;
  if (f.t.size() < 3) return out;
  const double T = f.t.back();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t k = 0; k < f.t.size(); ++k) {
    if (f.t[k] < 0.1 * T || !(f.energy[k] > 0.0)) continue;
    const double y = std::log(f.energy[k]);
    sx += f.t[k], sy += y, sxx += f.t[k] * f.t[k], sxy += f.t[k] * y, ++m;
  }
  if (m < 3) return out;
  const double slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  out.rate = -0.5 * slope;
  if (!(out.rate > 0.0)) {
    out.rate = 0.0;
    return out;
  }
  out.tail = f.p_diag.back() / out.rate;
  out.bound = std::sqrt(f.energy.back()) / out.rate;
  return out;
}

struct SolveOptions {
  std::int64_t min_substeps_per_node = 1;
  double cfl_fraction = 0.5;
  double weight_exponent = 0.0;  // p in |x|_*^p; 0 selects d + 1
  bool record_fields = false;    // keep P(t_k, .) at every node
  bool monitor_invariants = false;
};

struct SolveResult {
  EnergyFunctionals functionals;
  double integral = 0.0;  // left Riemann sum of P(t, source) over [0, t_max]
  TailClosure tail;
  std::int64_t substeps = 0;
  InvariantMonitor monitor;
  std::vector<std::vector<double>> fields;  // [node][x] when recorded

  double total() const { return integral + tail.tail; }
};

/// Solves along a stored trajectory up to t_max (rounded to the node grid).
inline SolveResult solve_on_trajectory(const EnvironmentTrajectory& traj, Index source, double t_max,
                                       SolveOptions opt = {}) {
  const auto last = static_cast<std::int64_t>(std::llround(t_max / traj.node_dt()));
  if (last > traj.node_count() - 1 || t_max < 0.0)
    throw std::invalid_argument("solve_on_trajectory: t_max beyond trajectory horizon");
  HeatKernelSolver solver(traj.torus(), source, opt.weight_exponent);
  solver.monitor().enabled = opt.monitor_invariants;
  solver.set_cfl_fraction(opt.cfl_fraction);
  SolveResult res;
  for (std::int64_t k = 0;; ++k) {
    solver.record(res.functionals, traj.slice(k));
    if (opt.record_fields) res.fields.emplace_back(solver.field().begin(), solver.field().end());
    if (k == last) break;
    try {
      solver.advance_interval(traj.slice(k), traj.slice(k + 1), traj.node_dt(), opt.min_substeps_per_node);
    } catch (const CflViolation& e) {
      throw CflViolation(std::string(e.what()) + " at trajectory node " + std::to_string(k), e.max_row_sum);
    }
  }
  res.integral = solver.integral();
  res.tail = fit_tail(res.functionals);
  res.substeps = solver.substeps();
  res.monitor = solver.monitor();
  return res;
}

/// a^{(t)}(t', e) = a(t - t', e) on [0, t]; t must lie on the node grid.
inline EnvironmentTrajectory reversed_environment(const EnvironmentTrajectory& traj, double t) {
  const double steps = t / traj.node_dt();
  const auto m = static_cast<std::int64_t>(std::llround(steps));
  if (t < 0.0 || m > traj.node_count() - 1) throw std::invalid_argument("reversed_environment: t beyond horizon");
  if (std::abs(steps - static_cast<double>(m)) > 1e-9 * std::max(1.0, steps))
    throw std::invalid_argument("reversed_environment: t not on the node grid");
  EnvironmentTrajectory out(traj.torus(), traj.node_dt());
  out.potential_tag = traj.potential_tag;
  out.seed = traj.seed;
  out.langevin_dt = traj.langevin_dt;
  for (std::int64_t j = 0; j <= m; ++j) out.push(traj.slice(m - j));
  return out;
}

/// Output times on a geometric grid (dense early, sparse late), as node
/// indices into the functionals.
inline std::vector<std::size_t> geometric_nodes(const EnergyFunctionals& f, int per_decade = 20) {
  std::vector<std::size_t> out;
  if (f.t.empty()) return out;
  out.push_back(0);
  const double dt = f.t.size() > 1 ? f.t[1] - f.t[0] : 1.0;
  for (double t = dt; t <= f.t.back() * (1 + 1e-12); t *= std::pow(10.0, 1.0 / per_decade)) {
    const auto k = static_cast<std::size_t>(std::llround(t / dt));
    if (k < f.t.size() && k != out.back()) out.push_back(k);
  }
  if (out.back() != f.t.size() - 1) out.push_back(f.t.size() - 1);
  return out;
}

}  // namespace gradphi
