#pragma once

// Variance estimators (direct Monte Carlo and through the heat kernel of the
// dynamic environment), gradient tail fits, confinement and supremum tails.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gradphi/dynamics.hpp"
#include "gradphi/heat_kernel.hpp"
#include "gradphi/parallel.hpp"
#include "gradphi/stats.hpp"

namespace gradphi {

struct EstimateReport {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::int64_t n = 0;
  std::string method;
  double truncation_bound = 0.0;
  std::vector<std::pair<double, double>> curve;
  std::map<std::string, double> extra;
};

/// Combined standard deviation of a difference of independent estimates.
inline double combined_sigma(const EstimateReport& a, const EstimateReport& b) {
  return std::sqrt(a.stderr_ * a.stderr_ + b.stderr_ * b.stderr_);
}

// --- direct Monte Carlo ------------------------------------------------------

struct McOptions {
  int batches_per_chain = 0;  // 0: about 32 batches in total
  int workers = 0;
};

/// Batched-means report from per-chain retained series: `second[c][k]` is
/// the translation average of phi^2 in sample k of chain c, `origin[c][k]`
/// is phi(0).
inline EstimateReport mc_report(const std::vector<std::vector<double>>& second,
                                const std::vector<std::vector<double>>& origin, const std::vector<double>& acceptance,
                                int batches_per_chain, Correction correction) {
  const int chains = static_cast<int>(second.size());
  const std::size_t samples = chains ? second[0].size() : 0;
  const int per_chain = batches_per_chain > 0 ? batches_per_chain : std::max(2, (32 + chains - 1) / chains);
  if (per_chain * chains < 10 || samples < static_cast<std::size_t>(per_chain))
    throw std::invalid_argument("mc_variance: fewer than 10 effective batches");
  std::vector<double> batch_m, batch_o;
  for (int c = 0; c < chains; ++c) {
    const std::size_t per = second[c].size() / static_cast<std::size_t>(per_chain);
    for (int b = 0; b < per_chain; ++b) {
      batch_m.push_back(stats::mean(std::span<const double>(second[c]).subspan(b * per, per)));
      batch_o.push_back(stats::mean(std::span<const double>(origin[c]).subspan(b * per, per)));
    }
  }
  EstimateReport r;
  r.method = correction == Correction::metropolis_adjusted ? "mc_batched_means_mala" : "mc_batched_means_plain";
  r.estimate = stats::mean(batch_m);
  r.stderr_ = stats::standard_error(batch_m);
  r.n = static_cast<std::int64_t>(chains) * static_cast<std::int64_t>(samples);
  r.extra["batches"] = static_cast<double>(batch_m.size());
  r.extra["mean_phi0"] = stats::mean(batch_o);
  r.extra["mean_phi0_stderr"] = stats::standard_error(batch_o);
  r.extra["acceptance_mean"] = stats::mean(acceptance);
  r.extra["acceptance_min"] = *std::min_element(acceptance.begin(), acceptance.end());
  return r;
}

inline double second_moment(const LatticeField& f) {
  double s = 0.0;
  for (const double v : f.values()) s += v * v;
  return s / static_cast<double>(f.torus().vertex_count());
}

/// Var[phi(0)] from retained Gibbs samples. Each sample contributes the
/// translation average |T|^{-1} sum_x phi(x)^2, which has expectation
/// Var[phi(0)] because samples are mean-zero and the law is
/// translation-invariant. Errors come from batched means per chain.
inline EstimateReport mc_variance(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg,
                                  McOptions opt = {}) {
  cfg.validate();
  const int chains = cfg.chain_count;
  const int per_chain = opt.batches_per_chain > 0 ? opt.batches_per_chain : std::max(2, (32 + chains - 1) / chains);
  if (per_chain * chains < 10 || cfg.samples_per_chain < per_chain)
    throw std::invalid_argument("mc_variance: fewer than 10 effective batches");
  std::vector<std::vector<double>> second(chains), origin(chains);
  for (int c = 0; c < chains; ++c) {
    second[c].resize(static_cast<std::size_t>(cfg.samples_per_chain));
    origin[c].resize(static_cast<std::size_t>(cfg.samples_per_chain));
  }
  std::vector<double> acceptance;
  sample_gibbs(
      torus, V, cfg,
      [&](int c, std::int64_t k, const LatticeField& f) {
        second[c][k] = second_moment(f);
        origin[c][k] = f[0];
      },
      &acceptance, opt.workers);
  return mc_report(second, origin, acceptance, opt.batches_per_chain, cfg.correction);
}

// --- Helffer-Sjostrand variance ----------------------------------------------

struct HsOptions {
  int trajectories = 8;
  double t_max = -1.0;          // negative selects max(20, 8 L^2)
  double flow_dt = 0.002;       // plain Langevin step for the environment
  std::int64_t steps_per_node = 10;
  double cfl_fraction = 0.5;
  DtPolicy dt_policy = DtPolicy::adaptive;
  int workers = 0;
  bool keep_traces = false;     // keep per-trajectory functionals

  double horizon(const Torus& t) const {
    return t_max > 0.0 ? t_max : std::max(20.0, 8.0 * t.half_side() * t.half_side());
  }
};

struct HsTrajectoryResult {
  double integral = 0.0;
  TailClosure tail;
  EnergyFunctionals functionals;
  std::int64_t substeps = 0;
};

/// Runs the environment flow and the heat-kernel solve side by side, keeping
/// only the current and next environment slices.
inline HsTrajectoryResult hs_streaming(const LatticeField& phi0, const PotentialSpec& V, const HsOptions& opt,
                                       const Stream& stream, Index source = 0) {
  const Torus& t = phi0.torus();
  LangevinConfig flow;
  flow.dt = opt.flow_dt;
  flow.correction = Correction::plain;
  flow.dt_policy = opt.dt_policy;
  LangevinChain chain(t, V, flow, stream, phi0);
  HeatKernelSolver solver(t, source);
  solver.set_cfl_fraction(opt.cfl_fraction);
  const double node_dt = opt.flow_dt * static_cast<double>(opt.steps_per_node);
  const auto nodes = static_cast<std::int64_t>(std::llround(opt.horizon(t) / node_dt));
  std::vector<double> left(static_cast<std::size_t>(t.edge_count())), right(left.size());
  environment_slice(chain.field(), V, left);
  HsTrajectoryResult res;
  for (std::int64_t k = 0;; ++k) {
    solver.record(res.functionals, left);
    if (k == nodes) break;
    chain.advance(opt.steps_per_node);
    environment_slice(chain.field(), V, right);
    try {
      solver.advance_interval(left, right, node_dt);
    } catch (const CflViolation& e) {
      throw CflViolation(std::string(e.what()) + " at trajectory node " + std::to_string(k), e.max_row_sum);
    }
    left.swap(right);
  }
  res.integral = solver.integral();
  res.tail = fit_tail(res.functionals);
  res.substeps = solver.substeps();
  return res;
}

/// Stationary starting fields: one retained sample per trajectory, each from
/// its own burned-in chain.
inline std::vector<LatticeField> stationary_starts(const Torus& torus, const PotentialSpec& V, LangevinConfig cfg,
                                                   int count, int workers = 0) {
  cfg.chain_count = count;
  cfg.samples_per_chain = 1;
  std::vector<LatticeField> out(static_cast<std::size_t>(count), LatticeField(torus));
  sample_gibbs(
      torus, V, cfg, [&](int c, std::int64_t, const LatticeField& f) { out[c] = f; }, nullptr, workers);
  return out;
}

/// Var[phi(0)] = E[int_0^inf P_a(t, 0) dt] averaged over independent
/// stationary trajectories. For the Gaussian family the environment is
/// constant and a single deterministic solve is exact.
inline EstimateReport hs_variance(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg,
                                  HsOptions opt = {}, std::vector<HsTrajectoryResult>* traces = nullptr) {
  EstimateReport r;
  const double T = opt.horizon(torus);
  if (V.family() == Family::gaussian) {
    EnvironmentTrajectory traj(torus, 1.0);
    std::vector<double> one(static_cast<std::size_t>(torus.edge_count()), V.second(0.0));
    const auto nodes = static_cast<std::int64_t>(std::ceil(T));
    for (std::int64_t k = 0; k <= nodes; ++k) traj.push(one);
    SolveOptions so;
    so.cfl_fraction = opt.cfl_fraction;
    const auto s = solve_on_trajectory(traj, 0, static_cast<double>(nodes), so);
    r.method = "hs_deterministic";
    r.estimate = s.total();
    r.n = 1;
    r.truncation_bound = s.tail.bound;
    r.extra["integral"] = s.integral;
    r.extra["tail"] = s.tail.tail;
    r.extra["decay_rate"] = s.tail.rate;
    r.extra["t_max"] = static_cast<double>(nodes);
    if (traces) traces->push_back({s.integral, s.tail, s.functionals, s.substeps});
    return r;
  }
  if (opt.trajectories < 8) throw std::invalid_argument("hs_variance: insufficient trajectories (< 8)");
  const Stream root(cfg.seed);
  LangevinConfig start_cfg = cfg;
  start_cfg.seed = root.child("starts").key();
  const auto starts = stationary_starts(torus, V, start_cfg, opt.trajectories, opt.workers);
  std::vector<HsTrajectoryResult> results(static_cast<std::size_t>(opt.trajectories));
  parallel_for(
      opt.trajectories,
      [&](std::int64_t i) {
        results[i] = hs_streaming(starts[i], V, opt, root.child("flow").child(static_cast<std::uint64_t>(i)));
        if (!opt.keep_traces && !traces) results[i].functionals = {};
      },
      opt.workers);
  std::vector<double> totals;
  double bound = 0.0, integral = 0.0, tail = 0.0;
  std::int64_t substeps = 0;
  for (const auto& x : results) {
    totals.push_back(x.integral + x.tail.tail);
    bound = std::max(bound, x.tail.bound);
    integral += x.integral;
    tail += x.tail.tail;
    substeps += x.substeps;
  }
  r.method = "hs_dynamic_environment";
  r.estimate = stats::mean(totals);
  r.stderr_ = stats::standard_error(totals);
  r.n = opt.trajectories;
  r.truncation_bound = bound;
  r.extra["integral_mean"] = integral / opt.trajectories;
  r.extra["tail_mean"] = tail / opt.trajectories;
  r.extra["t_max"] = T;
  r.extra["pde_substeps"] = static_cast<double>(substeps);
  if (traces) *traces = std::move(results);
  return r;
}

// --- gradient tails ------------------------------------------------------------

struct TailFitOptions {
  int bins = 40;
  int bootstrap = 400;
  double s_min = 1.0, s_max = 8.0, s_step = 0.01;
};

namespace detail {

/// Weighted least squares of y on K^s; returns the residual sum of squares.
inline double profile_sse(const std::vector<double>& K, const std::vector<double>& y, const std::vector<double>& wt,
                          double s) {
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < K.size(); ++i) {
    const double x = std::pow(K[i], s);
    sw += wt[i], sx += wt[i] * x, sy += wt[i] * y[i], sxx += wt[i] * x * x, sxy += wt[i] * x * y[i];
  }
  const double den = sw * sxx - sx * sx;
  const double b = den != 0.0 ? (sw * sxy - sx * sy) / den : 0.0;
  const double a = (sy - b * sx) / sw;
  double sse = 0.0;
  for (std::size_t i = 0; i < K.size(); ++i) {
    const double d = y[i] - a - b * std::pow(K[i], s);
    sse += wt[i] * d * d;
  }
  return sse;
}

inline double profile_exponent(const std::vector<double>& K, const std::vector<double>& counts, double width,
                               double n, const TailFitOptions& opt) {
  std::vector<double> k, y, wt;
  for (std::size_t i = 0; i < K.size(); ++i) {
    if (counts[i] < 5) continue;
    k.push_back(K[i]);
    y.push_back(std::log(counts[i] / (n * width)));
    wt.push_back(counts[i]);  // var(log count) ~ 1 / count
  }
  if (k.size() < 5) return std::numeric_limits<double>::quiet_NaN();
  double best = opt.s_min, best_sse = kInfinity;
  for (double s = opt.s_min; s <= opt.s_max + 1e-12; s += opt.s_step) {
    const double sse = profile_sse(k, y, wt, s);
    if (sse < best_sse) best_sse = sse, best = s;
  }
  return best;
}

}  // namespace detail

/// Tail exponent s in P[|X| > K] ~ exp(-c K^s) from pooled samples of
/// grad phi. The log-density of |X| is fitted as A - B K^s over the
/// [90%, 99.9%] quantile band by profiling over s; the interval is a
/// parametric (Poisson-count) bootstrap. The slope of log(-log S) against
/// log K over the same band is reported as `loglog_slope`.
inline EstimateReport gradient_tail(std::span<const double> samples, const Stream& stream, TailFitOptions opt = {}) {
  std::vector<double> x(samples.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::abs(samples[i]);
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  EstimateReport r;
  r.method = "log_density_profile";
  r.n = static_cast<std::int64_t>(x.size());
  if (x.empty()) throw std::invalid_argument("gradient_tail: too few tail points");
  auto q = [&](double p) { return stats::quantile(x, p); };
  // Survival curve on a threshold grid.
  const double top = x.back();
  for (int i = 0; i <= 50; ++i) {
    const double K = top * i / 50.0;
    const auto above = x.end() - std::upper_bound(x.begin(), x.end(), K);
    r.curve.emplace_back(K, static_cast<double>(above) / n);
  }
  const double q99 = q(0.99);
  const auto beyond = x.end() - std::upper_bound(x.begin(), x.end(), q99);
  if (beyond < 30) throw std::invalid_argument("gradient_tail: too few tail points");
  const double lo = q(0.90), hi = q(0.999);
  if (!(hi > lo)) throw std::invalid_argument("gradient_tail: too few tail points");
  const double width = (hi - lo) / opt.bins;
  std::vector<double> centers(opt.bins), counts(opt.bins, 0.0);
  for (int b = 0; b < opt.bins; ++b) centers[b] = lo + (b + 0.5) * width;
  for (auto it = std::lower_bound(x.begin(), x.end(), lo); it != x.end() && *it < hi; ++it)
    counts[std::min(opt.bins - 1, static_cast<int>((*it - lo) / width))] += 1.0;
  r.estimate = detail::profile_exponent(centers, counts, width, n, opt);
  if (!std::isfinite(r.estimate)) throw std::invalid_argument("gradient_tail: too few tail points");
  std::vector<double> boot;
  std::vector<double> c2(counts.size());
  for (int rep = 0; rep < opt.bootstrap; ++rep) {
    for (std::size_t b = 0; b < counts.size(); ++b) {
      const double z = stream.normals(static_cast<std::uint64_t>(rep), b)[0];
      c2[b] = std::max(0.0, std::round(counts[b] + std::sqrt(counts[b]) * z));
    }
    const double s = detail::profile_exponent(centers, c2, width, n, opt);
    if (std::isfinite(s)) boot.push_back(s);
  }
  r.stderr_ = stats::variance(boot) > 0 ? std::sqrt(stats::variance(boot)) : 0.0;
  r.extra["ci_low"] = stats::quantile(boot, 0.025);
  r.extra["ci_high"] = stats::quantile(boot, 0.975);
  r.extra["band_low"] = lo;
  r.extra["band_high"] = hi;
  // Auxiliary: log(-log S(K)) against log K.
  std::vector<double> lx, ly;
  for (int i = 0; i <= 20; ++i) {
    const double K = lo + (hi - lo) * i / 20.0;
    const auto above = x.end() - std::upper_bound(x.begin(), x.end(), K);
    const double S = static_cast<double>(above) / n;
    if (S > 0.0 && S < 1.0 && K > 0.0) {
      lx.push_back(std::log(K));
      ly.push_back(std::log(-std::log(S)));
    }
  }
  if (lx.size() >= 3) r.extra["loglog_slope"] = stats::linear_fit(lx, ly).slope;
  return r;
}

// --- confinement and supremum tails ----------------------------------------------

struct ConfinementOptions {
  int trajectories = 200;
  double flow_dt = 0.002;
  int start_chains = 4;         // chains producing the stationary starts
  double start_spacing = 5.0;   // time between successive starts in one chain
  DtPolicy dt_policy = DtPolicy::adaptive;
  int workers = 0;
};

/// Empirical P[|grad phi_L(s, e)| <= R for all s in [0, T]] for each T in
/// the grid, pooling every edge of every trajectory. Standard errors are
/// cluster-robust by trajectory (edges of one trajectory are dependent).
inline EstimateReport confinement_probability(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg,
                                              double R, const std::vector<double>& T_grid,
                                              ConfinementOptions opt = {}) {
  if (!(R > 0.0)) throw std::invalid_argument("confinement_probability: R must be > 0");
  if (T_grid.empty()) throw std::invalid_argument("confinement_probability: empty T grid");
  const double T_end = *std::max_element(T_grid.begin(), T_grid.end());
  LangevinConfig sc = cfg;
  sc.chain_count = opt.start_chains;
  sc.samples_per_chain = (opt.trajectories + opt.start_chains - 1) / opt.start_chains;
  sc.thinning = opt.start_spacing;
  std::vector<LatticeField> starts(static_cast<std::size_t>(sc.chain_count * sc.samples_per_chain),
                                   LatticeField(torus));
  sample_gibbs(
      torus, V, sc,
      [&](int c, std::int64_t k, const LatticeField& f) { starts[c * sc.samples_per_chain + k] = f; }, nullptr,
      opt.workers);
  const Stream root = Stream(cfg.seed).child("confinement");
  const std::size_t nT = T_grid.size();
  // frac[i][j]: fraction of edges of trajectory i confined up to T_grid[j].
  std::vector<std::vector<double>> frac(static_cast<std::size_t>(opt.trajectories), std::vector<double>(nT));
  parallel_for(
      opt.trajectories,
      [&](std::int64_t i) {
        LangevinConfig flow;
        flow.dt = opt.flow_dt;
        flow.correction = Correction::plain;
        flow.dt_policy = opt.dt_policy;
        LangevinChain chain(torus, V, flow, root.child(static_cast<std::uint64_t>(i)), starts[i]);
        const Index E = torus.edge_count();
        std::vector<double> exit(static_cast<std::size_t>(E), kInfinity);
        auto scan = [&] {
          const auto& f = chain.field();
          for (Index e = 0; e < E; ++e)
            if (exit[e] == kInfinity && std::abs(gradient(f, e)) > R) exit[e] = chain.time();
        };
        scan();
        const auto steps = flow.steps_for(T_end);
        for (std::int64_t s = 0; s < steps; ++s) {
          chain.step();
          scan();
        }
        for (std::size_t j = 0; j < nT; ++j) {
          std::int64_t stay = 0;
          for (const double x : exit) stay += x > T_grid[j] + 1e-12;
          frac[i][j] = static_cast<double>(stay) / static_cast<double>(E);
        }
      },
      opt.workers);
  EstimateReport r;
  r.method = "confinement_cluster_robust";
  r.n = static_cast<std::int64_t>(opt.trajectories) * torus.edge_count();
  std::vector<double> col(frac.size());
  for (std::size_t j = 0; j < nT; ++j) {
    for (std::size_t i = 0; i < frac.size(); ++i) col[i] = frac[i][j];
    r.curve.emplace_back(T_grid[j], stats::mean(col));
    r.extra["stderr_T" + std::to_string(j)] = stats::standard_error(col);
  }
  r.estimate = r.curve.back().second;
  r.stderr_ = r.extra["stderr_T" + std::to_string(nT - 1)];
  r.extra["R"] = R;
  return r;
}

/// P[sup_{[0,T]} |grad phi| >= K] from probe traces sampled on a uniform grid
/// with spacing dt: traces[i] is one trajectory at one probe edge.
inline EstimateReport supremum_tail(const std::vector<std::vector<double>>& traces, double dt, double T,
                                    const std::vector<double>& K_grid) {
  EstimateReport r;
  r.method = "running_supremum";
  r.n = static_cast<std::int64_t>(traces.size());
  const auto last = static_cast<std::size_t>(std::llround(T / dt));
  std::vector<double> sup;
  sup.reserve(traces.size());
  for (const auto& tr : traces) {
    if (tr.size() <= last) throw std::invalid_argument("supremum_tail: trace shorter than T");
    double m = 0.0;
    for (std::size_t k = 0; k <= last; ++k) m = std::max(m, std::abs(tr[k]));
    sup.push_back(m);
  }
  const auto n = static_cast<double>(sup.size());
  for (const double K : K_grid) {
    double c = 0;
    for (const double s : sup) c += s >= K;
    const double p = c / n;
    r.curve.emplace_back(K, p);
    r.extra["stderr_K" + std::to_string(r.curve.size() - 1)] = stats::binomial_se(p, r.n);
  }
  if (!r.curve.empty()) {
    r.estimate = r.curve.front().second;
    r.stderr_ = r.extra["stderr_K0"];
  }
  return r;
}

}  // namespace gradphi
