#pragma once

// Langevin dynamics  d phi = div V'(grad phi) dt + sqrt(2) dB  on the torus,
// discretized by explicit Euler-Maruyama, with an optional Metropolis
// correction (MALA) for exact static sampling of the Gibbs measure.
// Fields are kept mean-zero; the projection never changes a gradient.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gradphi/lattice.hpp"
#include "gradphi/potential.hpp"
#include "gradphi/rng.hpp"

namespace gradphi {

class UnstableStep : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Correction { plain, metropolis_adjusted };
enum class DtPolicy { fixed, adaptive };

struct LangevinConfig {
  double dt = 0.01;
  double burn_in = -1.0;  // time units; negative selects 10 L^2
  double thinning = 1.0;  // time units between retained samples
  int chain_count = 1;
  std::int64_t samples_per_chain = 1000;
  std::uint64_t seed = 0;
  Correction correction = Correction::metropolis_adjusted;
  DtPolicy dt_policy = DtPolicy::fixed;
  double blowup_guard = 1e6;

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("langevin.dt must be > 0");
    if (!(thinning > 0.0)) throw std::invalid_argument("langevin.thinning must be > 0");
    if (chain_count < 1) throw std::invalid_argument("langevin.chain_count must be >= 1");
    if (samples_per_chain < 0) throw std::invalid_argument("langevin.samples_per_chain must be >= 0");
  }
  double burn_in_time(const Torus& t) const {
    return burn_in >= 0.0 ? burn_in : 10.0 * t.half_side() * t.half_side();
  }
  std::int64_t steps_for(double time) const { return static_cast<std::int64_t>(std::llround(time / dt)); }
};

namespace detail {

struct DriftStats {
  double energy = 0.0;
  double max_second = 0.0;
  double max_abs_gradient = 0.0;
};

/// drift = div V'(grad phi); optionally the energy sum_e V(grad phi(e)) and
/// the largest V'' and |grad phi| over all edges.
template <class F, bool kEnergy, bool kCurvature>
DriftStats drift_kernel(const Torus& t, const F& f, const double* phi, double* drift) {
  DriftStats st;
  const Index n = t.vertex_count();
  const int d = t.dim();
  const auto heads = t.heads();
  std::fill(drift, drift + n, 0.0);
  for (Index x = 0; x < n; ++x) {
    const double px = phi[x];
    for (int i = 0; i < d; ++i) {
      const Index y = heads[x * d + i];
      const double g = phi[y] - px;
      double fp;
      if constexpr (kEnergy) {
        const Derivatives v = f(g);
        st.energy += v.value;
        fp = v.first;
      } else {
        fp = f.first(g);
      }
      if constexpr (kCurvature) {
        st.max_second = std::max(st.max_second, f.second(g));
        st.max_abs_gradient = std::max(st.max_abs_gradient, std::abs(g));
      }
      drift[x] += fp;
      drift[y] -= fp;
    }
  }
  return st;
}

}  // namespace detail

/// (div V'(grad f))(x): outgoing positively oriented edges minus incoming.
inline double nonlinear_divergence(const LatticeField& f, const PotentialSpec& V, Index x) {
  const Torus& t = f.torus();
  double s = 0.0;
  for (int i = 0; i < t.dim(); ++i) {
    s += V.first(gradient(f, t.edge(x, i)));
    s -= V.first(gradient(f, t.edge(t.neighbor(x, i, -1), i)));
  }
  return s;
}

inline LatticeField nonlinear_divergence_field(const LatticeField& f, const PotentialSpec& V) {
  LatticeField out(f.torus());
  V.visit([&](const auto& fam) {
    detail::drift_kernel<std::decay_t<decltype(fam)>, false, false>(f.torus(), fam, f.values().data(),
                                                                    out.values().data());
  });
  return out;
}

/// Hamiltonian sum_e V(grad phi(e)).
inline double energy(const LatticeField& f, const PotentialSpec& V) {
  double h = 0.0;
  for (Index e = 0; e < f.torus().edge_count(); ++e) h += V.evaluate(gradient(f, e)).value;
  return h;
}

/// One explicit Euler-Maruyama step followed by mean re-projection:
///   phi <- phi + dt div V'(grad phi) + sqrt(2 dt) noise.
inline LatticeField langevin_step(const LatticeField& phi, const PotentialSpec& V, double dt,
                                  std::span<const double> noise, double blowup_guard = 1e6) {
  const Torus& t = phi.torus();
  if (static_cast<Index>(noise.size()) != t.vertex_count()) throw std::invalid_argument("langevin_step: noise size");
  LatticeField out(t);
  const double amp = std::sqrt(2.0 * dt);
  auto& o = out.raw();
  V.visit([&](const auto& fam) {
    detail::drift_kernel<std::decay_t<decltype(fam)>, false, false>(t, fam, phi.values().data(), o.data());
  });
  for (Index x = 0; x < t.vertex_count(); ++x) o[x] = phi[x] + dt * o[x] + amp * noise[x];
  project_mean_zero(o);
  for (Index e = 0; e < t.edge_count(); ++e)
    if (!(std::abs(gradient(out, e)) <= blowup_guard)) throw UnstableStep("unstable step: |grad phi| exceeds guard");
  return out;
}

/// Largest dt allowed by the explicit-scheme policy dt <= 0.25 / (2d max V'').
inline double stable_dt(const Torus& t, double max_second) {
  return max_second > 0.0 ? 0.25 / (2.0 * t.dim() * max_second) : std::numeric_limits<double>::infinity();
}

/// One Langevin chain with counter-based noise: the normal driving site x at
/// step n is a function of (stream, n, x) only.
class LangevinChain {
 public:
  LangevinChain(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg, Stream stream,
                LatticeField init)
      : torus_(&torus),
        V_(&V),
        cfg_(cfg),
        noise_stream_(stream.child("noise")),
        accept_stream_(stream.child("accept")),
        phi_(std::move(init)),
        drift_(static_cast<std::size_t>(torus.vertex_count())),
        proposal_(drift_.size()),
        proposal_drift_(drift_.size()),
        noise_(drift_.size()) {
    project_mean_zero(phi_.raw());
    refresh();
  }

  const LatticeField& field() const { return phi_; }
  std::uint64_t step_index() const { return step_; }
  double time() const { return static_cast<double>(step_) * cfg_.dt; }
  std::int64_t accepted() const { return accepted_; }
  std::int64_t proposed() const { return proposed_; }
  double acceptance_rate() const { return proposed_ ? static_cast<double>(accepted_) / proposed_ : 1.0; }
  std::int64_t substeps_taken() const { return substeps_; }

  /// Restores a checkpointed state (field plus counters).
  void restore(std::vector<double> values, std::uint64_t step, std::int64_t accepted, std::int64_t proposed) {
    phi_ = LatticeField(*torus_, std::move(values));
    step_ = step;
    accepted_ = accepted;
    proposed_ = proposed;
    refresh();
  }

  /// Advances one step of size dt with the configured correction.
  void step() {
    if (cfg_.correction == Correction::metropolis_adjusted)
      mala_step();
    else
      plain_step();
  }

  void advance(std::int64_t steps) {
    for (std::int64_t i = 0; i < steps; ++i) step();
  }

  /// Plain Euler-Maruyama step. With dt_policy=fixed a violation of the
  /// stability bound throws; with adaptive the step is split into equal
  /// substeps, each driven by its own normals.
  void plain_step() {
    const double bound = stable_dt(*torus_, stats_.max_second);
    int parts = 1;
    if (cfg_.dt > bound) {
      if (cfg_.dt_policy == DtPolicy::fixed)
        throw UnstableStep("unstable step: dt=" + std::to_string(cfg_.dt) + " exceeds stability bound " +
                           std::to_string(bound) + " at step " + std::to_string(step_));
      parts = static_cast<int>(std::ceil(cfg_.dt / bound));
    }
    const Index n = torus_->vertex_count();
    const double h = cfg_.dt / parts;
    const double amp = std::sqrt(2.0 * h);
    for (int p = 0; p < parts; ++p) {
      if (p > 0) refresh();
      draw_noise(p);
      auto& phi = phi_.raw();
      for (Index x = 0; x < n; ++x) phi[x] += h * drift_[x] + amp * noise_[x];
      project_mean_zero(phi);
      ++substeps_;
    }
    ++step_;
    refresh();
    if (!(stats_.max_abs_gradient <= cfg_.blowup_guard))
      throw UnstableStep("unstable step: |grad phi| exceeds guard at step " + std::to_string(step_));
  }

  /// Metropolis-adjusted Langevin step on the mean-zero subspace.
  void mala_step() {
    const Index n = torus_->vertex_count();
    const double dt = cfg_.dt;
    const double amp = std::sqrt(2.0 * dt);
    draw_noise(0);
    project_mean_zero(noise_);
    const auto& phi = phi_.raw();
    for (Index x = 0; x < n; ++x) proposal_[x] = phi[x] + dt * drift_[x] + amp * noise_[x];
    project_mean_zero(proposal_);
    ++proposed_;
    const detail::DriftStats prop = V_->visit([&](const auto& fam) {
      return detail::drift_kernel<std::decay_t<decltype(fam)>, true, true>(*torus_, fam, proposal_.data(),
                                                                           proposal_drift_.data());
    });
    // log q(x | y) - log q(y | x), q(y | x) ~ exp(-|y - x - dt F(x)|^2 / (4 dt)).
    double forward = 0.0, backward = 0.0;
    for (Index x = 0; x < n; ++x) {
      const double f = proposal_[x] - phi[x] - dt * drift_[x];
      const double b = phi[x] - proposal_[x] - dt * proposal_drift_[x];
      forward += f * f;
      backward += b * b;
    }
    const double log_ratio = -(prop.energy - stats_.energy) - (backward - forward) / (4.0 * dt);
    const double u = accept_stream_.uniform(step_, 0);
    if (std::isfinite(prop.energy) && prop.max_abs_gradient <= cfg_.blowup_guard && std::log(u) < log_ratio) {
      phi_.raw().swap(proposal_);
      drift_.swap(proposal_drift_);
      stats_ = prop;
      ++accepted_;
    }
    ++step_;
  }

 private:
  void refresh() {
    stats_ = V_->visit([&](const auto& fam) {
      return detail::drift_kernel<std::decay_t<decltype(fam)>, true, true>(*torus_, fam, phi_.values().data(),
                                                                           drift_.data());
    });
  }

  void draw_noise(int part) {
    const Index n = torus_->vertex_count();
    const std::uint64_t pairs = static_cast<std::uint64_t>((n + 1) / 2);
    Index i = 0;
    for (; i + 1 < n; i += 2) {
      const auto z = noise_stream_.normals(step_, part * pairs + static_cast<std::uint64_t>(i >> 1));
      noise_[i] = z[0];
      noise_[i + 1] = z[1];
    }
    if (i < n) noise_[i] = noise_stream_.normals(step_, part * pairs + static_cast<std::uint64_t>(i >> 1))[0];
  }

  const Torus* torus_;
  const PotentialSpec* V_;
  LangevinConfig cfg_;
  Stream noise_stream_;
  Stream accept_stream_;
  LatticeField phi_;
  std::vector<double> drift_, proposal_, proposal_drift_, noise_;
  detail::DriftStats stats_;
  std::uint64_t step_ = 0;
  std::int64_t accepted_ = 0, proposed_ = 0, substeps_ = 0;
};

/// Burn-in followed by retained samples at the thinning interval, for one
/// chain. sample_gibbs below runs many of these.
class GibbsChain {
 public:
  GibbsChain(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg, Stream stream)
      : cfg_(cfg), chain_(torus, V, cfg, stream, LatticeField(torus)) {
    cfg.validate();
  }

  void burn_in() {
    if (burned_in_) return;
    chain_.advance(cfg_.steps_for(cfg_.burn_in_time(chain_.field().torus())));
    burned_in_ = true;
  }

  /// Next retained sample (performs burn-in on first use).
  const LatticeField& next() {
    burn_in();
    chain_.advance(std::max<std::int64_t>(1, cfg_.steps_for(cfg_.thinning)));
    ++retained_;
    return chain_.field();
  }

  bool burned_in() const { return burned_in_; }
  std::int64_t retained() const { return retained_; }
  LangevinChain& chain() { return chain_; }
  const LangevinChain& chain() const { return chain_; }

  void restore(std::vector<double> values, std::uint64_t step, std::int64_t accepted, std::int64_t proposed,
               std::int64_t retained, bool burned_in) {
    chain_.restore(std::move(values), step, accepted, proposed);
    retained_ = retained;
    burned_in_ = burned_in;
  }

 private:
  LangevinConfig cfg_;
  LangevinChain chain_;
  std::int64_t retained_ = 0;
  bool burned_in_ = false;
};

/// Retained samples for every chain, in chain order. `visit(chain, k, field)`
/// is called from the worker that owns the chain.
template <class Visit>
void sample_gibbs(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg, Visit&& visit,
                  std::vector<double>* acceptance = nullptr, int workers = 0);

/// Time-indexed environment a(t, e) = V''(grad phi(t, e)) on a uniform node
/// grid t_k = k * node_dt, plus |grad phi| traces on selected probe edges.
class EnvironmentTrajectory {
 public:
  EnvironmentTrajectory() = default;
  EnvironmentTrajectory(const Torus& torus, double node_dt) : torus_(&torus), node_dt_(node_dt) {}

  const Torus& torus() const { return *torus_; }
  double node_dt() const { return node_dt_; }
  std::int64_t node_count() const {
    return torus_ ? static_cast<std::int64_t>(values_.size() / torus_->edge_count()) : 0;
  }
  double horizon() const { return node_count() > 0 ? (node_count() - 1) * node_dt_ : 0.0; }
  std::span<const double> slice(std::int64_t k) const {
    const auto E = static_cast<std::size_t>(torus_->edge_count());
    return {values_.data() + k * E, E};
  }
  double at(std::int64_t k, Index e) const { return values_[k * torus_->edge_count() + e]; }

  void push(std::span<const double> a) {
    if (static_cast<Index>(a.size()) != torus_->edge_count()) throw std::invalid_argument("trajectory: slice size");
    values_.insert(values_.end(), a.begin(), a.end());
  }
  const std::vector<double>& raw() const { return values_; }

  // Metadata carried into the binary record.
  std::string potential_tag;
  std::uint64_t seed = 0;
  double langevin_dt = 0.0;

  std::vector<Index> probe_edges;
  std::vector<std::vector<double>> probe_traces;  // [probe][node]: grad phi(t_k, e)

 private:
  const Torus* torus_ = nullptr;
  double node_dt_ = 0.0;
  std::vector<double> values_;
};

struct TrajectoryOptions {
  std::int64_t steps_per_node = 1;
  std::vector<Index> probe_edges;
};

inline void environment_slice(const LatticeField& phi, const PotentialSpec& V, std::span<double> out) {
  const Torus& t = phi.torus();
  V.visit([&](const auto& fam) {
    for (Index e = 0; e < t.edge_count(); ++e) out[e] = fam.second(gradient(phi, e));
  });
}

/// Plain (unadjusted) Langevin flow from phi0 over [0, horizon], recording
/// the environment on the node grid.
inline EnvironmentTrajectory evolve_trajectory(const LatticeField& phi0, const PotentialSpec& V, double dt,
                                               double horizon, Stream stream, TrajectoryOptions opt = {},
                                               DtPolicy policy = DtPolicy::fixed) {
  const Torus& t = phi0.torus();
  LangevinConfig cfg;
  cfg.dt = dt;
  cfg.correction = Correction::plain;
  cfg.dt_policy = policy;
  LangevinChain chain(t, V, cfg, stream, phi0);
  EnvironmentTrajectory traj(t, dt * opt.steps_per_node);
  traj.potential_tag = V.tag();
  traj.langevin_dt = dt;
  traj.probe_edges = opt.probe_edges;
  traj.probe_traces.assign(opt.probe_edges.size(), {});
  std::vector<double> slice(static_cast<std::size_t>(t.edge_count()));
  const std::int64_t nodes = static_cast<std::int64_t>(std::llround(horizon / traj.node_dt()));
  for (std::int64_t k = 0;; ++k) {
    environment_slice(chain.field(), V, slice);
    traj.push(slice);
    for (std::size_t p = 0; p < opt.probe_edges.size(); ++p)
      traj.probe_traces[p].push_back(gradient(chain.field(), opt.probe_edges[p]));
    if (k == nodes) break;
    chain.advance(opt.steps_per_node);
  }
  return traj;
}

// --- Brownian increment / bridge decomposition ------------------------------

/// Per site: unit-window increments X_n = B_{n+1} - B_n and bridges
/// W_n(s) = B_{n+s} - B_n - s X_n sampled at s = j / m, j = 0..m.
struct NoiseDecomposition {
  int window_count = 0;
  int per_window = 0;  // m: sub-grid points per unit window
  std::vector<double> origin;                   // [site] B_0
  std::vector<std::vector<double>> increments;  // [site][n]
  std::vector<std::vector<double>> bridges;     // [site][n * (m + 1) + j]

  double bridge(std::size_t site, int n, int j) const { return bridges[site][n * (per_window + 1) + j]; }

  /// B at sub-grid node n * m + j.
  double reconstruct(std::size_t site, int n, int j) const {
    double b = origin[site];
    for (int k = 0; k < n; ++k) b += increments[site][k];
    if (n == window_count) return b;
    return b + (static_cast<double>(j) / per_window) * increments[site][n] + bridge(site, n, j);
  }
};

/// paths[site] holds B on the grid t_i = i / m, i = 0..N m.
inline NoiseDecomposition decompose_noise(const std::vector<std::vector<double>>& paths, int window_count,
                                          int per_window) {
  if (window_count < 1 || per_window < 1) throw std::invalid_argument("decompose_noise: need N >= 1 and m >= 1");
  NoiseDecomposition out;
  out.window_count = window_count;
  out.per_window = per_window;
  const std::size_t expected = static_cast<std::size_t>(window_count) * per_window + 1;
  for (const auto& path : paths) {
    if (path.size() != expected)
      throw std::invalid_argument("decompose_noise: grid not aligned to windows (expected " +
                                  std::to_string(expected) + " nodes, got " + std::to_string(path.size()) + ")");
    out.origin.push_back(path[0]);
    std::vector<double> inc(window_count), br(static_cast<std::size_t>(window_count) * (per_window + 1));
    for (int n = 0; n < window_count; ++n) {
      const double b0 = path[static_cast<std::size_t>(n) * per_window];
      inc[n] = path[static_cast<std::size_t>(n + 1) * per_window] - b0;
      for (int j = 0; j <= per_window; ++j) {
        const double s = static_cast<double>(j) / per_window;
        br[n * (per_window + 1) + j] = path[static_cast<std::size_t>(n) * per_window + j] - b0 - s * inc[n];
      }
      // Exact zeros at the window endpoints.
      br[n * (per_window + 1)] = 0.0;
      br[n * (per_window + 1) + per_window] = 0.0;
    }
    out.increments.push_back(std::move(inc));
    out.bridges.push_back(std::move(br));
  }
  return out;
}

/// The Brownian path B(x) that drives a plain chain at site x, B_t = sum of
/// sqrt(dt) xi over completed steps, on the step grid.
inline std::vector<double> driving_path(Stream chain_stream, const Torus& t, Index site, double dt,
                                        std::int64_t steps) {
  const Stream noise = chain_stream.child("noise");
  std::vector<double> b(static_cast<std::size_t>(steps) + 1, 0.0);
  const double amp = std::sqrt(dt);
  (void)t;
  for (std::int64_t n = 0; n < steps; ++n) {
    const auto z = noise.normals(static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(site >> 1));
    b[n + 1] = b[n] + amp * z[site & 1];
  }
  return b;
}

// --- binary trajectory records ----------------------------------------------

namespace detail {
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("binary record: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}
inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }
inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  const auto n = get_u64(is);
  if (n > (1u << 20)) throw std::runtime_error("binary record: bad string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("binary record: truncated");
  return s;
}
inline constexpr std::uint64_t kTrajectoryMagic = 0x3154415254485047ull;  // "GPHTRAT1"
}  // namespace detail

/// Layout (all little-endian 64-bit): magic, d, L, dt (node spacing, f64),
/// node_count, potential tag (length + bytes), seed, then node_count arrays
/// of edge_count f64 values. A text manifest `<path>.manifest` describes it.
inline void write_trajectory(const EnvironmentTrajectory& traj, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write trajectory '" + path + "'");
  const Torus& t = traj.torus();
  detail::put_u64(os, detail::kTrajectoryMagic);
  detail::put_u64(os, static_cast<std::uint64_t>(t.dim()));
  detail::put_u64(os, static_cast<std::uint64_t>(t.half_side()));
  detail::put_f64(os, traj.node_dt());
  detail::put_u64(os, static_cast<std::uint64_t>(traj.node_count()));
  detail::put_str(os, traj.potential_tag);
  detail::put_u64(os, traj.seed);
  for (const double v : traj.raw()) detail::put_f64(os, v);
  std::ofstream man(path + ".manifest");
  man << "format: gradphi-trajectory v1\n"
      << "byte_order: little-endian\n"
      << "dimension: " << t.dim() << "\nhalf_side: " << t.half_side() << "\nnode_dt: " << traj.node_dt()
      << "\nnode_count: " << traj.node_count() << "\nedge_count: " << t.edge_count()
      << "\npotential: " << traj.potential_tag << "\nseed: " << traj.seed
      << "\nlayout: header(magic,d,L,node_dt,node_count,potential,seed) then node-major f64 edge arrays\n"
      << "edge_index: tail_vertex * d + axis, positively oriented along +axis\n";
}

/// Reads a trajectory record; the torus must match the header.
inline EnvironmentTrajectory read_trajectory(const Torus& t, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read trajectory '" + path + "'");
  if (detail::get_u64(is) != detail::kTrajectoryMagic) throw std::runtime_error("trajectory: bad magic");
  const auto d = detail::get_u64(is), L = detail::get_u64(is);
  if (d != static_cast<std::uint64_t>(t.dim()) || L != static_cast<std::uint64_t>(t.half_side()))
    throw std::runtime_error("trajectory: torus mismatch");
  const double node_dt = detail::get_f64(is);
  const auto nodes = detail::get_u64(is);
  EnvironmentTrajectory traj(t, node_dt);
  traj.potential_tag = detail::get_str(is);
  traj.seed = detail::get_u64(is);
  std::vector<double> slice(static_cast<std::size_t>(t.edge_count()));
  for (std::uint64_t k = 0; k < nodes; ++k) {
    for (auto& v : slice) v = detail::get_f64(is);
    traj.push(slice);
  }
  return traj;
}

}  // namespace gradphi

#include "gradphi/parallel.hpp"

namespace gradphi {

template <class Visit>
void sample_gibbs(const Torus& torus, const PotentialSpec& V, const LangevinConfig& cfg, Visit&& visit,
                  std::vector<double>* acceptance, int workers) {
  cfg.validate();
  const Stream root(cfg.seed);
  if (acceptance) acceptance->assign(static_cast<std::size_t>(cfg.chain_count), 0.0);
  parallel_for(
      cfg.chain_count,
      [&](std::int64_t c) {
        GibbsChain chain(torus, V, cfg, root.child("chain").child(static_cast<std::uint64_t>(c)));
        for (std::int64_t k = 0; k < cfg.samples_per_chain; ++k) visit(static_cast<int>(c), k, chain.next());
        if (acceptance) (*acceptance)[c] = chain.chain().acceptance_rate();
      },
      workers);
}

}  // namespace gradphi
