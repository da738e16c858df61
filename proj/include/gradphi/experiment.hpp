#pragma once

// Experiment driver: runs one configured experiment into a directory of CSV
// tables, summary.json, config.json and plot.py. The variance sweep keeps
// per-chain checkpoints and can be resumed.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "gradphi/config.hpp"
#include "gradphi/dynamics.hpp"
#include "gradphi/estimators.hpp"
#include "gradphi/exponents.hpp"
#include "gradphi/heat_kernel.hpp"
#include "gradphi/inequalities.hpp"
#include "gradphi/moderation.hpp"
#include "gradphi/parallel.hpp"
#include "gradphi/spectral.hpp"
#include "gradphi/stats.hpp"

namespace gradphi {

inline constexpr int kSchemaVersion = 1;

/// Set from a signal handler; chains checkpoint and stop at the next sample.
inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string hex_key(std::uint64_t k) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(k));
  return buf;
}

/// A summary value with its error bar and truncation bound.
inline Json measured(double value, double stderr_ = 0.0, double truncation = 0.0) {
  return {{"value", value}, {"stderr", stderr_}, {"truncation_bound", truncation}};
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  template <class... Ts>
  void row(const Ts&... v) {
    std::vector<std::string> r;
    (r.push_back(cell(v)), ...);
    if (r.size() != header_.size()) throw std::logic_error("csv: row width");
    rows_.push_back(std::move(r));
  }

  std::string str() const {
    std::ostringstream os;
    line(os, header_);
    for (const auto& r : rows_) line(os, r);
    return os.str();
  }

 private:
  static std::string cell(double v) { return fmt_num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(long long v) { return std::to_string(v); }
  static std::string cell(unsigned long v) { return std::to_string(v); }
  static std::string cell(unsigned long long v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static void line(std::ostream& os, const std::vector<std::string>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// All file output goes through one writer; writes are atomic renames.
class RunWriter {
 public:
  explicit RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

  const std::filesystem::path& dir() const { return dir_; }

  void write(const std::string& name, const std::string& bytes) {
    std::lock_guard lock(mutex_);
    const auto path = dir_ / name;
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
      os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::filesystem::path dir_;
  std::mutex mutex_;
};

struct RunContext {
  ExperimentConfig cfg;
  RunWriter* out = nullptr;
  int workers = 0;
  bool resume = false;
  Json results = Json::object();
  Json streams = Json::object();
  Json files = Json::object();  // file -> schema id
  bool partial = false;
  std::vector<std::string> notes;
  std::string plot;

  void table(const std::string& name, const std::string& schema, const CsvTable& t) {
    out->write(name, t.str());
    files[name] = schema + ".v" + std::to_string(kSchemaVersion);
  }
};

inline void log_line(const std::string& s) { std::cerr << "[gradphi] " << s << std::endl; }

inline Stream size_stream(const ExperimentConfig& c, int L) { return Stream(c.seed).child("L").child(static_cast<std::uint64_t>(L)); }

inline LangevinConfig langevin_for(const ExperimentConfig& c, int L) {
  LangevinConfig l = c.langevin;
  l.seed = size_stream(c, L).key();
  return l;
}

inline void describe_size_streams(RunContext& ctx, const std::string& layout) {
  Json per = Json::object();
  for (const int L : ctx.cfg.L) per[std::to_string(L)] = hex_key(size_stream(ctx.cfg, L).key());
  ctx.streams["root"] = hex_key(ctx.cfg.seed);
  ctx.streams["size_roots"] = {{"path", "L/<L>"}, {"keys", per}};
  ctx.streams["layout"] = layout;
}

inline double moderation_p(const ExperimentConfig& c) { return c.moderation.p > 0 ? c.moderation.p : c.d + 1.0; }
inline double moderation_p_prime(const ExperimentConfig& c) {
  return c.moderation.p_prime > 0 ? c.moderation.p_prime : c.d + 1.0;
}

inline HsOptions hs_options(const ExperimentConfig& c, int workers) {
  HsOptions o;
  o.trajectories = c.pde.trajectories;
  o.t_max = c.pde.t_max;
  o.flow_dt = c.pde.flow_dt;
  o.steps_per_node = c.pde.steps_per_node;
  o.cfl_fraction = c.pde.cfl_fraction;
  o.workers = workers;
  return o;
}

inline Json fit_json(const stats::LinearFit& f) {
  return {{"slope", measured(f.slope, f.slope_se)}, {"intercept", measured(f.intercept)}, {"r2", measured(f.r2)}};
}

// --- oracle ----------------------------------------------------------------------

inline void run_oracle(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  const double a = V.family() == Family::gaussian ? V.second(0.0) : 1.0;
  CsvTable tab({"L", "variance", "trace_residual"});
  std::vector<double> lx, ly;
  Json per = Json::array();
  for (const int L : c.L) {
    const double v = gaussian_variance(c.d, L) / a;
    const SpectrumTable spec(c.d, L);
    const double n = std::pow(2.0 * L + 1.0, c.d);
    const double resid = std::abs(spec.trace() - 2.0 * c.d * n) / (2.0 * c.d * n);
    tab.row(L, v, resid);
    per.push_back({{"L", L}, {"variance", measured(v)}, {"trace_residual", measured(resid)}});
    lx.push_back(std::log(static_cast<double>(L)));
    ly.push_back(v);
  }
  ctx.table("oracle.csv", "oracle", tab);
  ctx.results["sizes"] = per;
  if (lx.size() >= 3) ctx.results["log_fit"] = fit_json(stats::linear_fit(lx, ly));
  ctx.streams["root"] = hex_key(c.seed);
  ctx.streams["layout"] = "deterministic; no random streams drawn";
  ctx.plot = R"PY(
rows = read("oracle.csv")
L = col(rows, "L"); v = col(rows, "variance")
fig, ax = plt.subplots()
ax.semilogx(L, v, "o-")
ax.set_xlabel("L"); ax.set_ylabel("Var phi(0), Gaussian")
save(fig, "oracle")
)PY";
}

// --- hs_check ----------------------------------------------------------------------

inline void run_hs_check(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  CsvTable tab({"L", "hs", "hs_stderr", "hs_truncation", "reference", "reference_stderr", "reference_method", "z"});
  Json per = Json::array();
  double max_abs = 0.0;
  for (const int L : c.L) {
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    log_line("hs_check L=" + std::to_string(L));
    const auto hs = hs_variance(t, V, lc, hs_options(c, ctx.workers));
    EstimateReport ref;
    if (V.family() == Family::gaussian) {
      ref.estimate = gaussian_variance(c.d, L) / V.second(0.0);
      ref.method = "spectral_oracle";
    } else {
      ref = mc_variance(t, V, lc, {0, ctx.workers});
    }
    // Flow discretization: rerun the heat-kernel estimate at half the flow
    // step and report the change; the environment law carries an O(dt) bias.
    Json halving;
    if (V.family() != Family::gaussian) {
      auto ho = hs_options(c, ctx.workers);
      ho.flow_dt *= 0.5;
      const auto half = hs_variance(t, V, lc, ho);
      halving = {{"flow_dt", ho.flow_dt},
                 {"hs", measured(half.estimate, half.stderr_, half.truncation_bound)},
                 {"change", measured(half.estimate - hs.estimate, combined_sigma(half, hs))}};
    }
    const double sig = combined_sigma(hs, ref);
    const double diff = hs.estimate - ref.estimate;
    const double z = sig > 0 ? diff / sig : 0.0;
    max_abs = std::max(max_abs, std::abs(diff));
    tab.row(L, hs.estimate, hs.stderr_, hs.truncation_bound, ref.estimate, ref.stderr_, ref.method, z);
    per.push_back({{"L", L},
                   {"hs", measured(hs.estimate, hs.stderr_, hs.truncation_bound)},
                   {"reference", measured(ref.estimate, ref.stderr_)},
                   {"reference_method", ref.method},
                   {"hs_method", hs.method},
                   {"abs_difference", measured(std::abs(diff), sig, hs.truncation_bound)},
                   {"z", measured(z)}});
    if (!halving.is_null()) per.back()["flow_dt_halving"] = halving;
  }
  ctx.table("hs_check.csv", "hs_check", tab);
  ctx.results["sizes"] = per;
  ctx.results["max_abs_difference"] = measured(max_abs);
  describe_size_streams(ctx,
                        "L/<L>/chain/<c>/{noise,accept}: reference chains; L/<L>/starts/chain/<i>/{noise,accept}: "
                        "stationary starts; L/<L>/flow/<i>/noise: environment flow");
  ctx.plot = R"PY(
rows = read("hs_check.csv")
L = col(rows, "L")
fig, ax = plt.subplots()
ax.errorbar(L, col(rows, "hs"), yerr=[2 * s for s in col(rows, "hs_stderr")], fmt="o", label="heat kernel")
ax.errorbar(L, col(rows, "reference"), yerr=[2 * s for s in col(rows, "reference_stderr")], fmt="s", label="reference")
ax.set_xlabel("L"); ax.set_ylabel("Var phi(0)"); ax.legend()
save(fig, "hs_check")
)PY";
}

// --- variance sweep (checkpointed) --------------------------------------------------

struct ChainCheckpoint {
  std::string hash;
  int d = 0, L = 0, chain = 0;
  std::uint64_t step = 0;
  std::int64_t accepted = 0, proposed = 0, retained = 0;
  bool burned_in = false;
  std::vector<double> field, second, origin;
};

namespace detail {
inline constexpr std::uint64_t kCheckpointMagic = 0x3154504b43485047ull;  // "GPHCKPT1"

inline std::string encode_checkpoint(const ChainCheckpoint& c) {
  std::ostringstream os(std::ios::binary);
  put_u64(os, kCheckpointMagic);
  put_str(os, c.hash);
  put_u64(os, static_cast<std::uint64_t>(c.d));
  put_u64(os, static_cast<std::uint64_t>(c.L));
  put_u64(os, static_cast<std::uint64_t>(c.chain));
  put_u64(os, c.step);
  put_u64(os, static_cast<std::uint64_t>(c.accepted));
  put_u64(os, static_cast<std::uint64_t>(c.proposed));
  put_u64(os, static_cast<std::uint64_t>(c.retained));
  put_u64(os, c.burned_in ? 1 : 0);
  for (const auto* v : {&c.field, &c.second, &c.origin}) {
    put_u64(os, v->size());
    for (const double x : *v) put_f64(os, x);
  }
  return os.str();
}

inline ChainCheckpoint decode_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint '" + path + "'");
  if (get_u64(is) != kCheckpointMagic) throw std::runtime_error("checkpoint '" + path + "': bad magic");
  ChainCheckpoint c;
  c.hash = get_str(is);
  c.d = static_cast<int>(get_u64(is));
  c.L = static_cast<int>(get_u64(is));
  c.chain = static_cast<int>(get_u64(is));
  c.step = get_u64(is);
  c.accepted = static_cast<std::int64_t>(get_u64(is));
  c.proposed = static_cast<std::int64_t>(get_u64(is));
  c.retained = static_cast<std::int64_t>(get_u64(is));
  c.burned_in = get_u64(is) != 0;
  for (auto* v : {&c.field, &c.second, &c.origin}) {
    const auto n = get_u64(is);
    if (n > (1ull << 34)) throw std::runtime_error("checkpoint '" + path + "': bad length");
    v->resize(n);
    for (auto& x : *v) x = get_f64(is);
  }
  return c;
}
}  // namespace detail

inline std::string checkpoint_name(int L, int chain) {
  return "checkpoints/L" + std::to_string(L) + "_chain" + std::to_string(chain) + ".bin";
}

/// Runs (or continues) one chain until `samples_per_chain` retained samples
/// exist, checkpointing after burn-in, periodically, and at the end.
inline ChainCheckpoint run_checkpointed_chain(const Torus& t, const PotentialSpec& V, const LangevinConfig& lc,
                                              int chain_index, const std::string& hash, const ChainCheckpoint* from,
                                              RunWriter& out) {
  GibbsChain chain(t, V, lc, Stream(lc.seed).child("chain").child(static_cast<std::uint64_t>(chain_index)));
  ChainCheckpoint ck;
  ck.hash = hash;
  ck.d = t.dim();
  ck.L = t.half_side();
  ck.chain = chain_index;
  if (from) {
    if (from->retained > lc.samples_per_chain)
      throw std::runtime_error("resume: sample budget (" + std::to_string(lc.samples_per_chain) +
                               ") is below the samples already retained (" + std::to_string(from->retained) + ")");
    chain.restore(from->field, from->step, from->accepted, from->proposed, from->retained, from->burned_in);
    ck.second = from->second;
    ck.origin = from->origin;
  }
  auto save = [&] {
    const auto& c = chain.chain();
    ck.step = c.step_index();
    ck.accepted = c.accepted();
    ck.proposed = c.proposed();
    ck.retained = chain.retained();
    ck.burned_in = chain.burned_in();
    ck.field = c.field().raw();
    out.write(checkpoint_name(ck.L, chain_index), detail::encode_checkpoint(ck));
  };
  if (!chain.burned_in()) {
    chain.burn_in();
    save();
  }
  const std::int64_t every = std::max<std::int64_t>(1, lc.samples_per_chain / 20);
  while (chain.retained() < lc.samples_per_chain) {
    if (stop_requested()) break;
    const auto& f = chain.next();
    ck.second.push_back(second_moment(f));
    ck.origin.push_back(f[0]);
    if (chain.retained() % every == 0) save();
  }
  save();
  return ck;
}

inline void run_variance_sweep(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  const std::string hash = resume_hash(c);
  CsvTable samples({"L", "chain", "k", "second_moment", "phi0"});
  CsvTable tab({"L", "variance", "stderr", "n", "batches", "acceptance_mean"});
  Json per = Json::array();
  std::vector<double> lx, ly;
  std::vector<EstimateReport> reps;
  std::vector<int> sizes;
  for (const int L : c.L) {
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    std::vector<ChainCheckpoint> cks(static_cast<std::size_t>(lc.chain_count));
    std::vector<ChainCheckpoint> prior(cks.size());
    std::vector<char> have(cks.size(), 0);
    if (ctx.resume) {
      for (int ch = 0; ch < lc.chain_count; ++ch) {
        const auto path = ctx.out->dir() / checkpoint_name(L, ch);
        if (!std::filesystem::exists(path)) continue;
        prior[ch] = detail::decode_checkpoint(path.string());
        if (prior[ch].hash != hash)
          throw std::runtime_error("resume: checkpoint/config hash mismatch for " + checkpoint_name(L, ch) +
                                   " (checkpoint " + prior[ch].hash + ", config " + hash + ")");
        if (prior[ch].d != c.d || prior[ch].L != L || prior[ch].chain != ch)
          throw std::runtime_error("resume: checkpoint " + checkpoint_name(L, ch) + " belongs to another chain");
        have[ch] = 1;
      }
    }
    log_line("variance_sweep L=" + std::to_string(L));
    parallel_for(
        lc.chain_count,
        [&](std::int64_t ch) {
          cks[ch] = run_checkpointed_chain(t, V, lc, static_cast<int>(ch), hash, have[ch] ? &prior[ch] : nullptr,
                                           *ctx.out);
        },
        ctx.workers);
    std::vector<std::vector<double>> second, origin;
    std::vector<double> acceptance;
    bool complete = true;
    for (const auto& ck : cks) {
      for (std::size_t k = 0; k < ck.second.size(); ++k)
        samples.row(L, ck.chain, static_cast<long long>(k), ck.second[k], ck.origin[k]);
      second.push_back(ck.second);
      origin.push_back(ck.origin);
      acceptance.push_back(ck.proposed ? static_cast<double>(ck.accepted) / ck.proposed : 1.0);
      complete &= ck.retained == lc.samples_per_chain;
    }
    Json entry = {{"L", L}, {"retained_per_chain", cks.empty() ? 0 : cks[0].retained}};
    if (!complete) {
      ctx.partial = true;
      entry["status"] = "interrupted";
    }
    try {
      const auto r = mc_report(second, origin, acceptance, 0, lc.correction);
      tab.row(L, r.estimate, r.stderr_, static_cast<long long>(r.n), r.extra.at("batches"),
              r.extra.at("acceptance_mean"));
      entry["variance"] = measured(r.estimate, r.stderr_);
      entry["acceptance_mean"] = measured(r.extra.at("acceptance_mean"));
      entry["mean_phi0"] = measured(r.extra.at("mean_phi0"), r.extra.at("mean_phi0_stderr"));
      lx.push_back(std::log(static_cast<double>(L)));
      ly.push_back(r.estimate);
      reps.push_back(r);
      sizes.push_back(L);
    } catch (const std::invalid_argument& e) {
      ctx.partial = true;
      if (!entry.contains("status")) entry["status"] = "insufficient_samples";
      ctx.notes.push_back("L=" + std::to_string(L) + ": " + e.what());
    }
    per.push_back(entry);
  }
  ctx.table("samples.csv", "variance_samples", samples);
  ctx.table("variance.csv", "variance_sweep", tab);
  ctx.results["sizes"] = per;
  if (lx.size() >= 3) ctx.results["log_fit"] = fit_json(stats::linear_fit(lx, ly));
  Json inc = Json::array();
  for (std::size_t i = 1; i < reps.size(); ++i) {
    const double dv = reps[i].estimate - reps[i - 1].estimate;
    inc.push_back({{"from", sizes[i - 1]}, {"to", sizes[i]}, {"increment", measured(dv, combined_sigma(reps[i], reps[i - 1]))}});
  }
  ctx.results["increments"] = inc;
  describe_size_streams(ctx, "L/<L>/chain/<c>/{noise,accept}: Gibbs chain c at size L");
  ctx.plot = R"PY(
rows = read("variance.csv")
fig, ax = plt.subplots()
ax.errorbar(col(rows, "L"), col(rows, "variance"), yerr=[2 * s for s in col(rows, "stderr")], fmt="o-")
ax.set_xscale("log"); ax.set_xlabel("L"); ax.set_ylabel("Var phi(0)")
save(fig, "variance_sweep")
)PY";
}

// --- heat-kernel decay ------------------------------------------------------------

/// Indices of a geometric subset of nodes with t in [lo, hi].
inline std::vector<std::size_t> log_spaced(const std::vector<double>& t, double lo, double hi, int per_decade = 20) {
  std::vector<std::size_t> out;
  if (t.size() < 2) return out;
  const double dt = t[1] - t[0];
  for (double s = lo; s <= hi * (1 + 1e-12); s *= std::pow(10.0, 1.0 / per_decade)) {
    const auto k = static_cast<std::size_t>(std::llround(s / dt));
    if (k < t.size() && (out.empty() || k != out.back())) out.push_back(k);
  }
  return out;
}

inline void run_heatkernel_decay(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  const double p = moderation_p(c);
  const auto ex = exponent_table(c.d, p, moderation_p_prime(c));
  const ModerationWeights weights(p, calibrate_delta(p));
  CsvTable curve({"L", "t", "p_mean", "p_stderr", "p_gaussian"});
  CsvTable maxi({"L", "t", "m_pp", "m0", "m1", "m2", "m3", "m4"});
  Json per = Json::array();
  for (const int L : c.L) {
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    const double T = c.pde.t_max > 0 ? c.pde.t_max : std::max(2.0, L * L / 4.0);
    const double node_dt = c.pde.flow_dt * static_cast<double>(c.pde.steps_per_node);
    const int n = c.pde.trajectories;
    const Stream root(lc.seed);
    LangevinConfig sc = lc;
    sc.seed = root.child("starts").key();
    const auto starts = stationary_starts(t, V, sc, n, ctx.workers);
    std::vector<std::vector<double>> P(static_cast<std::size_t>(n));
    std::vector<InvariantMonitor> mon(P.size());
    std::vector<std::int64_t> subs(P.size());
    MaximalDiagnostics md;
    const double H = c.moderation.horizon;
    log_line("heatkernel_decay L=" + std::to_string(L));
    parallel_for(
        n,
        [&](std::int64_t i) {
          // Trajectory 0 runs long enough to evaluate w, and the maximal
          // functions, on [0, T + 1].
          const double horizon = i == 0 ? T + H + 1.0 : T;
          const auto traj =
              evolve_trajectory(starts[i], V, c.pde.flow_dt, horizon, root.child("flow").child(static_cast<std::uint64_t>(i)),
                                {c.pde.steps_per_node, {}}, DtPolicy::adaptive);
          SolveOptions so;
          so.cfl_fraction = c.pde.cfl_fraction;
          so.monitor_invariants = true;
          const auto s = solve_on_trajectory(traj, 0, T, so);
          P[i] = s.functionals.p_diag;
          mon[i] = s.monitor;
          subs[i] = s.substeps;
          if (i == 0) {
            ModerationOptions mo;
            mo.horizon = H;
            mo.sketch_variant = c.moderation.sketch_variant;
            const ModeratedEnvironment env(traj, weights, mo);
            const auto stride = std::max<std::int64_t>(1, std::llround(0.25 / node_dt));
            const auto grid = sample_w_grid(env, stride, env.last_node());
            const double last = (grid.slices.size() - 1) * grid.dt;
            md = maximal_quantities(traj, grid, weights, ex, std::min(T, last - 1.0));
          }
        },
        ctx.workers);
    const std::size_t nodes = P[0].size();
    std::vector<double> tt(nodes), mean(nodes), se(nodes), col(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < nodes; ++k) {
      for (int i = 0; i < n; ++i) col[i] = P[i][k];
      tt[k] = static_cast<double>(k) * node_dt;
      mean[k] = stats::mean(col);
      se[k] = n > 1 ? stats::standard_error(col) : 0.0;
    }
    for (const std::size_t k : log_spaced(tt, node_dt, T, 40))
      curve.row(L, tt[k], mean[k], se[k], gaussian_heat_kernel(c.d, L, tt[k]));
    std::vector<double> lx, ly;
    for (const std::size_t k : log_spaced(tt, 1.0, T)) {
      if (!(mean[k] > 0.0)) continue;
      lx.push_back(std::log(tt[k]));
      ly.push_back(std::log(mean[k]));
    }
    double drift = 0.0;
    std::int64_t viol = 0, checked = 0, total = 0;
    for (int i = 0; i < n; ++i) {
      drift = std::max(drift, mon[i].max_mass_drift);
      viol += mon[i].bound_violations;
      checked += mon[i].substeps_checked;
      total += subs[i];
    }
    for (std::size_t k = 0; k < md.t.size(); ++k)
      maxi.row(L, md.t[k], md.m_pp[k], md.m0[k], md.m1[k], md.m2[k], md.m3[k], md.m4[k]);
    Json entry = {{"L", L},
                  {"t_max", T},
                  {"trajectories", n},
                  {"max_mass_drift", measured(drift)},
                  {"bound_violations", measured(static_cast<double>(viol))},
                  {"substeps_checked", measured(static_cast<double>(checked))},
                  {"pde_substeps", measured(static_cast<double>(total))},
                  {"constants",
                   {{"scr1", measured(md.scr1)},
                    {"scr2", measured(md.scr2)},
                    {"scr3", measured(md.scr3)},
                    {"scr4", measured(md.scr4)},
                    {"scr", measured(md.scr)},
                    {"scr_prime", measured(md.scr_prime)},
                    {"window", md.window}}}};
    if (lx.size() >= 3) {
      entry["loglog_fit"] = fit_json(stats::linear_fit(lx, ly));
      entry["fit_window"] = {1.0, T};
    } else {
      ctx.notes.push_back("L=" + std::to_string(L) + ": fit window [1, T] too short for a slope");
    }
    per.push_back(entry);
  }
  ctx.table("heatkernel.csv", "heatkernel_decay", curve);
  ctx.table("maximal.csv", "maximal_functions", maxi);
  ctx.results["sizes"] = per;
  ctx.results["moderation"] = {{"p", p}, {"p_prime", moderation_p_prime(c)}, {"delta", weights.delta()}};
  describe_size_streams(ctx,
                        "L/<L>/starts/chain/<i>/{noise,accept}: stationary starts; L/<L>/flow/<i>/noise: "
                        "environment flow of trajectory i");
  ctx.plot = R"PY(
rows = read("heatkernel.csv")
fig, ax = plt.subplots()
for L in sorted(set(col(rows, "L"))):
    r = [x for x in rows if float(x["L"]) == L]
    ax.loglog(col(r, "t"), col(r, "p_mean"), label="L=%d" % L)
    ax.loglog(col(r, "t"), col(r, "p_gaussian"), "--", color="gray")
ax.set_xlabel("t"); ax.set_ylabel("P(t, 0)"); ax.legend()
save(fig, "heatkernel_decay")
)PY";
}

// --- gradient tails -------------------------------------------------------------

inline void run_tails(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  CsvTable surv({"L", "K", "survival"});
  CsvTable sup({"L", "K", "probability", "stderr"});
  Json per = Json::array();
  for (const int L : c.L) {
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    const Stream root(lc.seed);
    const auto E = static_cast<std::size_t>(t.edge_count());
    std::vector<double> grads(static_cast<std::size_t>(lc.chain_count * lc.samples_per_chain) * E);
    log_line("tails L=" + std::to_string(L));
    sample_gibbs(
        t, V, lc,
        [&](int ch, std::int64_t k, const LatticeField& f) {
          const std::size_t base = (static_cast<std::size_t>(ch) * lc.samples_per_chain + k) * E;
          for (Index e = 0; e < t.edge_count(); ++e) grads[base + e] = gradient(f, e);
        },
        nullptr, ctx.workers);
    const auto fit = gradient_tail(grads, root.child("bootstrap"));
    for (const auto& [K, S] : fit.curve) surv.row(L, K, S);
    std::vector<double> absg(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) absg[i] = std::abs(grads[i]);
    std::vector<double> Ks = c.tails.K;
    if (Ks.empty()) {
      const double lo = stats::quantile(absg, 0.5), hi = stats::quantile(absg, 0.999);
      for (int i = 0; i < 12; ++i) Ks.push_back(lo + (hi - lo) * i / 11.0);
    }
    // Suprema along the flow on the edges at the origin.
    LangevinConfig sc = lc;
    sc.seed = root.child("starts").key();
    const auto starts = stationary_starts(t, V, sc, c.tails.trajectories, ctx.workers);
    std::vector<Index> probes;
    for (int i = 0; i < c.d; ++i) probes.push_back(t.edge(0, i));
    std::vector<std::vector<double>> traces(static_cast<std::size_t>(c.tails.trajectories) * probes.size());
    const double dt = c.pde.flow_dt;
    parallel_for(
        c.tails.trajectories,
        [&](std::int64_t i) {
          LangevinConfig flow;
          flow.dt = dt;
          flow.correction = Correction::plain;
          flow.dt_policy = DtPolicy::adaptive;
          LangevinChain chain(t, V, flow, root.child("flow").child(static_cast<std::uint64_t>(i)), starts[i]);
          const auto steps = flow.steps_for(c.tails.horizon);
          for (std::int64_t s = 0;; ++s) {
            for (std::size_t q = 0; q < probes.size(); ++q)
              traces[i * probes.size() + q].push_back(gradient(chain.field(), probes[q]));
            if (s == steps) break;
            chain.step();
          }
        },
        ctx.workers);
    const auto st = supremum_tail(traces, dt, c.tails.horizon, Ks);
    for (std::size_t j = 0; j < st.curve.size(); ++j)
      sup.row(L, st.curve[j].first, st.curve[j].second, st.extra.at("stderr_K" + std::to_string(j)));
    Json entry = {{"L", L},
                  {"pooled_samples", fit.n},
                  {"tail_exponent", measured(fit.estimate, fit.stderr_)},
                  {"tail_exponent_ci", {fit.extra.at("ci_low"), fit.extra.at("ci_high")}},
                  {"fit_band", {fit.extra.at("band_low"), fit.extra.at("band_high")}},
                  {"supremum_horizon", c.tails.horizon}};
    if (fit.extra.count("loglog_slope")) entry["loglog_slope"] = measured(fit.extra.at("loglog_slope"));
    per.push_back(entry);
  }
  ctx.table("tails_survival.csv", "tails_survival", surv);
  ctx.table("tails_supremum.csv", "tails_supremum", sup);
  ctx.results["sizes"] = per;
  describe_size_streams(ctx,
                        "L/<L>/chain/<c>/{noise,accept}: Gibbs chains; L/<L>/bootstrap: tail-fit bootstrap; "
                        "L/<L>/starts/...: flow starts; L/<L>/flow/<i>/noise: flow of trajectory i");
  ctx.plot = R"PY(
rows = read("tails_survival.csv")
fig, ax = plt.subplots()
for L in sorted(set(col(rows, "L"))):
    r = [x for x in rows if float(x["L"]) == L and float(x["survival"]) > 0]
    ax.semilogy(col(r, "K"), col(r, "survival"), label="L=%d" % L)
ax.set_xlabel("K"); ax.set_ylabel("P[|grad phi| > K]"); ax.legend()
save(fig, "tails_survival")
rows = read("tails_supremum.csv")
fig, ax = plt.subplots()
for L in sorted(set(col(rows, "L"))):
    r = [x for x in rows if float(x["L"]) == L]
    ax.errorbar(col(r, "K"), col(r, "probability"), yerr=[2 * s for s in col(r, "stderr")], label="L=%d" % L)
ax.set_xlabel("K"); ax.set_ylabel("P[sup |grad phi| >= K]"); ax.legend()
save(fig, "tails_supremum")
)PY";
}

// --- exit time ---------------------------------------------------------------------

inline void run_exit_time(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const PotentialSpec V = c.potential.build();
  const double R = c.exit.R > 0 ? c.exit.R : compute_r_v(V).r_v;
  CsvTable tab({"L", "T", "probability", "stderr"});
  Json per = Json::array();
  for (const int L : c.L) {
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    ConfinementOptions o;
    o.trajectories = c.exit.trajectories;
    o.flow_dt = c.pde.flow_dt;
    o.workers = ctx.workers;
    log_line("exit_time L=" + std::to_string(L));
    const auto r = confinement_probability(t, V, lc, R, c.exit.T, o);
    Json pts = Json::array();
    bool decreasing = true;
    for (std::size_t j = 0; j < r.curve.size(); ++j) {
      const double se = r.extra.at("stderr_T" + std::to_string(j));
      tab.row(L, r.curve[j].first, r.curve[j].second, se);
      pts.push_back({{"T", r.curve[j].first}, {"probability", measured(r.curve[j].second, se)}});
      if (j > 0) decreasing &= r.curve[j].second < r.curve[j - 1].second;
    }
    per.push_back({{"L", L}, {"R", R}, {"curve", pts}, {"strictly_decreasing", decreasing}});
  }
  ctx.table("exit_time.csv", "exit_time", tab);
  ctx.results["sizes"] = per;
  describe_size_streams(ctx,
                        "L/<L>/chain/<c>/{noise,accept}: start chains; L/<L>/confinement/<i>/noise: flow of "
                        "trajectory i");
  ctx.plot = R"PY(
rows = read("exit_time.csv")
fig, ax = plt.subplots()
for L in sorted(set(col(rows, "L"))):
    r = [x for x in rows if float(x["L"]) == L]
    ax.errorbar(col(r, "T"), col(r, "probability"), yerr=[2 * s for s in col(r, "stderr")], fmt="o-", label="L=%d" % L)
ax.set_xscale("log"); ax.set_xlabel("T"); ax.set_ylabel("P[confined up to T]"); ax.legend()
save(fig, "exit_time")
)PY";
}

// --- inequalities -----------------------------------------------------------------

struct ModerationRun {
  ModerationStats stats;
  std::vector<ModerationSample> samples;
};

/// One stationary trajectory of the configured potential, a recorded solve,
/// and `count` uniformly drawn (node, edge) pairs inside the window where
/// both w and at least H of the right-hand integral are available.
inline ModerationRun moderation_ratios(const Torus& t, const PotentialSpec& V, const LangevinConfig& lc,
                                       const ExperimentConfig& c, const ModerationWeights& weights, const Stream& s,
                                       int count, double window) {
  LangevinConfig sc = lc;
  sc.seed = s.child("start").key();
  const auto start = stationary_starts(t, V, sc, 1, 1)[0];
  const double H = c.moderation.horizon;
  const auto traj = evolve_trajectory(start, V, c.pde.flow_dt, window + H, s.child("flow"),
                                      {c.pde.steps_per_node, {}}, DtPolicy::adaptive);
  SolveOptions so;
  so.cfl_fraction = c.pde.cfl_fraction;
  so.record_fields = true;
  const auto solve = solve_on_trajectory(traj, 0, traj.horizon(), so);
  ModerationOptions mo;
  mo.horizon = H;
  const ModeratedEnvironment env(traj, weights, mo);
  ModerationRun run;
  const auto last = env.last_node();
  const Stream pick = s.child("pick");
  for (int i = 0; i < count; ++i) {
    const auto node = static_cast<std::int64_t>(pick.uniform(static_cast<std::uint64_t>(i), 0) * (last + 1));
    const auto e = static_cast<Index>(pick.uniform(static_cast<std::uint64_t>(i), 1) * t.edge_count());
    run.samples.push_back({std::min(node, last), std::min(e, t.edge_count() - 1)});
  }
  run.stats = check_moderation(traj, solve, env, run.samples);
  return run;
}

/// The three listed Efron cases followed by 20 randomized log-concave
/// pairs drawn from `stream`.
inline std::vector<std::pair<std::string, EfronVerdict>> efron_suite(const Stream& stream, int workers) {
  const DensityGrid grid;
  std::vector<double> gauss(static_cast<std::size_t>(grid.n)), lap(gauss.size());
  for (int i = 0; i < grid.n; ++i) {
    const double x = grid.at(i);
    gauss[i] = std::exp(-0.5 * x * x);
    lap[i] = std::exp(-std::sqrt(1.0 + x * x));
  }
  struct Case {
    std::string name;
    const std::vector<double>* fx;
    const std::vector<double>* fy;
    std::function<double(double, double)> psi;
  };
  std::vector<std::vector<double>> rnd(40);
  for (int i = 0; i < 40; ++i) rnd[i] = random_log_concave(grid, stream.child(static_cast<std::uint64_t>(i)));
  std::vector<Case> cases{{"gaussian_sum", &gauss, &gauss, [](double x, double y) { return x + y; }},
                          {"gaussian_first", &gauss, &gauss, [](double x, double) { return x; }},
                          {"laplace_min3", &lap, &lap, [](double x, double) { return std::min(x, 3.0); }}};
  for (int i = 0; i < 20; ++i) {
    auto psi = i % 2 ? std::function<double(double, double)>([](double x, double) { return std::tanh(x); })
                     : std::function<double(double, double)>([](double x, double y) { return std::min(x, 1.0) + 0.5 * y; });
    cases.push_back({"random_" + std::to_string(i), &rnd[2 * i], &rnd[2 * i + 1], psi});
  }
  std::vector<EfronVerdict> verdicts(cases.size());
  parallel_for(
      static_cast<std::int64_t>(cases.size()),
      [&](std::int64_t i) { verdicts[i] = check_efron(*cases[i].fx, *cases[i].fy, grid, cases[i].psi); }, workers);
  std::vector<std::pair<std::string, EfronVerdict>> out;
  for (std::size_t i = 0; i < cases.size(); ++i) out.emplace_back(cases[i].name, verdicts[i]);
  return out;
}

inline void run_inequalities(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const double p = moderation_p(c), pp = moderation_p_prime(c);
  const auto ex = exponent_table(c.d, p, pp);
  const Stream root = Stream(c.seed);
  Json& R = ctx.results;
  R["exponents"] = {{"d", c.d},
                    {"p", p},
                    {"p_prime", pp},
                    {"lambda", ex.lambda},
                    {"kappa", ex.kappa},
                    {"sigma", ex.sigma},
                    {"tau", ex.tau},
                    {"theta_c", ex.theta_c},
                    {"alpha", ex.alpha},
                    {"beta", ex.beta},
                    {"gamma", ex.gamma},
                    {"identity_residual", measured(ex.identity_residual())}};

  // GNS on smooth random fields.
  CsvTable gns({"L", "instance", "ratio"});
  Json gns_sizes = Json::array();
  const int corpus = 100;
  if (c.d >= 2) {
    // theta = 1: 1/kappa = 1/lambda - 1/d, the Sobolev end of the family.
    const double kappa = ex.kappa, lambda = ex.lambda, theta = 1.0;
    for (const int L : c.L) {
      const Torus t(c.d, L);
      std::vector<double> ratios(corpus);
      parallel_for(
          corpus,
          [&](std::int64_t i) {
            const auto f = smooth_random_field(t, root.child("gns").child(static_cast<std::uint64_t>(L)).child(
                                                      static_cast<std::uint64_t>(i)));
            ratios[i] = check_gns(f, kappa, lambda, 2.0, theta);
          },
          ctx.workers);
      for (int i = 0; i < corpus; ++i) gns.row(L, i, ratios[i]);
      gns_sizes.push_back({{"L", L},
                           {"max_ratio", measured(*std::max_element(ratios.begin(), ratios.end()))},
                           {"median_ratio", measured(stats::quantile(ratios, 0.5))}});
    }
  } else {
    ctx.notes.push_back("GNS corpus skipped for d = 1 (kappa_d is negative)");
  }
  ctx.table("gns.csv", "gns", gns);
  R["gns"] = gns_sizes;

  // Anchored Nash on heat-kernel profiles with w = 1.
  CsvTable nash({"L", "t", "ratio", "m_pp"});
  Json nash_sizes = Json::array();
  for (const int L : c.L) {
    const Torus t(c.d, L);
    EnvironmentTrajectory flat(t, 0.05);
    const std::vector<double> one(static_cast<std::size_t>(t.edge_count()), 1.0);
    for (int k = 0; k <= 80; ++k) flat.push(one);
    SolveOptions so;
    so.record_fields = true;
    const auto s = solve_on_trajectory(flat, 0, 4.0, so);
    double mx = 0.0;
    for (const int k : {20, 40, 80}) {
      LatticeField u(t, s.fields[k]);
      project_mean_zero(u.raw());
      const auto r = check_anchored_nash(u, one, ex);
      nash.row(L, k * 0.05, r.ratio, r.m_pp);
      mx = std::max(mx, r.ratio);
    }
    nash_sizes.push_back({{"L", L}, {"max_ratio", measured(mx)}});
  }
  ctx.table("nash.csv", "anchored_nash", nash);
  R["anchored_nash"] = nash_sizes;

  // Moderation ratios on stationary trajectories, three seeds.
  const PotentialSpec V = c.potential.build();
  const ModerationWeights weights(p, calibrate_delta(p));
  CsvTable mod({"seed_index", "node", "edge", "ratio"});
  Json mod_runs = Json::array();
  {
    const int L = c.L.front();
    const Torus t(c.d, L);
    const auto lc = langevin_for(c, L);
    std::vector<ModerationRun> runs(3);
    log_line("moderation L=" + std::to_string(L));
    parallel_for(
        3,
        [&](std::int64_t r) {
          runs[r] = moderation_ratios(t, V, lc, c, weights, root.child("moderation").child(static_cast<std::uint64_t>(r)),
                                      1000, std::max(4.0, L * L / 4.0));
        },
        ctx.workers);
    for (int r = 0; r < 3; ++r) {
      for (std::size_t i = 0; i < runs[r].samples.size(); ++i)
        mod.row(r, static_cast<long long>(runs[r].samples[i].node), static_cast<long long>(runs[r].samples[i].edge),
                runs[r].stats.ratios[i]);
      const auto& st = runs[r].stats;
      mod_runs.push_back({{"seed_index", r},
                          {"median", measured(st.median)},
                          {"p99", measured(st.p99)},
                          {"max", measured(st.max)},
                          {"p99_over_median", measured(st.median > 0 ? st.p99 / st.median : kInfinity)}});
    }
  }
  ctx.table("moderation.csv", "moderation", mod);
  R["moderation"] = {{"runs", mod_runs}, {"delta", weights.delta()}, {"L", c.L.front()}};

  // Efron monotonicity: listed cases plus randomized log-concave pairs.
  CsvTable efr({"case", "nondecreasing", "worst_drop"});
  int passed = 0;
  const auto efron = efron_suite(root.child("efron"), ctx.workers);
  for (const auto& [name, v] : efron) {
    efr.row(name, v.nondecreasing, v.worst_drop);
    passed += v.nondecreasing;
  }
  ctx.table("efron.csv", "efron", efr);
  R["efron"] = {{"cases", static_cast<int>(efron.size())}, {"nondecreasing", passed}};

  const auto kv = check_k_properties(weights);
  R["kernel"] = {{"p", p},
                 {"delta", weights.delta()},
                 {"pass", kv.pass},
                 {"integral_margin", measured(kv.integral_margin)},
                 {"convolution_margin", measured(kv.convolution_margin)},
                 {"worst_s_prime", kv.worst_s_prime}};
  ctx.streams["root"] = hex_key(c.seed);
  ctx.streams["layout"] =
      "gns/<L>/<i>: random fields; moderation/<r>/{start,flow,pick}: trajectory r and its sample pairs; "
      "efron/<i>: random log-concave densities";
  ctx.plot = R"PY(
rows = read("moderation.csv")
fig, ax = plt.subplots()
for r in sorted(set(col(rows, "seed_index"))):
    v = sorted(float(x["ratio"]) for x in rows if float(x["seed_index"]) == r and float(x["ratio"]) > 0)
    ax.loglog(v, [1 - (i + 0.5) / len(v) for i in range(len(v))], label="seed %d" % r)
ax.set_xlabel("ratio"); ax.set_ylabel("fraction above"); ax.legend()
save(fig, "moderation")
rows = read("gns.csv")
if rows:
    fig, ax = plt.subplots()
    ax.plot(col(rows, "L"), col(rows, "ratio"), ".", alpha=0.4)
    ax.set_xscale("log"); ax.set_xlabel("L"); ax.set_ylabel("GNS ratio")
    save(fig, "gns")
)PY";
}

// --- driver ----------------------------------------------------------------------------

inline std::string plot_script(const RunContext& ctx) {
  std::string s = R"PY(#!/usr/bin/env python3
# Generated by gradphi; renders the figures of this run from its CSV files.
import csv
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read(name):
    with open(os.path.join(HERE, name)) as f:
        return list(csv.DictReader(f))


def col(rows, key):
    return [float(r[key]) for r in rows]


def save(fig, stem):
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, stem + ".png"), dpi=120)
    plt.close(fig)

)PY";
  return s + ctx.plot;
}

inline Json summary_json(const RunContext& ctx, const std::string& error) {
  Json s;
  s["schema_version"] = kSchemaVersion;
  s["experiment"] = to_string(ctx.cfg.kind);
  s["seed"] = ctx.cfg.seed;
  s["config_hash"] = config_hash(ctx.cfg);
  s["resume_hash"] = resume_hash(ctx.cfg);
  s["partial"] = ctx.partial || !error.empty();
  if (!error.empty()) s["error"] = error;
  s["notes"] = ctx.notes;
  s["streams"] = ctx.streams;
  s["files"] = ctx.files;
  s["results"] = ctx.results;
  return s;
}

/// Runs an experiment into `dir`. Returns the summary; rethrows compute
/// errors after writing a summary flagged partial.
inline Json run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& dir, bool resume = false) {
  RunWriter out(dir);
  RunContext ctx;
  ctx.cfg = cfg;
  ctx.out = &out;
  ctx.workers = worker_count();
  ctx.resume = resume;
  if (!resume) out.write("config.json", to_json(cfg).dump(2) + "\n");
  try {
    switch (cfg.kind) {
      case ExperimentKind::oracle: run_oracle(ctx); break;
      case ExperimentKind::hs_check: run_hs_check(ctx); break;
      case ExperimentKind::variance_sweep: run_variance_sweep(ctx); break;
      case ExperimentKind::heatkernel_decay: run_heatkernel_decay(ctx); break;
      case ExperimentKind::tails: run_tails(ctx); break;
      case ExperimentKind::exit_time: run_exit_time(ctx); break;
      case ExperimentKind::inequalities: run_inequalities(ctx); break;
    }
  } catch (const std::exception& e) {
    const std::string msg = std::string(to_string(cfg.kind)) + ": " + e.what();
    out.write("summary.json", summary_json(ctx, msg).dump(2) + "\n");
    throw std::runtime_error(msg);
  }
  if (stop_requested()) {
    ctx.partial = true;
    ctx.notes.push_back("interrupted; resume to continue");
  }
  out.write("plot.py", plot_script(ctx));
  const Json s = summary_json(ctx, "");
  out.write("summary.json", s.dump(2) + "\n");
  return s;
}

/// Continues a checkpointed run with the (possibly edited) budget in the
/// directory's config.json.
inline Json resume_experiment(const std::filesystem::path& dir) {
  const auto cfg = load_config((dir / "config.json").string());
  if (cfg.kind != ExperimentKind::variance_sweep)
    throw std::runtime_error("resume: only variance_sweep runs keep chain checkpoints");
  if (!std::filesystem::exists(dir / "checkpoints"))
    throw std::runtime_error("resume: no checkpoints in '" + dir.string() + "'");
  // Refuse before touching any output.
  const std::string hash = resume_hash(cfg);
  for (const auto& entry : std::filesystem::directory_iterator(dir / "checkpoints")) {
    if (entry.path().extension() != ".bin") continue;
    const auto ck = detail::decode_checkpoint(entry.path().string());
    if (ck.hash != hash)
      throw std::runtime_error("resume: checkpoint/config hash mismatch for " + entry.path().filename().string() +
                               " (checkpoint " + ck.hash + ", config " + hash + ")");
  }
  return run_experiment(cfg, dir, true);
}

}  // namespace gradphi
