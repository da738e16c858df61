#pragma once

// Experiment configuration: JSON tree, validation with field paths, canonical
// serialization and hashing.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gradphi/dynamics.hpp"
#include "gradphi/estimators.hpp"
#include "gradphi/potential.hpp"
#include "gradphi/rng.hpp"

namespace gradphi {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& msg) : std::runtime_error(path + ": " + msg), path(path) {}
  std::string path;
};

enum class ExperimentKind { variance_sweep, hs_check, heatkernel_decay, tails, exit_time, inequalities, oracle };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::variance_sweep: return "variance_sweep";
    case ExperimentKind::hs_check: return "hs_check";
    case ExperimentKind::heatkernel_decay: return "heatkernel_decay";
    case ExperimentKind::tails: return "tails";
    case ExperimentKind::exit_time: return "exit_time";
    case ExperimentKind::inequalities: return "inequalities";
    case ExperimentKind::oracle: return "oracle";
  }
  return "?";
}

struct PotentialConfig {
  std::string family = "power";
  double r = 4.0;
  double b = 1.0;
  double asym = 0.0;
  double scale = 1.0;
  std::string file;

  PotentialSpec build() const {
    switch (parse_family(family)) {
      case Family::gaussian: return PotentialSpec::gaussian(scale);
      case Family::power: return PotentialSpec::power(r);
      case Family::flat_bottom: return PotentialSpec::flat_bottom(b, asym);
      case Family::user_table: return PotentialSpec::table_file(file, r);
    }
    throw std::logic_error("unreachable");
  }
};

struct PdeConfig {
  double t_max = -1.0;
  double flow_dt = 0.002;
  std::int64_t steps_per_node = 10;
  double cfl_fraction = 0.5;
  int trajectories = 8;
};

struct ModerationConfig {
  double p = -1.0;        // negative: d + 1
  double p_prime = -1.0;  // negative: d + 1
  double horizon = 10.0;
  bool sketch_variant = false;
};

struct TailsConfig {
  int trajectories = 64;
  double horizon = 4.0;
  std::vector<double> K;
};

struct ExitConfig {
  double R = -1.0;  // negative: R_V
  std::vector<double> T{1, 2, 4, 8, 16};
  int trajectories = 200;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::oracle;
  std::uint64_t seed = 1;
  std::string output = "run";
  int d = 2;
  std::vector<int> L{4};
  PotentialConfig potential;
  LangevinConfig langevin;
  PdeConfig pde;
  ModerationConfig moderation;
  TailsConfig tails;
  ExitConfig exit;
};

namespace detail {

template <class T>
T field(const Json& j, const std::string& parent, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->template get<T>();
  } catch (const std::exception&) {
    throw ConfigError(parent.empty() ? key : parent + "." + key, "wrong type");
  }
}

inline const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  const auto it = j.find(key);
  if (it == j.end()) return empty;
  if (!it->is_object()) throw ConfigError(key, "must be an object");
  return *it;
}

inline void check_keys(const Json& j, const std::string& parent, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok |= it.key() == a;
    if (!ok) throw ConfigError(parent.empty() ? it.key() : parent + "." + it.key(), "unknown key");
  }
}

}  // namespace detail

/// Parses and validates; every error names the offending field path.
inline ExperimentConfig parse_config(const Json& j) {
  using detail::field;
  if (!j.is_object()) throw ConfigError("<root>", "must be an object");
  detail::check_keys(j, "", {"experiment", "seed", "output", "torus", "potential", "langevin", "pde", "moderation",
                             "tails", "exit_time"});
  ExperimentConfig c;
  const std::string kind = field<std::string>(j, "", "experiment", "oracle");
  bool known = false;
  for (auto k : {ExperimentKind::variance_sweep, ExperimentKind::hs_check, ExperimentKind::heatkernel_decay,
                 ExperimentKind::tails, ExperimentKind::exit_time, ExperimentKind::inequalities, ExperimentKind::oracle})
    if (kind == to_string(k)) c.kind = k, known = true;
  if (!known) throw ConfigError("experiment", "unknown experiment kind '" + kind + "'");
  c.seed = field<std::uint64_t>(j, "", "seed", 1);
  c.output = field<std::string>(j, "", "output", "run");

  const Json& t = detail::section(j, "torus");
  detail::check_keys(t, "torus", {"d", "L"});
  c.d = field<int>(t, "torus", "d", 2);
  if (c.d < 1 || c.d > 3) throw ConfigError("torus.d", "must be 1, 2 or 3");
  if (t.contains("L")) {
    if (t["L"].is_array())
      c.L = field<std::vector<int>>(t, "torus", "L", {});
    else
      c.L = {field<int>(t, "torus", "L", 1)};
  }
  if (c.L.empty()) throw ConfigError("torus.L", "must not be empty");
  for (const int L : c.L)
    if (L < 1) throw ConfigError("torus.L", "must be >= 1");

  const Json& p = detail::section(j, "potential");
  detail::check_keys(p, "potential", {"family", "r", "b", "asym", "scale", "file"});
  c.potential.family = field<std::string>(p, "potential", "family", "power");
  try {
    (void)parse_family(c.potential.family);
  } catch (const std::exception& e) {
    throw ConfigError("potential.family", e.what());
  }
  c.potential.r = field<double>(p, "potential", "r", 4.0);
  c.potential.b = field<double>(p, "potential", "b", 1.0);
  c.potential.asym = field<double>(p, "potential", "asym", 0.0);
  c.potential.scale = field<double>(p, "potential", "scale", 1.0);
  c.potential.file = field<std::string>(p, "potential", "file", "");
  if (c.potential.family == "power" && !(c.potential.r >= 2.0)) throw ConfigError("potential.r", "must be >= 2");
  if (c.potential.family == "flat_bottom" && !(c.potential.b >= 0.0)) throw ConfigError("potential.b", "must be >= 0");
  if (c.potential.family == "flat_bottom" && !(c.potential.asym >= 0.0))
    throw ConfigError("potential.asym", "must be >= 0");
  if (c.potential.family == "gaussian" && !(c.potential.scale > 0.0))
    throw ConfigError("potential.scale", "must be > 0");
  if (c.potential.family == "user_table" && c.potential.file.empty())
    throw ConfigError("potential.file", "required for user_table");

  const Json& l = detail::section(j, "langevin");
  detail::check_keys(l, "langevin", {"dt", "burn_in", "thinning", "chain_count", "samples_per_chain", "correction",
                                     "dt_policy", "blowup_guard"});
  auto& lc = c.langevin;
  lc.seed = c.seed;
  lc.dt = field<double>(l, "langevin", "dt", 0.01);
  lc.burn_in = field<double>(l, "langevin", "burn_in", -1.0);
  lc.thinning = field<double>(l, "langevin", "thinning", 1.0);
  lc.chain_count = field<int>(l, "langevin", "chain_count", 4);
  lc.samples_per_chain = field<std::int64_t>(l, "langevin", "samples_per_chain", 1000);
  lc.blowup_guard = field<double>(l, "langevin", "blowup_guard", 1e6);
  const auto corr = field<std::string>(l, "langevin", "correction", "metropolis_adjusted");
  if (corr == "plain")
    lc.correction = Correction::plain;
  else if (corr == "metropolis_adjusted")
    lc.correction = Correction::metropolis_adjusted;
  else
    throw ConfigError("langevin.correction", "must be plain or metropolis_adjusted");
  const auto pol = field<std::string>(l, "langevin", "dt_policy", "fixed");
  if (pol == "fixed")
    lc.dt_policy = DtPolicy::fixed;
  else if (pol == "adaptive")
    lc.dt_policy = DtPolicy::adaptive;
  else
    throw ConfigError("langevin.dt_policy", "must be fixed or adaptive");
  if (!(lc.dt > 0.0)) throw ConfigError("langevin.dt", "must be > 0");
  if (!(lc.thinning > 0.0)) throw ConfigError("langevin.thinning", "must be > 0");
  if (lc.chain_count < 1) throw ConfigError("langevin.chain_count", "must be >= 1");
  if (lc.samples_per_chain < 0) throw ConfigError("langevin.samples_per_chain", "must be >= 0");
  if (!(lc.blowup_guard > 0.0)) throw ConfigError("langevin.blowup_guard", "must be > 0");

  const Json& pd = detail::section(j, "pde");
  detail::check_keys(pd, "pde", {"t_max", "flow_dt", "steps_per_node", "cfl_fraction", "trajectories"});
  c.pde.t_max = field<double>(pd, "pde", "t_max", -1.0);
  c.pde.flow_dt = field<double>(pd, "pde", "flow_dt", 0.002);
  c.pde.steps_per_node = field<std::int64_t>(pd, "pde", "steps_per_node", 10);
  c.pde.cfl_fraction = field<double>(pd, "pde", "cfl_fraction", 0.5);
  c.pde.trajectories = field<int>(pd, "pde", "trajectories", 8);
  if (!(c.pde.flow_dt > 0.0)) throw ConfigError("pde.flow_dt", "must be > 0");
  if (c.pde.steps_per_node < 1) throw ConfigError("pde.steps_per_node", "must be >= 1");
  if (!(c.pde.cfl_fraction > 0.0 && c.pde.cfl_fraction <= 1.0)) throw ConfigError("pde.cfl_fraction", "must be in (0, 1]");
  if (c.pde.trajectories < 1) throw ConfigError("pde.trajectories", "must be >= 1");

  const Json& m = detail::section(j, "moderation");
  detail::check_keys(m, "moderation", {"p", "p_prime", "horizon", "sketch_variant"});
  c.moderation.p = field<double>(m, "moderation", "p", -1.0);
  c.moderation.p_prime = field<double>(m, "moderation", "p_prime", -1.0);
  c.moderation.horizon = field<double>(m, "moderation", "horizon", 10.0);
  c.moderation.sketch_variant = field<bool>(m, "moderation", "sketch_variant", false);
  if (c.moderation.p > 0 && !(c.moderation.p > c.d)) throw ConfigError("moderation.p", "must exceed d");
  if (c.moderation.p_prime > 0 && !(c.moderation.p_prime > c.d)) throw ConfigError("moderation.p_prime", "must exceed d");
  if (!(c.moderation.horizon > 0.0)) throw ConfigError("moderation.horizon", "must be > 0");

  const Json& tl = detail::section(j, "tails");
  detail::check_keys(tl, "tails", {"trajectories", "horizon", "K"});
  c.tails.trajectories = field<int>(tl, "tails", "trajectories", 64);
  c.tails.horizon = field<double>(tl, "tails", "horizon", 4.0);
  c.tails.K = field<std::vector<double>>(tl, "tails", "K", {});
  if (c.tails.trajectories < 1) throw ConfigError("tails.trajectories", "must be >= 1");
  if (!(c.tails.horizon > 0.0)) throw ConfigError("tails.horizon", "must be > 0");

  const Json& ex = detail::section(j, "exit_time");
  detail::check_keys(ex, "exit_time", {"R", "T", "trajectories"});
  c.exit.R = field<double>(ex, "exit_time", "R", -1.0);
  c.exit.T = field<std::vector<double>>(ex, "exit_time", "T", {1, 2, 4, 8, 16});
  c.exit.trajectories = field<int>(ex, "exit_time", "trajectories", 200);
  if (c.exit.T.empty()) throw ConfigError("exit_time.T", "must not be empty");
  for (const double T : c.exit.T)
    if (!(T > 0.0)) throw ConfigError("exit_time.T", "entries must be > 0");
  if (c.exit.trajectories < 1) throw ConfigError("exit_time.trajectories", "must be >= 1");
  return c;
}

/// Full tree with every default made explicit.
inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["experiment"] = to_string(c.kind);
  j["seed"] = c.seed;
  j["output"] = c.output;
  j["torus"] = {{"d", c.d}, {"L", c.L}};
  j["potential"] = {{"family", c.potential.family}, {"r", c.potential.r},   {"b", c.potential.b},
                    {"asym", c.potential.asym},     {"scale", c.potential.scale}, {"file", c.potential.file}};
  const auto& l = c.langevin;
  j["langevin"] = {{"dt", l.dt},
                   {"burn_in", l.burn_in},
                   {"thinning", l.thinning},
                   {"chain_count", l.chain_count},
                   {"samples_per_chain", l.samples_per_chain},
                   {"correction", l.correction == Correction::plain ? "plain" : "metropolis_adjusted"},
                   {"dt_policy", l.dt_policy == DtPolicy::fixed ? "fixed" : "adaptive"},
                   {"blowup_guard", l.blowup_guard}};
  j["pde"] = {{"t_max", c.pde.t_max},
              {"flow_dt", c.pde.flow_dt},
              {"steps_per_node", c.pde.steps_per_node},
              {"cfl_fraction", c.pde.cfl_fraction},
              {"trajectories", c.pde.trajectories}};
  j["moderation"] = {{"p", c.moderation.p},
                     {"p_prime", c.moderation.p_prime},
                     {"horizon", c.moderation.horizon},
                     {"sketch_variant", c.moderation.sketch_variant}};
  j["tails"] = {{"trajectories", c.tails.trajectories}, {"horizon", c.tails.horizon}, {"K", c.tails.K}};
  j["exit_time"] = {{"R", c.exit.R}, {"T", c.exit.T}, {"trajectories", c.exit.trajectories}};
  return j;
}

/// Canonical text: sorted keys, no whitespace.
inline std::string canonical(const Json& j) { return j.dump(); }

/// FNV-1a 64-bit, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(s)));
  return buf;
}

/// Hash of the canonical tree without the output location, so that runs of
/// the same experiment in different directories share it.
inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output");
  return fnv1a_hex(canonical(j));
}

/// Hash over everything except the sampling budget and the output path, used
/// to match checkpoints on resume.
inline std::string resume_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j["langevin"].erase("samples_per_chain");
  j.erase("output");
  return fnv1a_hex(canonical(j));
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("<file>", std::string("parse error: ") + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

}  // namespace gradphi
