#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gradphi/config.hpp"
#include "gradphi/experiment.hpp"

using namespace gradphi;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void dump(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::path(::testing::TempDir()) / ("gradphi_" + name);
  fs::remove_all(d);
  return d;
}

Json sweep(std::int64_t samples) {
  Json j = Json::parse(R"({
    "experiment": "variance_sweep", "seed": 11,
    "torus": {"d": 1, "L": [2, 3]},
    "potential": {"family": "power", "r": 4},
    "langevin": {"dt": 0.05, "burn_in": 2.0, "thinning": 0.25, "chain_count": 4}
  })");
  j["langevin"]["samples_per_chain"] = samples;
  return j;
}

std::string path_of(const Json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.path;
  }
  return "";
}

struct WorkersEnv {
  explicit WorkersEnv(const char* n) { setenv("GRADPHI_WORKERS", n, 1); }
  ~WorkersEnv() { unsetenv("GRADPHI_WORKERS"); }
};

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = parse_config(Json::object());
  EXPECT_EQ(c.kind, ExperimentKind::oracle);
  EXPECT_EQ(c.d, 2);
  EXPECT_EQ(c.L, std::vector<int>{4});
  EXPECT_EQ(c.langevin.chain_count, 4);
  const Json full = to_json(parse_config(sweep(100)));
  EXPECT_EQ(to_json(parse_config(full)), full);
  EXPECT_EQ(parse_config(Json{{"torus", {{"L", 5}}}}).L, std::vector<int>{5});
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(path_of(Json{{"torus", {{"L", 0}}}}), "torus.L");
  EXPECT_EQ(path_of(Json{{"torus", {{"L", {4, -1}}}}}), "torus.L");
  EXPECT_EQ(path_of(Json{{"torus", {{"d", 4}}}}), "torus.d");
  EXPECT_EQ(path_of(Json{{"langevin", {{"dtt", 0.1}}}}), "langevin.dtt");
  EXPECT_EQ(path_of(Json{{"langevin", {{"dt", "fast"}}}}), "langevin.dt");
  EXPECT_EQ(path_of(Json{{"langevin", {{"correction", "exact"}}}}), "langevin.correction");
  EXPECT_EQ(path_of(Json{{"experiment", "nope"}}), "experiment");
  EXPECT_EQ(path_of(Json{{"potential", {{"family", "cubic"}}}}), "potential.family");
  EXPECT_EQ(path_of(Json{{"moderation", {{"p", 2.0}}}}), "moderation.p");
  EXPECT_EQ(path_of(Json{{"exit_time", {{"T", Json::array()}}}}), "exit_time.T");
  EXPECT_EQ(path_of(Json{{"bogus", 1}}), "bogus");
  EXPECT_EQ(path_of(Json::array()), "<root>");
}

TEST(Config, Hashes) {
  auto a = parse_config(sweep(100));
  auto b = a;
  b.output = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.langevin.samples_per_chain = 200;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(resume_hash(a), resume_hash(b));
  b.seed = 12;
  EXPECT_NE(resume_hash(a), resume_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

TEST(Run, OracleWritesDocumentedFiles) {
  const auto dir = fresh_dir("oracle");
  const auto cfg = parse_config(Json{{"experiment", "oracle"}, {"torus", {{"d", 1}, {"L", {1, 2, 4}}}}});
  const auto s = run_experiment(cfg, dir);
  EXPECT_FALSE(s["partial"].get<bool>());
  EXPECT_EQ(s["schema_version"], 1);
  for (const char* f : {"config.json", "summary.json", "plot.py", "oracle.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(s["files"]["oracle.csv"], "oracle.v1");
  EXPECT_EQ(to_json(load_config((dir / "config.json").string())), to_json(cfg));
}

TEST(Run, HsCheckReportsFlowStepHalving) {
  const auto dir = fresh_dir("hs_check");
  const auto cfg = parse_config(Json{{"experiment", "hs_check"},
                                     {"seed", 5},
                                     {"torus", {{"d", 1}, {"L", 1}}},
                                     {"potential", {{"family", "power"}, {"r", 4}}},
                                     {"langevin", {{"dt", 0.05}, {"thinning", 0.5}, {"samples_per_chain", 200}}},
                                     {"pde", {{"t_max", 20}, {"trajectories", 8}}}});
  const auto s = run_experiment(cfg, dir);
  const auto& e = s["results"]["sizes"][0];
  EXPECT_EQ(e["reference_method"], "mc_batched_means_mala");
  EXPECT_DOUBLE_EQ(e["flow_dt_halving"]["flow_dt"].get<double>(), 0.001);
  EXPECT_TRUE(e["flow_dt_halving"]["change"].contains("stderr"));
  EXPECT_TRUE(fs::exists(dir / "hs_check.csv"));
}

TEST(Run, SummaryIsIndependentOfWorkerCount) {
  const auto cfg = parse_config(sweep(40));
  std::string one, many;
  {
    WorkersEnv w("1");
    run_experiment(cfg, fresh_dir("w1"));
    one = slurp(fs::path(::testing::TempDir()) / "gradphi_w1" / "summary.json");
  }
  {
    WorkersEnv w("3");
    run_experiment(cfg, fresh_dir("w3"));
    many = slurp(fs::path(::testing::TempDir()) / "gradphi_w3" / "summary.json");
  }
  EXPECT_FALSE(one.empty());
  EXPECT_EQ(one, many);
  EXPECT_EQ(slurp(fs::path(::testing::TempDir()) / "gradphi_w1" / "samples.csv"),
            slurp(fs::path(::testing::TempDir()) / "gradphi_w3" / "samples.csv"));
}

TEST(Resume, ContinuesToTheSameResultAsAnUninterruptedRun) {
  const auto stopped = fresh_dir("stopped");
  const auto s0 = run_experiment(parse_config(sweep(0)), stopped);
  EXPECT_TRUE(s0["partial"].get<bool>());
  EXPECT_EQ(s0["results"]["sizes"][0]["status"], "insufficient_samples");

  Json edited = Json::parse(slurp(stopped / "config.json"));
  edited["langevin"]["samples_per_chain"] = 160;
  dump(stopped / "config.json", edited.dump(2));
  const auto resumed = resume_experiment(stopped);
  EXPECT_FALSE(resumed["partial"].get<bool>());

  const auto straight = fresh_dir("straight");
  auto cfg = parse_config(sweep(160));
  run_experiment(cfg, straight);
  EXPECT_EQ(slurp(stopped / "samples.csv"), slurp(straight / "samples.csv"));
  EXPECT_EQ(slurp(stopped / "summary.json"), slurp(straight / "summary.json"));

  // Doubling the budget on resume shrinks the error bar by about 1 / sqrt(2).
  edited["langevin"]["samples_per_chain"] = 320;
  dump(stopped / "config.json", edited.dump(2));
  const auto doubled = resume_experiment(stopped);
  for (int i = 0; i < 2; ++i) {
    const double before = resumed["results"]["sizes"][i]["variance"]["stderr"];
    const double after = doubled["results"]["sizes"][i]["variance"]["stderr"];
    EXPECT_GT(after / before, 0.45) << i;
    EXPECT_LT(after / before, 0.95) << i;
  }
}

TEST(Resume, RefusesAnEditedConfigWithoutTouchingOutputs) {
  const auto dir = fresh_dir("refuse");
  run_experiment(parse_config(sweep(20)), dir);
  const std::string before = slurp(dir / "summary.json");
  Json edited = Json::parse(slurp(dir / "config.json"));
  edited["potential"]["r"] = 6;
  dump(dir / "config.json", edited.dump(2));
  try {
    resume_experiment(dir);
    FAIL() << "resume accepted a changed potential";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("hash mismatch"), std::string::npos);
  }
  EXPECT_EQ(slurp(dir / "summary.json"), before);
  const auto oracle = fresh_dir("no_resume");
  run_experiment(parse_config(Json{{"experiment", "oracle"}, {"torus", {{"d", 1}, {"L", 2}}}}), oracle);
  EXPECT_THROW(resume_experiment(oracle), std::runtime_error);
}

TEST(Resume, LowerBudgetThanRetainedIsAnError) {
  const auto dir = fresh_dir("shrink");
  run_experiment(parse_config(sweep(40)), dir);
  Json edited = Json::parse(slurp(dir / "config.json"));
  edited["langevin"]["samples_per_chain"] = 10;
  dump(dir / "config.json", edited.dump(2));
  EXPECT_THROW(resume_experiment(dir), std::runtime_error);
}

#ifdef GRADPHI_CLI
TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  fs::create_directories(dir);
  dump(dir / "bad.json", R"({"torus": {"L": 0}})");
  dump(dir / "good.json", R"({"experiment": "oracle", "torus": {"d": 1, "L": [1, 2]}})");
  const std::string cli = GRADPHI_CLI;
  auto run = [&](const std::string& args) {
    const int rc = std::system((cli + " " + args + " > " + (dir / "out.txt").string() + " 2> " +
                                (dir / "err.txt").string()).c_str());
    return WEXITSTATUS(rc);
  };
  EXPECT_EQ(run("validate " + (dir / "bad.json").string()), 2);
  EXPECT_NE(slurp(dir / "err.txt").find("torus.L"), std::string::npos);
  EXPECT_EQ(run("validate " + (dir / "good.json").string()), 0);
  EXPECT_EQ(slurp(dir / "out.txt").rfind("ok oracle config_hash=", 0), 0u);
  EXPECT_EQ(run("run " + (dir / "good.json").string() + " -o " + (dir / "run").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "run" / "summary.json"));
  EXPECT_EQ(run("resume " + (dir / "run").string()), 1);
}
#endif

#ifdef GRADPHI_EXAMPLE_CONFIGS
TEST(Config, ExampleConfigsValidate) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(GRADPHI_EXAMPLE_CONFIGS)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_config(e.path().string()));
    ++n;
  }
  EXPECT_GE(n, 7);
}
#endif
