// Command-line driver: run <config>, resume <dir>, validate <config>.

#include <csignal>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "gradphi/config.hpp"
#include "gradphi/experiment.hpp"

namespace {

void on_interrupt(int) { gradphi::stop_requested() = true; }

int report(const std::exception& e) {
  std::cerr << "gradphi: error: " << e.what() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for gradient interface models on the torus"};
  app.require_subcommand(1);

  std::string run_path, run_output;
  auto* run = app.add_subcommand("run", "run the experiment described by a JSON config");
  run->add_option("config", run_path, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("-o,--output", run_output, "output directory (overrides the config's 'output')");

  std::string resume_dir;
  auto* resume = app.add_subcommand("resume", "continue a checkpointed run using its config.json");
  resume->add_option("dir", resume_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config without running it");
  validate->add_option("config", validate_path, "config file")->required();

  CLI11_PARSE(app, argc, argv);
  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);

  try {
    if (*validate) {
      const auto cfg = gradphi::load_config(validate_path);
      std::cout << "ok " << gradphi::to_string(cfg.kind) << " config_hash=" << gradphi::config_hash(cfg) << "\n";
      return 0;
    }
    if (*run) {
      const auto cfg = gradphi::load_config(run_path);
      const std::filesystem::path dir = run_output.empty() ? cfg.output : run_output;
      const auto s = gradphi::run_experiment(cfg, dir);
      std::cout << dir.string() << "/summary.json" << (s["partial"].get<bool>() ? " (partial)" : "") << "\n";
      return s["partial"].get<bool>() ? 3 : 0;
    }
    if (*resume) {
      const auto s = gradphi::resume_experiment(resume_dir);
      std::cout << resume_dir << "/summary.json" << (s["partial"].get<bool>() ? " (partial)" : "") << "\n";
      return s["partial"].get<bool>() ? 3 : 0;
    }
  } catch (const gradphi::ConfigError& e) {
    std::cerr << "gradphi: invalid config: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    return report(e);
  }
  return 0;
}
