#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "mfc/config.hpp"
#include "mfc/experiment.hpp"
#include "mfc/problem.hpp"

namespace {

constexpr int kConfigExit = 2;

int cmd_run(const std::string& path, const std::string& method, const std::string& output) {
  mfc::RunConfig config;
  try {
    config = mfc::parse_config(path);
    if (!method.empty()) config.method = mfc::parse_method(method);
    if (!output.empty()) config.output = output;
    (void)mfc::make_problem(config);
    (void)mfc::make_settings(config);
  } catch (const mfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
  try {
    return mfc::run_experiment(config, std::cout);
  } catch (const mfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
}

int cmd_sweep(const std::string& path, const std::string& policy_path, const std::string& output) {
  mfc::RunConfig config;
  try {
    config = mfc::parse_config(path);
    if (!output.empty()) config.output = output;
    if (!std::filesystem::exists(policy_path))
      throw mfc::ConfigError("precomputed policy file " + policy_path + " not found");
  } catch (const mfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
  const mfc::GridField policy = mfc::read_csv(policy_path);
  std::filesystem::create_directories(config.output);
  std::cout << "sweep over " << config.sweep_steps << "x" << config.sweep_steps << " initial laws\n";
  const auto result =
      mfc::robustness_sweep(config, policy, std::filesystem::path(config.output) / "sweep_reference.csv", &std::cout);
  mfc::write_sweep(result, config.output);
  std::cout << "wrote " << config.output << "\n";
  return 0;
}

int cmd_sparsity(const std::string& policy_path, double threshold) {
  const mfc::GridField policy = mfc::read_csv(policy_path);
  const auto frac = mfc::sparsity_report(policy, threshold);
  std::cout << "t,zero_fraction\n" << std::setprecision(17);
  for (std::size_t j = 0; j < frac.size(); ++j) std::cout << policy.grid().time(j) << "," << frac[j] << "\n";
  return 0;
}

int cmd_validate(const std::string& path, std::size_t samples, double step) {
  mfc::RunConfig config;
  try {
    config = mfc::parse_config(path);
  } catch (const mfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  }
  const auto problem = mfc::make_problem(config);
  const auto report = mfc::validate_derivatives(*problem, samples, step, config.seed);
  std::cout << "callback,max_rel_error,status\n";
  for (const auto& c : report.checks)
    std::cout << c.name << "," << std::setprecision(3) << c.max_rel_error << "," << (c.flagged ? "FLAGGED" : "ok")
              << "\n";
  return report.all_clear() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field control solver"};
  app.require_subcommand(1);

  std::string cfg, method, output, policy;
  double threshold = 0.0, step = 1e-5;
  std::size_t samples = 20;

  auto* run = app.add_subcommand("run", "Run the configured solver and write its report");
  run->add_option("config", cfg, "Config file")->required();
  run->add_option("--method", method, "Override the method (fipde, ipde, emreg)");
  run->add_option("--output", output, "Override the output directory");

  auto* sweep = app.add_subcommand("sweep", "Robustness sweep of a frozen policy over initial laws");
  sweep->add_option("config", cfg, "Config file")->required();
  sweep->add_option("--policy", policy, "Policy CSV trained at the base law")->required();
  sweep->add_option("--output", output, "Override the output directory");

  auto* sparsity = app.add_subcommand("sparsity", "Per-slice fraction of (near-)zero controls");
  sparsity->add_option("policy", policy, "Policy CSV")->required();
  sparsity->add_option("--threshold", threshold, "Zero threshold")->check(CLI::NonNegativeNumber);

  auto* validate = app.add_subcommand("validate", "Finite-difference check of all derivative callbacks");
  validate->add_option("config", cfg, "Config file")->required();
  validate->add_option("--samples", samples, "Random sample points");
  validate->add_option("--step", step, "Central-difference step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(cfg, method, output);
    if (*sweep) return cmd_sweep(cfg, policy, output);
    if (*sparsity) return cmd_sparsity(policy, threshold);
    if (*validate) return cmd_validate(cfg, samples, step);
  } catch (const mfc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
