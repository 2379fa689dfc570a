#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mfc/fd_solver.hpp"
#include "mfc/nag.hpp"
#include "mfc/problems.hpp"

namespace mfc {

/// Everything a run needs. Grid, step size and particle counts default to
/// the selected problem's reference setup.
struct RunConfig {
  std::string problem;
  PortfolioParams portfolio;
  CuckerSmaleParams cs;

  Method method = Method::fipde;
  std::vector<double> grid_lo, grid_hi;
  std::vector<std::size_t> grid_cells;
  std::size_t time_steps = 50;

  std::size_t particles = 10000;
  std::size_t eval_particles = 0;
  double tau = 1.0 / 6.0;
  std::size_t iterations = 20;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 2;
  double momentum_cap = -1.0;
  bool resample_each_iteration = false;

  LinearSolver solver = LinearSolver::direct;
  double solver_tolerance = 1e-10;
  std::size_t max_sweeps = 10000;
  std::size_t kernel_subsample = 0;

  std::string output = "out";
  std::string initial_policy;
  bool dump_adjoint = false;
  bool dump_trajectories = false;
  /// When false, report.csv records wall_ms = 0 so that it is byte-stable.
  bool wall_time = true;

  // Robustness sweep lattice over the initial inventory law U(q_min, q_max).
  double sweep_q_min_lo = 0.5, sweep_q_min_hi = 1.5;
  double sweep_q_max_lo = 1.5, sweep_q_max_hi = 2.5;
  std::size_t sweep_steps = 11;
  std::size_t sweep_reference_iterations = 20;

  bool operator==(const RunConfig&) const = default;
};

/// Strict parser for `key = value` lines with `#` comments. Unknown keys,
/// type mismatches and out-of-range values raise ConfigError naming the line.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>");

/// Canonical text form; parse_config_text(to_text(c)) == c.
std::string to_text(const RunConfig& config);

/// Every accepted key (for diagnostics and documentation).
std::vector<std::string> known_keys();

std::unique_ptr<MfcProblem> make_problem(const RunConfig& config);
SpaceTimeGrid make_grid(const RunConfig& config);
/// Run settings; loads the initial policy file when one is configured.
RunSettings make_settings(const RunConfig& config);

}  // namespace mfc
