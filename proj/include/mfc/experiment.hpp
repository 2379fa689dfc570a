#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mfc/config.hpp"
#include "mfc/nag.hpp"

namespace mfc {

/// Runs the configured method (fipde, ipde or emreg).
RunReport run_method(const MfcProblem& problem, const RunSettings& settings,
                     const IterationCallback& on_iteration = {});

/// Writes report.csv, report.json, policy_phi.csv, policy_psi.csv and the
/// optional adjoint/trajectory dumps into `dir`.
void write_report(const RunReport& report, const RunConfig& config, const std::filesystem::path& dir);

/// Executes a parsed config and writes its artifacts. Returns 0 on success
/// and 1 when a run fails (the partial report is still written).
int run_experiment(const RunConfig& config, std::ostream& log);

/// Fraction of nodes with |phi| <= threshold, per time slice.
std::vector<double> sparsity_report(const PolicyField& policy, double threshold = 0.0);

struct SweepCell {
  double q_min = 0.0, q_max = 0.0;
  double J_pre = 0.0;  // frozen policy under the perturbed law
  double J_ref = 0.0;  // freshly trained reference under the perturbed law
  double abs_gap() const;
  double rel_gap() const;
};

/// Evaluates a frozen portfolio policy under Q0 ~ U(q_min, q_max) against a
/// fresh FIPDE reference trained at that law with the base config.
SweepCell sweep_cell(const RunConfig& base, const PolicyField& policy, double q_min, double q_max);

struct SweepResult {
  std::vector<double> q_min, q_max;
  std::vector<SweepCell> cells;  // row-major over (q_min, q_max)
};

/// Lattice sweep. References are cached in `cache` (CSV `q_min,q_max,J_ref`)
/// when a path is given, and reused on later calls.
SweepResult robustness_sweep(const RunConfig& base, const PolicyField& policy,
                             const std::filesystem::path& cache = {}, std::ostream* log = nullptr);

/// Writes J_pre.csv, J_ref.csv, abs_gap.csv and rel_gap.csv matrices (rows
/// q_min, columns q_max) into `dir`.
void write_sweep(const SweepResult& result, const std::filesystem::path& dir);

}  // namespace mfc
