#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfc/fd_solver.hpp"
#include "mfc/grid.hpp"
#include "mfc/particles.hpp"
#include "mfc/problem.hpp"
#include "mfc/prox.hpp"

namespace mfc {

/// Control gradient (grad F)(psi)(t_j, x_k) at one node; k values.
std::vector<double> gradient_map(const MfcProblem& problem, const PolicyField& psi, const ParticleEnsemble& ensemble,
                                 const AdjointField& adjoint, const SpaceTimeGrid& grid, std::size_t j,
                                 std::size_t node, const SolverOptions& options = {});

/// The same on every node of one slice (nodes x k), and on the whole grid.
std::vector<double> gradient_slice(const MfcProblem& problem, const SliceContext& ctx, const AdjointField& adjoint,
                                   std::size_t j);
GridField gradient_field(const MfcProblem& problem, const PolicyField& psi, const ParticleEnsemble& ensemble,
                         const AdjointField& adjoint, const SpaceTimeGrid& grid, const SolverOptions& options = {});

/// Throws ConfigError if a callback the gradient needs is missing.
void check_callbacks(const MfcProblem& problem);

struct NagState {
  std::size_t iteration = 0;
  PolicyField phi;
  PolicyField psi;
  PolicyField phi_prev;
  double tau = 1.0;
  bool momentum_on = true;
  /// Upper bound on the momentum coefficient; negative disables the cap.
  double momentum_cap = -1.0;

  static NagState start(const PolicyField& initial, double tau, bool momentum_on, double momentum_cap = -1.0);
};

/// m / (m + 3), optionally capped.
double momentum_coefficient(std::size_t m, double cap = -1.0);

/// phi' = prox_{tau l}(psi - tau g);  psi' = phi' + m/(m+3) (phi' - phi)
/// (psi' = phi' without momentum).
NagState nag_step(const NagState& state, const GridField& gradient, const ProxSpec& prox);

enum class Method { fipde, ipde, emreg };
std::string to_string(Method m);
Method parse_method(const std::string& s);

struct RunSettings {
  Method method = Method::fipde;
  SpaceTimeGrid grid = SpaceTimeGrid(1.0, 1, {0.0}, {1.0}, {2});
  std::size_t particles = 10000;
  /// Particles of the cost evaluation (0 = same as training).
  std::size_t eval_particles = 0;
  double tau = 1.0 / 6.0;
  std::size_t iterations = 20;
  double momentum_cap = -1.0;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 2;
  /// Draw fresh training noise every iteration (derived from seed and m).
  bool resample_each_iteration = false;
  SolverOptions solver;
  std::optional<PolicyField> initial_policy;
  /// Keep the last adjoint field and training ensemble in the report.
  bool keep_last = false;
};

struct IterationRecord {
  std::size_t m = 0;
  double J = 0.0;
  double std_error = 0.0;
  /// RMS over the grid of the gradient that produced phi^m (0 for m = 0).
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct RunReport {
  Method method = Method::fipde;
  std::vector<IterationRecord> records;
  std::optional<PolicyField> phi;
  std::optional<PolicyField> psi;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 0;
  std::string config_echo;
  std::vector<std::string> warnings;
  std::optional<AdjointField> last_adjoint;
  std::optional<ParticleEnsemble> last_ensemble;
};

/// Raised when an iteration fails; carries the report up to the failure.
class RunFailure : public Error {
 public:
  RunFailure(std::size_t iteration, const std::string& what, RunReport partial);
  std::size_t iteration() const { return iteration_; }
  const RunReport& partial() const { return *partial_; }

 private:
  std::size_t iteration_;
  std::shared_ptr<RunReport> partial_;
};

/// Monte-Carlo cost of a policy on the evaluation stream.
CostEstimate evaluate_policy(const MfcProblem& problem, const PolicyField& policy, std::size_t particles,
                             std::uint64_t seed);

/// Adjoint computation for one outer iteration. `previous` is the field of the
/// previous iteration (null at m = 0).
using AdjointSolver = std::function<AdjointField(const MfcProblem&, const PolicyField& psi, const ParticleEnsemble&,
                                                 const SpaceTimeGrid&, const AdjointField* previous)>;

using IterationCallback = std::function<void(const IterationRecord&)>;

/// Outer proximal-gradient loop with a pluggable adjoint solver.
RunReport run_loop(const MfcProblem& problem, const RunSettings& settings, const AdjointSolver& solver,
                   const IterationCallback& on_iteration = {});

/// FIPDE (momentum) or IPDE (settings.method == ipde) with the PDE adjoint.
RunReport run(const MfcProblem& problem, const RunSettings& settings, const IterationCallback& on_iteration = {});

}  // namespace mfc
