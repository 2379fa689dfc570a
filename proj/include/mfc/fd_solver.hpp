#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mfc/grid.hpp"
#include "mfc/particles.hpp"
#include "mfc/problem.hpp"

namespace mfc {

/// Decoupling fields of the adjoint pair: u (d components) and, when the
/// diffusion depends on the state, v = (grad u) sigma (d*n components).
struct AdjointField {
  GridField u;
  std::optional<GridField> v;
  /// Evaluate u piecewise-constant per cell instead of multilinearly
  /// (regression baseline output).
  bool piecewise_constant = false;
  /// Per (slice, node) flag, nonzero where the field carries information.
  /// Empty means everywhere.
  std::vector<char> support;
  std::vector<std::string> warnings;

  void evaluate(std::size_t j, std::span<const double> x, std::span<double> out) const;
};

/// Monotone spatial operator of one time slice, shared by all components:
///   L[phi]_k = sum_q a_qk (phi_q - phi_k),  a_qk >= 0,
/// stored row-wise. Dirichlet rows carry no stencil.
struct MonotoneOperator {
  std::vector<std::size_t> row_start;
  std::vector<std::size_t> neighbor;
  std::vector<double> weight;
  std::vector<char> dirichlet;

  std::size_t rows() const { return dirichlet.size(); }
  /// Weight of the entry for neighbor q in row k, or 0.
  double weight_of(std::size_t k, std::size_t q) const;
  /// out_k = L[phi]_k for a scalar nodal field; 0 on Dirichlet rows.
  void apply(std::span<const double> phi, std::span<double> out) const;
};

enum class LinearSolver { direct, gauss_seidel };

struct SolverOptions {
  LinearSolver solver = LinearSolver::direct;
  double tolerance = 1e-10;
  std::size_t max_sweeps = 10000;
  /// 0 = use every particle in the nonlocal sums; otherwise a seeded uniform
  /// subsample of this size.
  std::size_t kernel_subsample = 0;
  std::uint64_t subsample_seed = 0;
};

/// Everything the node-level evaluations of one time slice need: the
/// (optionally subsampled) empirical measure of the slice and the policy at
/// every grid node.
class SliceContext {
 public:
  SliceContext(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
               const SpaceTimeGrid& grid, std::size_t j, const SolverOptions& options);
  SliceContext(const SliceContext&) = delete;
  SliceContext& operator=(const SliceContext&) = delete;

  double t() const { return t_; }
  std::size_t j() const { return j_; }
  const EmpiricalMeasure& measure() const { return *eta_; }
  const std::vector<double>& node_x() const { return node_x_; }
  const std::vector<double>& node_a() const { return node_a_; }
  std::span<const double> node_state(std::size_t p) const;
  std::span<const double> node_control(std::size_t p) const;

 private:
  double t_;
  std::size_t j_;
  Dims dims_;
  std::vector<double> node_x_, node_a_;
  std::vector<double> sub_states_, sub_controls_;
  std::unique_ptr<EmpiricalMeasure> eta_;
};

MonotoneOperator build_operator(const MfcProblem& problem, const SliceContext& ctx, const SpaceTimeGrid& grid);
MonotoneOperator build_operator(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                                const SpaceTimeGrid& grid, std::size_t j);

/// Local plus nonlocal reaction source at arbitrary points:
///   (d_x b)^T u + d_x f + mean_l[(d_mu b)^T y^l + d_mu f]
/// u_eval: K x d adjoint values at the evaluation points; y: N x d at the
/// measure's particles. out: K x d.
void state_source_at(const MfcProblem& problem, double t, const EmpiricalMeasure& eta, std::span<const double> y,
                     std::span<const double> eval_x, std::span<const double> eval_a, std::span<const double> u_eval,
                     std::span<double> out);

/// Control-gradient analogue with (d_a b, d_nu b, d_a f, d_nu f). out: K x k.
void control_gradient_at(const MfcProblem& problem, double t, const EmpiricalMeasure& eta, std::span<const double> y,
                         std::span<const double> eval_x, std::span<const double> eval_a,
                         std::span<const double> u_eval, std::span<double> out);

/// Gradient-of-u terms generated by a state-dependent diffusion, upwinded by
/// coefficient sign. With `control` false this is the state source f^ex
/// (d outputs per node), otherwise the control-gradient term (k outputs).
void diffusion_gradient_terms(const MfcProblem& problem, const SliceContext& ctx, const GridField& u, std::size_t j,
                              bool control, std::span<double> out);

/// Source f^m at slice j (explicit in U^j), one row of d values per node.
std::vector<double> assemble_source(const MfcProblem& problem, const SliceContext& ctx, const GridField& u,
                                    std::size_t j);
std::vector<double> assemble_source(const MfcProblem& problem, const PolicyField& policy,
                                    const ParticleEnsemble& ensemble, const GridField& u, const SpaceTimeGrid& grid,
                                    std::size_t j);

/// Terminal data h(x_k) = d_x g(x_k, mu_T) + mean_l d_mu g(X^l_T; x_k) at every node.
std::vector<double> terminal_data(const MfcProblem& problem, const ParticleEnsemble& ensemble,
                                  const SpaceTimeGrid& grid, const SolverOptions& options = {});

/// Semi-implicit monotone backward sweep for the adjoint system:
///   U^{j-1} - dt L^{j-1}[U^{j-1}] = U^j + dt f(t_j, U^j),
/// with U^M = h and Dirichlet data on the box boundary.
AdjointField backward_sweep(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                            const SpaceTimeGrid& grid, const SolverOptions& options = {});

/// Variant with an explicit source hook, for manufactured solutions: the
/// extra source s(t_j, x_k) (d values) is added to f at slice j.
using ExtraSource = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
AdjointField backward_sweep(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                            const SpaceTimeGrid& grid, const SolverOptions& options, const ExtraSource& extra);

}  // namespace mfc
