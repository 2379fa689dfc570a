#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfc/fd_solver.hpp"
#include "mfc/nag.hpp"

namespace mfc {

/// Least squares on the indicator basis of the grid cells: per-cell sample
/// means. Cells without samples report count 0 and value 0.
struct CellMeans {
  std::vector<double> values;  // cells x components
  std::vector<std::size_t> counts;
};

/// points: N x d, targets: N x c.
CellMeans cell_means(const SpaceTimeGrid& grid, std::span<const double> points, std::span<const double> targets,
                     std::size_t components);

/// Piecewise-constant regression of the adjoint field on the cells of the PDE
/// grid, per time slice.
struct CellRegression {
  SpaceTimeGrid grid;
  std::size_t components;
  std::vector<double> values;       // (M+1) x cells x components
  std::vector<std::size_t> counts;  // (M+1) x cells, this fit only
  std::vector<char> visited;        // (M+1) x cells, cumulative over fits

  CellRegression(const SpaceTimeGrid& grid, std::size_t components);

  std::span<double> cell(std::size_t j, std::size_t c) {
    return std::span(values).subspan((j * cell_count(grid) + c) * components, components);
  }
  std::span<const double> cell(std::size_t j, std::size_t c) const {
    return std::span(values).subspan((j * cell_count(grid) + c) * components, components);
  }

  /// Nodal piecewise-constant field: node p holds the value of node_cell(p).
  /// The support mask marks nodes whose cell was ever visited.
  AdjointField field() const;
};

/// Backward one-step regression along the particle paths:
///   U_M = cell mean of h(X_M),
///   U_j = cell mean of [ U_{j+1}(X_{j+1}) + dt f(t_j, X_j, a_j, U_{j+1}(X_j)) ].
/// Cells without samples keep the value from `previous` (0 initially).
CellRegression regress_adjoint(const MfcProblem& problem, const ParticleEnsemble& ensemble, const SpaceTimeGrid& grid,
                               const CellRegression* previous = nullptr);

/// The proximal-gradient loop with the regression adjoint.
RunReport run_emreg(const MfcProblem& problem, const RunSettings& settings,
                    const IterationCallback& on_iteration = {});

}  // namespace mfc
