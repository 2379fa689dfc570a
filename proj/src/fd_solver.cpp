#include "mfc/fd_solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mfc {

void AdjointField::evaluate(std::size_t j, std::span<const double> x, std::span<double> out) const {
  if (piecewise_constant)
    cell_value_slice(u, j, x, out);
  else
    interpolate_slice(u, j, x, out);
}

double MonotoneOperator::weight_of(std::size_t k, std::size_t q) const {
  double w = 0.0;
  for (std::size_t e = row_start[k]; e < row_start[k + 1]; ++e)
    if (neighbor[e] == q) w += weight[e];
  return w;
}

void MonotoneOperator::apply(std::span<const double> phi, std::span<double> out) const {
  for (std::size_t k = 0; k < rows(); ++k) {
    double s = 0.0;
    for (std::size_t e = row_start[k]; e < row_start[k + 1]; ++e) s += weight[e] * (phi[neighbor[e]] - phi[k]);
    out[k] = s;
  }
}

// ---------------------------------------------------------------------------

SliceContext::SliceContext(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                           const SpaceTimeGrid& grid, std::size_t j, const SolverOptions& options)
    : t_(grid.time(j)), j_(j), dims_(problem.dims()) {
  const std::size_t d = dims_.state, k = dims_.control;
  if (ensemble.steps() != grid.time_steps())
    throw ConfigError("ensemble time grid (" + std::to_string(ensemble.steps()) + " steps) differs from the PDE grid (" +
                      std::to_string(grid.time_steps()) + " steps)");
  if (grid.dim() != d) throw ConfigError("PDE grid dimension differs from the problem state dimension");

  node_x_ = grid.node_coordinates();
  node_a_.assign(grid.node_count() * k, 0.0);
  if (policy.grid().same_as(grid)) {
    const auto s = policy.slice(j);
    std::copy(s.begin(), s.end(), node_a_.begin());
  } else {
    const std::size_t pj = policy.grid().time_index(t_);
    parallel_for(grid.node_count(), [&](std::size_t p) {
      interpolate_slice(policy, pj, std::span<const double>(node_x_).subspan(p * d, d),
                        std::span(node_a_).subspan(p * k, k));
    });
  }

  const std::size_t np = ensemble.particles();
  if (options.kernel_subsample > 0 && options.kernel_subsample < np) {
    // Partial Fisher-Yates driven by the counter stream; same subsample for
    // every slice of a sweep.
    std::vector<std::size_t> idx(np);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const CounterRng rng(options.subsample_seed);
    const std::size_t m = options.kernel_subsample;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t r = i + static_cast<std::size_t>(rng.uniform(rng_stream::kSubsample, 0, i) *
                                                        static_cast<double>(np - i));
      std::swap(idx[i], idx[std::min(r, np - 1)]);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
    sub_states_.resize(m * d);
    sub_controls_.resize(m * k);
    for (std::size_t i = 0; i < m; ++i) {
      const auto xs = ensemble.state(j, idx[i]);
      const auto as = ensemble.control(j, idx[i]);
      std::copy(xs.begin(), xs.end(), sub_states_.begin() + static_cast<std::ptrdiff_t>(i * d));
      std::copy(as.begin(), as.end(), sub_controls_.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    eta_ = std::make_unique<EmpiricalMeasure>(sub_states_, sub_controls_, dims_);
  } else {
    eta_ = std::make_unique<EmpiricalMeasure>(ensemble.states(j), ensemble.controls(j), dims_);
  }
}

std::span<const double> SliceContext::node_state(std::size_t p) const {
  return std::span<const double>(node_x_).subspan(p * dims_.state, dims_.state);
}
std::span<const double> SliceContext::node_control(std::size_t p) const {
  return std::span<const double>(node_a_).subspan(p * dims_.control, dims_.control);
}

// ---------------------------------------------------------------------------

namespace {

std::string node_label(const SpaceTimeGrid& grid, std::size_t p) {
  std::vector<double> x(grid.dim());
  grid.coordinates(p, x);
  std::ostringstream os;
  os << "node " << p << " at (";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
  os << ")";
  return os.str();
}

}  // namespace

MonotoneOperator build_operator(const MfcProblem& problem, const SliceContext& ctx, const SpaceTimeGrid& grid) {
  const auto [d, k, n] = problem.dims();
  const std::size_t nodes = grid.node_count();
  const EmpiricalMeasure& eta = ctx.measure();

  // Per-node stencil, built in parallel, then packed row-wise.
  struct Entry {
    std::size_t q;
    double w;
  };
  std::vector<std::vector<Entry>> rows(nodes);
  MonotoneOperator op;
  op.dirichlet.assign(nodes, 0);

  parallel_chunks(nodes, [&](std::size_t b, std::size_t e) {
    std::vector<double> drift(d), sigma(d * n), diff(d * d);
    std::vector<std::size_t> multi(d);
    for (std::size_t p = b; p < e; ++p) {
      if (grid.on_boundary(p)) {
        op.dirichlet[p] = 1;
        continue;
      }
      const auto x = ctx.node_state(p);
      const auto a = ctx.node_control(p);
      problem.drift(ctx.t(), x, a, eta, drift);
      problem.diffusion(ctx.t(), x, a, eta, sigma);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < n; ++c) s += sigma[i * n + c] * sigma[j * n + c];
          diff[i * d + j] = 0.5 * s;
        }
      auto& row = rows[p];
      row.clear();
      for (std::size_t i = 0; i < d; ++i) {
        const double h = grid.mesh(i);
        double cross = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          if (j != i) cross += std::abs(diff[i * d + j]) / (h * grid.mesh(j));
        const double second = diff[i * d + i] / (h * h) - cross;
        const double fwd = std::max(drift[i], 0.0) / h + second;
        const double bwd = std::max(-drift[i], 0.0) / h + second;
        const double scale = std::abs(drift[i]) / h + diff[i * d + i] / (h * h) + cross;
        for (double w : {fwd, bwd})
          if (!std::isfinite(w) || w < -1e-12 * std::max(1.0, scale))
            throw Error("build_operator: negative stencil weight " + std::to_string(w) + " at " +
                        node_label(grid, p) + " (diffusion not diagonally dominant)");
        row.push_back({p + grid.stride(i), std::max(fwd, 0.0)});
        row.push_back({p - grid.stride(i), std::max(bwd, 0.0)});
      }
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
          const double dij = diff[i * d + j];
          if (dij == 0.0) continue;
          const double w = std::abs(dij) / (grid.mesh(i) * grid.mesh(j));
          const std::size_t si = grid.stride(i), sj = grid.stride(j);
          if (dij > 0.0) {
            row.push_back({p + si + sj, w});
            row.push_back({p - si - sj, w});
          } else {
            row.push_back({p + si - sj, w});
            row.push_back({p - si + sj, w});
          }
        }
    }
  });

  op.row_start.assign(nodes + 1, 0);
  for (std::size_t p = 0; p < nodes; ++p) op.row_start[p + 1] = op.row_start[p] + rows[p].size();
  op.neighbor.resize(op.row_start[nodes]);
  op.weight.resize(op.row_start[nodes]);
  for (std::size_t p = 0; p < nodes; ++p)
    for (std::size_t e = 0; e < rows[p].size(); ++e) {
      op.neighbor[op.row_start[p] + e] = rows[p][e].q;
      op.weight[op.row_start[p] + e] = rows[p][e].w;
    }
  return op;
}

MonotoneOperator build_operator(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                                const SpaceTimeGrid& grid, std::size_t j) {
  const SliceContext ctx(problem, policy, ensemble, grid, j, SolverOptions{});
  return build_operator(problem, ctx, grid);
}

// ---------------------------------------------------------------------------

void state_source_at(const MfcProblem& problem, double t, const EmpiricalMeasure& eta, std::span<const double> y,
                     std::span<const double> eval_x, std::span<const double> eval_a, std::span<const double> u_eval,
                     std::span<double> out) {
  const auto [d, k, n] = problem.dims();
  const std::size_t points = eval_x.size() / d;
  problem.nonlocal_state_source(t, eta, y, eval_x, eval_a, out);
  parallel_chunks(points, [&](std::size_t b, std::size_t e) {
    std::vector<double> jac(d * d), grad(d);
    for (std::size_t p = b; p < e; ++p) {
      const auto x = eval_x.subspan(p * d, d);
      const auto a = eval_a.subspan(p * k, k);
      const auto u = u_eval.subspan(p * d, d);
      problem.drift_dx(t, x, a, eta, jac);
      problem.running_cost_dx(t, x, a, eta, grad);
      for (std::size_t j = 0; j < d; ++j) {
        double s = grad[j];
        for (std::size_t i = 0; i < d; ++i) s += jac[i * d + j] * u[i];
        out[p * d + j] += s;
      }
    }
  });
}

void control_gradient_at(const MfcProblem& problem, double t, const EmpiricalMeasure& eta, std::span<const double> y,
                         std::span<const double> eval_x, std::span<const double> eval_a,
                         std::span<const double> u_eval, std::span<double> out) {
  const auto [d, k, n] = problem.dims();
  const std::size_t points = eval_x.size() / d;
  problem.nonlocal_control_gradient(t, eta, y, eval_x, eval_a, out);
  parallel_chunks(points, [&](std::size_t b, std::size_t e) {
    std::vector<double> jac(d * k), grad(k);
    for (std::size_t p = b; p < e; ++p) {
      const auto x = eval_x.subspan(p * d, d);
      const auto a = eval_a.subspan(p * k, k);
      const auto u = u_eval.subspan(p * d, d);
      problem.drift_da(t, x, a, eta, jac);
      problem.running_cost_da(t, x, a, eta, grad);
      for (std::size_t j = 0; j < k; ++j) {
        double s = grad[j];
        for (std::size_t i = 0; i < d; ++i) s += jac[i * k + j] * u[i];
        out[p * k + j] += s;
      }
    }
  });
}

namespace {

// Upwind difference of component r along direction l at a grid node,
// multiplied by the coefficient c: c+ D+ u + c- D- u with c+- = max(+-c, 0).
double upwind_node(const GridField& u, std::size_t j, std::size_t p, std::size_t r, std::size_t l, double c) {
  const auto& grid = u.grid();
  const std::size_t comps = u.components();
  const auto s = u.slice(j);
  const std::size_t kl = (p / grid.stride(l)) % grid.nodes()[l];
  const double h = grid.mesh(l);
  const double here = s[p * comps + r];
  const bool has_fwd = kl + 1 < grid.nodes()[l];
  const bool has_bwd = kl > 0;
  const double fwd = has_fwd ? (s[(p + grid.stride(l)) * comps + r] - here) / h
                             : (here - s[(p - grid.stride(l)) * comps + r]) / h;
  const double bwd = has_bwd ? (here - s[(p - grid.stride(l)) * comps + r]) / h : fwd;
  return c > 0.0 ? c * fwd : c * bwd;
}

// Same at an off-grid point using the multilinear interpolant.
double upwind_point(const GridField& u, std::size_t j, std::span<const double> y, std::size_t r, std::size_t l,
                    double c, std::vector<double>& shifted, std::vector<double>& vals) {
  const double h = u.grid().mesh(l);
  shifted.assign(y.begin(), y.end());
  interpolate_slice(u, j, shifted, vals);
  const double here = vals[r];
  shifted[l] = y[l] + (c > 0.0 ? h : -h);
  interpolate_slice(u, j, shifted, vals);
  return c > 0.0 ? c * (vals[r] - here) / h : c * (here - vals[r]) / h;
}

}  // namespace

void diffusion_gradient_terms(const MfcProblem& problem, const SliceContext& ctx, const GridField& u, std::size_t j,
                              bool control, std::span<double> out) {
  const auto [d, k, n] = problem.dims();
  const std::size_t outputs = control ? k : d;
  const auto& grid = u.grid();
  const EmpiricalMeasure& eta = ctx.measure();
  const std::size_t np = eta.size();
  const double t = ctx.t();

  parallel_chunks(grid.node_count(), [&](std::size_t b, std::size_t e) {
    std::vector<double> sigma(d * n), dsigma(d * n * outputs), coeff(d * d), shifted, vals(d);
    for (std::size_t p = b; p < e; ++p) {
      const auto x = ctx.node_state(p);
      const auto a = ctx.node_control(p);
      problem.diffusion(t, x, a, eta, sigma);
      if (control)
        problem.diffusion_da(t, x, a, eta, dsigma);
      else
        problem.diffusion_dx(t, x, a, eta, dsigma);
      for (std::size_t o = 0; o < outputs; ++o) {
        double acc = 0.0;
        // local: sum_{r,l} (sum_c dsigma_rc/do * sigma_lc) d_l u_r
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t l = 0; l < d; ++l) {
            double c = 0.0;
            for (std::size_t q = 0; q < n; ++q) c += dsigma[(r * n + q) * outputs + o] * sigma[l * n + q];
            if (c != 0.0) acc += upwind_node(u, j, p, r, l, c);
          }
        // nonlocal: mean over carriers of the same contraction at the carrier
        double nl = 0.0;
        for (std::size_t m = 0; m < np; ++m) {
          const auto xc = eta.state(m);
          const auto ac = eta.control(m);
          problem.diffusion(t, xc, ac, eta, sigma);
          if (control)
            problem.diffusion_dnu(t, xc, ac, eta, x, a, dsigma);
          else
            problem.diffusion_dmu(t, xc, ac, eta, x, a, dsigma);
          for (std::size_t r = 0; r < d; ++r)
            for (std::size_t l = 0; l < d; ++l) {
              double c = 0.0;
              for (std::size_t q = 0; q < n; ++q) c += dsigma[(r * n + q) * outputs + o] * sigma[l * n + q];
              if (c != 0.0) nl += upwind_point(u, j, xc, r, l, c, shifted, vals);
            }
        }
        out[p * outputs + o] = acc + nl / static_cast<double>(np);
      }
    }
  });
}

std::vector<double> assemble_source(const MfcProblem& problem, const SliceContext& ctx, const GridField& u,
                                    std::size_t j) {
  const auto [d, k, n] = problem.dims();
  const auto& grid = u.grid();
  const std::size_t nodes = grid.node_count();
  if (u.components() != d) throw Error("assemble_source: adjoint field must have d components");
  const EmpiricalMeasure& eta = ctx.measure();

  std::vector<double> y(eta.size() * d);
  parallel_for(eta.size(), [&](std::size_t l) {
    interpolate_slice(u, j, eta.state(l), std::span(y).subspan(l * d, d));
  });
  std::vector<double> src(nodes * d, 0.0);
  const auto uj = u.slice(j);
  state_source_at(problem, ctx.t(), eta, y, ctx.node_x(), ctx.node_a(), uj, src);

  if (problem.diffusion_state_dependent()) {
    std::vector<double> ex(nodes * d);
    diffusion_gradient_terms(problem, ctx, u, j, false, ex);
    for (std::size_t i = 0; i < src.size(); ++i) src[i] += ex[i];
  }
  for (std::size_t i = 0; i < src.size(); ++i)
    if (!std::isfinite(src[i]))
      throw Error("assemble_source: non-finite source at slice " + std::to_string(j) + ", " + node_label(grid, i / d));
  return src;
}

std::vector<double> assemble_source(const MfcProblem& problem, const PolicyField& policy,
                                    const ParticleEnsemble& ensemble, const GridField& u, const SpaceTimeGrid& grid,
                                    std::size_t j) {
  const SliceContext ctx(problem, policy, ensemble, grid, j, SolverOptions{});
  return assemble_source(problem, ctx, u, j);
}

std::vector<double> terminal_data(const MfcProblem& problem, const ParticleEnsemble& ensemble,
                                  const SpaceTimeGrid& grid, const SolverOptions& options) {
  const std::size_t d = problem.dims().state;
  const std::size_t M = ensemble.steps();
  const EmpiricalMeasure mu = ensemble.measure(M);
  const auto xs = grid.node_coordinates();
  std::vector<double> h(grid.node_count() * d, 0.0);
  // Subsampling only applies to the nonlocal average.
  if (options.kernel_subsample > 0 && options.kernel_subsample < ensemble.particles()) {
    PolicyField dummy(grid, problem.dims().control);
    const SliceContext ctx(problem, dummy, ensemble, grid, M, options);
    problem.nonlocal_terminal(ctx.measure(), xs, h);
  } else {
    problem.nonlocal_terminal(mu, xs, h);
  }
  parallel_chunks(grid.node_count(), [&](std::size_t b, std::size_t e) {
    std::vector<double> g(d);
    for (std::size_t p = b; p < e; ++p) {
      problem.terminal_cost_dx(std::span<const double>(xs).subspan(p * d, d), mu, g);
      for (std::size_t i = 0; i < d; ++i) h[p * d + i] += g[i];
    }
  });
  return h;
}

// ---------------------------------------------------------------------------

namespace {

class SliceSolver {
 public:
  SliceSolver(const SolverOptions& options) : options_(options) {}

  /// Solves (I - dt L) U = rhs for each of `comps` interleaved components.
  /// Dirichlet rows are identity rows.
  void solve(const MonotoneOperator& op, double dt, std::span<const double> rhs, std::span<double> sol,
             std::size_t comps, std::size_t slice) {
    if (options_.solver == LinearSolver::direct && solve_direct(op, dt, rhs, sol, comps)) return;
    solve_gauss_seidel(op, dt, rhs, sol, comps, slice);
  }

 private:
  double residual(const MonotoneOperator& op, double dt, std::span<const double> rhs, std::span<const double> sol,
                  std::size_t comps, std::size_t c) const {
    double worst = 0.0;
    for (std::size_t k = 0; k < op.rows(); ++k) {
      double r = sol[k * comps + c] - rhs[k * comps + c];
      if (!op.dirichlet[k])
        for (std::size_t e = op.row_start[k]; e < op.row_start[k + 1]; ++e)
          r -= dt * op.weight[e] * (sol[op.neighbor[e] * comps + c] - sol[k * comps + c]);
      worst = std::max(worst, std::abs(r));
    }
    return worst;
  }

  double tolerance(std::span<const double> rhs) const {
    double scale = 1.0;
    for (double v : rhs) scale = std::max(scale, std::abs(v));
    return options_.tolerance * scale;
  }

  bool solve_direct(const MonotoneOperator& op, double dt, std::span<const double> rhs, std::span<double> sol,
                    std::size_t comps) {
    const std::size_t nodes = op.rows();
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(nodes + op.neighbor.size());
    for (std::size_t k = 0; k < nodes; ++k) {
      double diag = 1.0;
      if (!op.dirichlet[k])
        for (std::size_t e = op.row_start[k]; e < op.row_start[k + 1]; ++e) {
          diag += dt * op.weight[e];
          trips.emplace_back(static_cast<int>(k), static_cast<int>(op.neighbor[e]), -dt * op.weight[e]);
        }
      trips.emplace_back(static_cast<int>(k), static_cast<int>(k), diag);
    }
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(nodes), static_cast<Eigen::Index>(nodes));
    a.setFromTriplets(trips.begin(), trips.end());
    a.makeCompressed();

    if (!same_pattern(op)) {
      lu_.analyzePattern(a);
      pattern_rows_ = op.row_start;
      pattern_cols_ = op.neighbor;
      pattern_dirichlet_ = op.dirichlet;
    }
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success) {
      pattern_rows_.clear();
      return false;
    }
    const double tol = tolerance(rhs);
    Eigen::VectorXd b(static_cast<Eigen::Index>(nodes));
    for (std::size_t c = 0; c < comps; ++c) {
      for (std::size_t k = 0; k < nodes; ++k) b[static_cast<Eigen::Index>(k)] = rhs[k * comps + c];
      Eigen::VectorXd x = lu_.solve(b);
      if (lu_.info() != Eigen::Success) return false;
      for (std::size_t k = 0; k < nodes; ++k) sol[k * comps + c] = x[static_cast<Eigen::Index>(k)];
      if (residual(op, dt, rhs, sol, comps, c) > tol) {
        // one step of iterative refinement
        Eigen::VectorXd r = b - a * x;
        x += lu_.solve(r);
        for (std::size_t k = 0; k < nodes; ++k) sol[k * comps + c] = x[static_cast<Eigen::Index>(k)];
        if (residual(op, dt, rhs, sol, comps, c) > tol) return false;
      }
    }
    return true;
  }

  void solve_gauss_seidel(const MonotoneOperator& op, double dt, std::span<const double> rhs, std::span<double> sol,
                          std::size_t comps, std::size_t slice) const {
    const std::size_t nodes = op.rows();
    const double tol = tolerance(rhs);
    for (std::size_t c = 0; c < comps; ++c) {
      for (std::size_t k = 0; k < nodes; ++k) sol[k * comps + c] = rhs[k * comps + c];
      double res = residual(op, dt, rhs, sol, comps, c);
      std::size_t sweep = 0;
      for (; sweep < options_.max_sweeps && res > tol; ++sweep) {
        for (std::size_t k = 0; k < nodes; ++k) {
          if (op.dirichlet[k]) {
            sol[k * comps + c] = rhs[k * comps + c];
            continue;
          }
          double diag = 1.0, s = rhs[k * comps + c];
          for (std::size_t e = op.row_start[k]; e < op.row_start[k + 1]; ++e) {
            diag += dt * op.weight[e];
            s += dt * op.weight[e] * sol[op.neighbor[e] * comps + c];
          }
          sol[k * comps + c] = s / diag;
        }
        res = residual(op, dt, rhs, sol, comps, c);
      }
      if (res > tol) {
        std::ostringstream os;
        os << "backward_sweep: linear solve at slice " << slice << " stalled after " << sweep
           << " Gauss-Seidel sweeps with residual " << res << " (tolerance " << tol << ")";
        throw Error(os.str());
      }
    }
  }

  bool same_pattern(const MonotoneOperator& op) const {
    return pattern_rows_ == op.row_start && pattern_cols_ == op.neighbor && pattern_dirichlet_ == op.dirichlet;
  }

  SolverOptions options_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu_;
  std::vector<std::size_t> pattern_rows_, pattern_cols_;
  std::vector<char> pattern_dirichlet_;
};

void materialize_v(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                   const SpaceTimeGrid& grid, const SolverOptions& options, AdjointField& field) {
  const auto [d, k, n] = problem.dims();
  GridField v(grid, d * n);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j) {
    const SliceContext ctx(problem, policy, ensemble, grid, j, options);
    const auto s = field.u.slice(j);
    parallel_chunks(grid.node_count(), [&](std::size_t b, std::size_t e) {
      std::vector<double> sigma(d * n), grad(d * d);
      for (std::size_t p = b; p < e; ++p) {
        problem.diffusion(ctx.t(), ctx.node_state(p), ctx.node_control(p), ctx.measure(), sigma);
        for (std::size_t l = 0; l < d; ++l) {
          const std::size_t kl = (p / grid.stride(l)) % grid.nodes()[l];
          const std::size_t up = kl + 1 < grid.nodes()[l] ? p + grid.stride(l) : p;
          const std::size_t dn = kl > 0 ? p - grid.stride(l) : p;
          const double span = grid.mesh(l) * static_cast<double>((up != p) + (dn != p));
          for (std::size_t r = 0; r < d; ++r) grad[r * d + l] = (s[up * d + r] - s[dn * d + r]) / span;
        }
        auto out = v.at(j, p);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < n; ++c) {
            double acc = 0.0;
            for (std::size_t l = 0; l < d; ++l) acc += grad[r * d + l] * sigma[l * n + c];
            out[r * n + c] = acc;
          }
      }
    });
  }
  field.v = std::move(v);
}

}  // namespace

AdjointField backward_sweep(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                            const SpaceTimeGrid& grid, const SolverOptions& options) {
  return backward_sweep(problem, policy, ensemble, grid, options, ExtraSource{});
}

AdjointField backward_sweep(const MfcProblem& problem, const PolicyField& policy, const ParticleEnsemble& ensemble,
                            const SpaceTimeGrid& grid, const SolverOptions& options, const ExtraSource& extra) {
  const std::size_t d = problem.dims().state;
  const std::size_t M = grid.time_steps();
  const std::size_t nodes = grid.node_count();
  const double dt = grid.dt();
  AdjointField field{GridField(grid, d), std::nullopt, false, {}, {}};

  double min_h = grid.mesh(0);
  for (std::size_t i = 1; i < grid.dim(); ++i) min_h = std::min(min_h, grid.mesh(i));
  if (dt > 10.0 * min_h) {
    std::ostringstream os;
    os << "time step " << dt << " is large relative to the mesh " << min_h << "; the explicit source may be unstable";
    field.warnings.push_back(os.str());
  }

  const auto h = terminal_data(problem, ensemble, grid, options);
  const auto xs = grid.node_coordinates();
  {
    auto last = field.u.slice(M);
    std::copy(h.begin(), h.end(), last.begin());
  }

  SliceSolver solver(options);
  std::vector<double> rhs(nodes * d), extra_vals(d);
  for (std::size_t j = M; j >= 1; --j) {
    std::vector<double> src;
    {
      const SliceContext ctx(problem, policy, ensemble, grid, j, options);
      src = assemble_source(problem, ctx, field.u, j);
    }
    const auto uj = field.u.slice(j);
    for (std::size_t p = 0; p < nodes; ++p) {
      const auto x = std::span<const double>(xs).subspan(p * d, d);
      if (grid.on_boundary(p)) {
        problem.boundary_value(grid.time(j - 1), x, std::span<const double>(h).subspan(p * d, d),
                               std::span(rhs).subspan(p * d, d));
        continue;
      }
      if (extra) extra(grid.time(j), x, extra_vals);
      for (std::size_t i = 0; i < d; ++i) {
        const double s = src[p * d + i] + (extra ? extra_vals[i] : 0.0);
        rhs[p * d + i] = uj[p * d + i] + dt * s;
      }
    }
    for (std::size_t i = 0; i < rhs.size(); ++i)
      if (!std::isfinite(rhs[i]))
        throw Error("backward_sweep: NaN in right-hand side at (j=" + std::to_string(j) + ", k=" +
                    std::to_string(i / d) + ")");

    const SliceContext prev(problem, policy, ensemble, grid, j - 1, options);
    const MonotoneOperator op = build_operator(problem, prev, grid);
    solver.solve(op, dt, rhs, field.u.slice(j - 1), d, j - 1);
  }
  // Boundary data at the terminal slice follows the boundary hook as well.
  {
    auto last = field.u.slice(M);
    for (std::size_t p = 0; p < nodes; ++p)
      if (grid.on_boundary(p))
        problem.boundary_value(grid.time(M), std::span<const double>(xs).subspan(p * d, d),
                               std::span<const double>(h).subspan(p * d, d), last.subspan(p * d, d));
  }

  if (problem.diffusion_state_dependent()) materialize_v(problem, policy, ensemble, grid, options, field);
  return field;
}

}  // namespace mfc
