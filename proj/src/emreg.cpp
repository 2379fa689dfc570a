#include "mfc/emreg.hpp"

#include <memory>

namespace mfc {

CellMeans cell_means(const SpaceTimeGrid& grid, std::span<const double> points, std::span<const double> targets,
                     std::size_t components) {
  const std::size_t d = grid.dim();
  const std::size_t n = points.size() / d;
  if (targets.size() != n * components) throw Error("cell_means: targets must be N x components");
  const std::size_t cells = cell_count(grid);
  const std::size_t chunks = (n + kChunk - 1) / kChunk;

  std::vector<std::vector<double>> sums(chunks);
  std::vector<std::vector<std::size_t>> counts(chunks);
  parallel_chunks(n, [&](std::size_t b, std::size_t e) {
    auto& s = sums[b / kChunk];
    auto& c = counts[b / kChunk];
    s.assign(cells * components, 0.0);
    c.assign(cells, 0);
    for (std::size_t l = b; l < e; ++l) {
      const std::size_t cell = cell_index(grid, points.subspan(l * d, d));
      ++c[cell];
      for (std::size_t q = 0; q < components; ++q) s[cell * components + q] += targets[l * components + q];
    }
  });

  CellMeans out;
  out.values.assign(cells * components, 0.0);
  out.counts.assign(cells, 0);
  for (std::size_t ch = 0; ch < chunks; ++ch)
    for (std::size_t c = 0; c < cells; ++c) {
      out.counts[c] += counts[ch][c];
      for (std::size_t q = 0; q < components; ++q) out.values[c * components + q] += sums[ch][c * components + q];
    }
  for (std::size_t c = 0; c < cells; ++c)
    if (out.counts[c])
      for (std::size_t q = 0; q < components; ++q) out.values[c * components + q] /= static_cast<double>(out.counts[c]);
  return out;
}

CellRegression::CellRegression(const SpaceTimeGrid& g, std::size_t comps) : grid(g), components(comps) {
  const std::size_t slices = grid.time_steps() + 1;
  values.assign(slices * cell_count(grid) * components, 0.0);
  counts.assign(slices * cell_count(grid), 0);
  visited.assign(slices * cell_count(grid), 0);
}

AdjointField CellRegression::field() const {
  const std::size_t nodes = grid.node_count();
  const std::size_t cells = cell_count(grid);
  AdjointField f{GridField(grid, components), std::nullopt, true, {}, {}};
  f.support.assign((grid.time_steps() + 1) * nodes, 0);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j)
    for (std::size_t p = 0; p < nodes; ++p) {
      const std::size_t c = node_cell(grid, p);
      const auto v = cell(j, c);
      auto out = f.u.at(j, p);
      std::copy(v.begin(), v.end(), out.begin());
      f.support[j * nodes + p] = visited[j * cells + c];
    }
  return f;
}

namespace {

void store_slice(CellRegression& reg, std::size_t j, const CellMeans& means, const CellRegression* previous) {
  const std::size_t cells = cell_count(reg.grid);
  const std::size_t comps = reg.components;
  for (std::size_t c = 0; c < cells; ++c) {
    auto dst = reg.cell(j, c);
    reg.counts[j * cells + c] = means.counts[c];
    if (means.counts[c]) {
      for (std::size_t q = 0; q < comps; ++q) dst[q] = means.values[c * comps + q];
      reg.visited[j * cells + c] = 1;
    } else if (previous) {
      const auto src = previous->cell(j, c);
      std::copy(src.begin(), src.end(), dst.begin());
    }
    if (previous && previous->visited[j * cells + c]) reg.visited[j * cells + c] = 1;
  }
}

void write_nodal(const CellRegression& reg, std::size_t j, GridField& u) {
  for (std::size_t p = 0; p < reg.grid.node_count(); ++p) {
    const auto v = reg.cell(j, node_cell(reg.grid, p));
    auto out = u.at(j, p);
    std::copy(v.begin(), v.end(), out.begin());
  }
}

}  // namespace

CellRegression regress_adjoint(const MfcProblem& problem, const ParticleEnsemble& ensemble, const SpaceTimeGrid& grid,
                               const CellRegression* previous) {
  if (problem.diffusion_state_dependent())
    throw ConfigError("emreg: regression targets for a state-dependent diffusion are not supported");
  const auto [d, k, n] = problem.dims();
  const std::size_t M = grid.time_steps();
  if (ensemble.steps() != M) throw ConfigError("emreg: ensemble and grid time steps differ");
  if (previous && (!previous->grid.same_as(grid) || previous->components != d))
    throw Error("emreg: previous regression is on a different grid");
  const std::size_t np = ensemble.particles();
  const double dt = grid.dt();

  CellRegression reg(grid, d);
  GridField u(grid, d);
  std::vector<double> targets(np * d);

  {
    const EmpiricalMeasure mu = ensemble.measure(M);
    const auto xs = ensemble.states(M);
    problem.nonlocal_terminal(mu, xs, targets);
    parallel_chunks(np, [&](std::size_t b, std::size_t e) {
      std::vector<double> g(d);
      for (std::size_t l = b; l < e; ++l) {
        problem.terminal_cost_dx(ensemble.state(M, l), mu, g);
        for (std::size_t i = 0; i < d; ++i) targets[l * d + i] += g[i];
      }
    });
    store_slice(reg, M, cell_means(grid, xs, targets, d), previous);
    write_nodal(reg, M, u);
  }

  std::vector<double> y(np * d), next(np * d), src(np * d);
  for (std::size_t j = M; j-- > 0;) {
    const EmpiricalMeasure eta = ensemble.measure(j);
    parallel_for(np, [&](std::size_t l) {
      cell_value_slice(u, j + 1, ensemble.state(j, l), std::span(y).subspan(l * d, d));
      cell_value_slice(u, j + 1, ensemble.state(j + 1, l), std::span(next).subspan(l * d, d));
    });
    state_source_at(problem, grid.time(j), eta, y, ensemble.states(j), ensemble.controls(j), y, src);
    for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = next[i] + dt * src[i];
    store_slice(reg, j, cell_means(grid, ensemble.states(j), targets, d), previous);
    write_nodal(reg, j, u);
  }
  return reg;
}

RunReport run_emreg(const MfcProblem& problem, const RunSettings& settings, const IterationCallback& on_iteration) {
  auto last = std::make_shared<std::optional<CellRegression>>();
  auto solver = [last](const MfcProblem& p, const PolicyField&, const ParticleEnsemble& ens, const SpaceTimeGrid& grid,
                       const AdjointField*) {
    CellRegression reg = regress_adjoint(p, ens, grid, last->has_value() ? &**last : nullptr);
    AdjointField f = reg.field();
    *last = std::move(reg);
    return f;
  };
  RunSettings s = settings;
  s.method = Method::emreg;
  return run_loop(problem, s, solver, on_iteration);
}

}  // namespace mfc
