#include "mfc/nag.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace mfc {

std::vector<double> gradient_slice(const MfcProblem& problem, const SliceContext& ctx, const AdjointField& adjoint,
                                   std::size_t j) {
  const auto [d, k, n] = problem.dims();
  const auto& grid = adjoint.u.grid();
  const EmpiricalMeasure& eta = ctx.measure();
  std::vector<double> y(eta.size() * d);
  parallel_for(eta.size(), [&](std::size_t l) { adjoint.evaluate(j, eta.state(l), std::span(y).subspan(l * d, d)); });

  std::vector<double> g(grid.node_count() * k, 0.0);
  control_gradient_at(problem, ctx.t(), eta, y, ctx.node_x(), ctx.node_a(), adjoint.u.slice(j), g);
  if (problem.diffusion_state_dependent()) {
    std::vector<double> extra(g.size());
    diffusion_gradient_terms(problem, ctx, adjoint.u, j, true, extra);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
  }
  if (!adjoint.support.empty()) {
    const std::size_t base = j * grid.node_count();
    for (std::size_t p = 0; p < grid.node_count(); ++p)
      if (!adjoint.support[base + p])
        for (std::size_t c = 0; c < k; ++c) g[p * k + c] = 0.0;
  }
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(g[i]))
      throw Error("gradient_map: non-finite gradient at slice " + std::to_string(j) + ", node " +
                  std::to_string(i / k));
  return g;
}

std::vector<double> gradient_map(const MfcProblem& problem, const PolicyField& psi, const ParticleEnsemble& ensemble,
                                 const AdjointField& adjoint, const SpaceTimeGrid& grid, std::size_t j,
                                 std::size_t node, const SolverOptions& options) {
  const SliceContext ctx(problem, psi, ensemble, grid, j, options);
  const auto g = gradient_slice(problem, ctx, adjoint, j);
  const std::size_t k = problem.dims().control;
  return {g.begin() + static_cast<std::ptrdiff_t>(node * k), g.begin() + static_cast<std::ptrdiff_t>((node + 1) * k)};
}

GridField gradient_field(const MfcProblem& problem, const PolicyField& psi, const ParticleEnsemble& ensemble,
                         const AdjointField& adjoint, const SpaceTimeGrid& grid, const SolverOptions& options) {
  GridField out(grid, problem.dims().control);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j) {
    const SliceContext ctx(problem, psi, ensemble, grid, j, options);
    const auto g = gradient_slice(problem, ctx, adjoint, j);
    auto s = out.slice(j);
    std::copy(g.begin(), g.end(), s.begin());
  }
  return out;
}

void check_callbacks(const MfcProblem& problem) {
  if (!problem.diffusion_state_dependent()) return;
  const auto [d, k, n] = problem.dims();
  std::vector<double> xs(d, 0.0), as(k, 0.0), out(d * n * std::max(d, k));
  const EmpiricalMeasure eta(xs, as, problem.dims());
  problem.diffusion_dx(0.0, xs, as, eta, std::span(out).first(d * n * d));
  problem.diffusion_da(0.0, xs, as, eta, std::span(out).first(d * n * k));
  problem.diffusion_dmu(0.0, xs, as, eta, xs, as, std::span(out).first(d * n * d));
  problem.diffusion_dnu(0.0, xs, as, eta, xs, as, std::span(out).first(d * n * k));
}

// ---------------------------------------------------------------------------

NagState NagState::start(const PolicyField& initial, double tau, bool momentum_on, double momentum_cap) {
  if (!(tau > 0.0)) throw ConfigError("step size tau must be positive");
  return NagState{0, initial, initial, initial, tau, momentum_on, momentum_cap};
}

double momentum_coefficient(std::size_t m, double cap) {
  const double c = static_cast<double>(m) / (static_cast<double>(m) + 3.0);
  return cap >= 0.0 ? std::min(c, cap) : c;
}

NagState nag_step(const NagState& state, const GridField& gradient, const ProxSpec& prox) {
  if (!gradient.grid().same_as(state.psi.grid()) || gradient.components() != state.psi.components())
    throw Error("nag_step: gradient is not on the policy grid");
  NagState next{state.iteration + 1, state.psi, state.psi, state.phi, state.tau, state.momentum_on,
                state.momentum_cap};
  auto& phi = next.phi.values();
  const auto& g = gradient.values();
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] -= state.tau * g[i];
  prox_apply(prox, state.tau, phi, phi);
  const double c = state.momentum_on ? momentum_coefficient(state.iteration, state.momentum_cap) : 0.0;
  auto& psi = next.psi.values();
  const auto& old = state.phi.values();
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = phi[i] + c * (phi[i] - old[i]);
  return next;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::fipde: return "fipde";
    case Method::ipde: return "ipde";
    case Method::emreg: return "emreg";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "fipde") return Method::fipde;
  if (s == "ipde") return Method::ipde;
  if (s == "emreg") return Method::emreg;
  throw ConfigError("unknown method '" + s + "' (expected fipde, ipde or emreg)");
}

RunFailure::RunFailure(std::size_t iteration, const std::string& what, RunReport partial)
    : Error("iteration " + std::to_string(iteration) + ": " + what),
      iteration_(iteration),
      partial_(std::make_shared<RunReport>(std::move(partial))) {}

CostEstimate evaluate_policy(const MfcProblem& problem, const PolicyField& policy, std::size_t particles,
                             std::uint64_t seed) {
  const auto ens = simulate(problem, policy, particles, policy.grid().time_steps(), seed);
  return estimate_cost(problem, ens);
}

// ---------------------------------------------------------------------------

RunReport run_loop(const MfcProblem& problem, const RunSettings& settings, const AdjointSolver& solver,
                   const IterationCallback& on_iteration) {
  using clock = std::chrono::steady_clock;
  const auto& grid = settings.grid;
  const std::size_t k = problem.dims().control;
  if (grid.dim() != problem.dims().state) throw ConfigError("grid dimension differs from the problem state dimension");
  if (std::abs(grid.horizon() - problem.horizon()) > 1e-12) throw ConfigError("grid horizon differs from the problem");
  if (settings.particles < 1) throw ConfigError("particles must be positive");
  check_callbacks(problem);

  PolicyField initial(grid, k, 0.0);
  if (settings.initial_policy) {
    if (!settings.initial_policy->grid().same_as(grid) || settings.initial_policy->components() != k)
      throw ConfigError("initial policy is not on the configured grid");
    initial = *settings.initial_policy;
  }
  const bool momentum = settings.method != Method::ipde;
  NagState state = NagState::start(initial, settings.tau, momentum, settings.momentum_cap);
  const ProxSpec prox = problem.nonsmooth_cost();
  const std::size_t eval_n = settings.eval_particles ? settings.eval_particles : settings.particles;

  RunReport report;
  report.method = settings.method;
  report.seed = settings.seed;
  report.eval_seed = settings.eval_seed;
  report.phi = state.phi;
  report.psi = state.psi;

  auto t0 = clock::now();
  auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
  std::size_t m = 0;
  std::optional<AdjointField> previous;
  try {
    const CostEstimate j0 = evaluate_policy(problem, state.phi, eval_n, settings.eval_seed);
    report.records.push_back({0, j0.value, j0.std_error, 0.0, elapsed_ms()});
    if (on_iteration) on_iteration(report.records.back());

    for (m = 0; m < settings.iterations; ++m) {
      t0 = clock::now();
      const std::uint64_t train_seed =
          settings.resample_each_iteration ? CounterRng::derive(settings.seed, m) : settings.seed;
      ParticleEnsemble ens = simulate(problem, state.psi, settings.particles, grid.time_steps(), train_seed);
      AdjointField adjoint = solver(problem, state.psi, ens, grid, previous ? &*previous : nullptr);
      for (const auto& w : adjoint.warnings)
        if (std::find(report.warnings.begin(), report.warnings.end(), w) == report.warnings.end())
          report.warnings.push_back(w);
      const GridField g = gradient_field(problem, state.psi, ens, adjoint, grid, settings.solver);
      state = nag_step(state, g, prox);
      if (!adjoint.support.empty()) {
        // The policy keeps its initial value where the adjoint carries no information.
        auto& phi = state.phi.values();
        auto& psi = state.psi.values();
        const auto& init = initial.values();
        for (std::size_t p = 0; p < adjoint.support.size(); ++p)
          if (!adjoint.support[p])
            for (std::size_t c = 0; c < k; ++c) {
              phi[p * k + c] = init[p * k + c];
              psi[p * k + c] = init[p * k + c];
            }
      }

      double ss = 0.0;
      for (double v : g.values()) ss += v * v;
      const double grad_norm = std::sqrt(ss / static_cast<double>(g.values().size()));
      const CostEstimate est = evaluate_policy(problem, state.phi, eval_n, settings.eval_seed);
      if (!std::isfinite(est.value)) throw Error("cost estimate is not finite");
      report.records.push_back({m + 1, est.value, est.std_error, grad_norm, elapsed_ms()});
      report.phi = state.phi;
      report.psi = state.psi;
      if (on_iteration) on_iteration(report.records.back());

      if (settings.keep_last && m + 1 == settings.iterations) {
        report.last_adjoint = adjoint;
        report.last_ensemble = std::move(ens);
      }
      previous = std::move(adjoint);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw RunFailure(m, e.what(), std::move(report));
  }
  return report;
}

RunReport run(const MfcProblem& problem, const RunSettings& settings, const IterationCallback& on_iteration) {
  if (settings.method == Method::emreg) throw ConfigError("run: use run_emreg for the regression baseline");
  const SolverOptions options = settings.solver;
  auto solver = [options](const MfcProblem& p, const PolicyField& psi, const ParticleEnsemble& ens,
                          const SpaceTimeGrid& grid, const AdjointField*) {
    return backward_sweep(p, psi, ens, grid, options);
  };
  return run_loop(problem, settings, solver, on_iteration);
}

}  // namespace mfc
