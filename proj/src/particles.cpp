#include "mfc/particles.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mfc {

ParticleEnsemble::ParticleEnsemble(Dims dims, std::size_t particles, std::size_t steps, double horizon,
                                   std::uint64_t seed)
    : dims_(dims), particles_(particles), steps_(steps), horizon_(horizon), seed_(seed) {
  if (particles_ < 1) throw ConfigError("ensemble needs at least one particle");
  if (steps_ < 1) throw ConfigError("ensemble needs at least one time step");
  states_.assign((steps_ + 1) * particles_ * dims_.state, 0.0);
  controls_.assign((steps_ + 1) * particles_ * dims_.control, 0.0);
}

EmpiricalMeasure ParticleEnsemble::measure(std::size_t j) const { return EmpiricalMeasure(states(j), controls(j), dims_); }

namespace {

void evaluate_controls(const PolicyField& policy, ParticleEnsemble& ens, std::size_t j) {
  const std::size_t d = ens.dims().state, k = ens.dims().control;
  const std::size_t pj = policy.grid().time_index(ens.time(j));
  auto states = ens.states(j);
  auto controls = ens.controls(j);
  parallel_for(ens.particles(), [&](std::size_t l) {
    interpolate_slice(policy, pj, states.subspan(l * d, d), controls.subspan(l * k, k));
  });
}

std::string describe_particle(std::size_t j, std::size_t l) {
  std::ostringstream os;
  os << "(j=" << j << ", l=" << l << ")";
  return os.str();
}

}  // namespace

ParticleEnsemble simulate(const MfcProblem& problem, const PolicyField& policy, std::size_t particles,
                          std::size_t steps, std::uint64_t seed) {
  const Dims dims = problem.dims();
  const std::size_t d = dims.state, k = dims.control, n = dims.noise;
  if (policy.grid().dim() != d || policy.components() != k)
    throw ConfigError("simulate: policy dimensions do not match the problem (state " + std::to_string(d) +
                      ", control " + std::to_string(k) + ")");
  if (std::abs(policy.grid().horizon() - problem.horizon()) > 1e-12)
    throw ConfigError("simulate: policy horizon differs from the problem horizon");

  ParticleEnsemble ens(dims, particles, steps, problem.horizon(), seed);
  const CounterRng rng(seed);
  const double dt = ens.dt();
  const double sqrt_dt = std::sqrt(dt);
  const std::size_t padded = n + (n % 2);

  {
    auto x0 = ens.states(0);
    parallel_for(particles, [&](std::size_t l) { problem.sample_initial(rng, l, x0.subspan(l * d, d)); });
  }

  for (std::size_t j = 0; j < steps; ++j) {
    evaluate_controls(policy, ens, j);
    const EmpiricalMeasure eta = ens.measure(j);
    const double t = ens.time(j);
    const auto xs = ens.states(j);
    const auto as = ens.controls(j);
    auto next = ens.states(j + 1);
    parallel_chunks(particles, [&](std::size_t b, std::size_t e) {
      std::vector<double> drift(d), sigma(d * n), dw(n);
      for (std::size_t l = b; l < e; ++l) {
        const auto x = xs.subspan(l * d, d);
        const auto a = as.subspan(l * k, k);
        problem.drift(t, x, a, eta, drift);
        problem.diffusion(t, x, a, eta, sigma);
        for (std::size_t c = 0; c < n; ++c) dw[c] = sqrt_dt * rng.normal(rng_stream::kBrownian, l, j * padded + c);
        for (std::size_t i = 0; i < d; ++i) {
          double v = x[i] + drift[i] * dt;
          for (std::size_t c = 0; c < n; ++c) v += sigma[i * n + c] * dw[c];
          if (!std::isfinite(v)) {
            const bool drift_bad = !std::isfinite(drift[i]);
            throw Error("simulate: non-finite state at " + describe_particle(j + 1, l) + " produced by " +
                        (drift_bad ? "drift" : "diffusion") + " component " + std::to_string(i + 1));
          }
          next[l * d + i] = v;
        }
      }
    });
  }
  evaluate_controls(policy, ens, steps);
  return ens;
}

CostEstimate estimate_cost(const MfcProblem& problem, const ParticleEnsemble& ens) {
  const std::size_t np = ens.particles();
  const double dt = ens.dt();
  const ProxSpec nonsmooth = problem.nonsmooth_cost();
  constexpr double kBoxTolerance = 1e-9;

  std::vector<double> per_particle(np, 0.0);
  for (std::size_t j = 0; j < ens.steps(); ++j) {
    const EmpiricalMeasure eta = ens.measure(j);
    const double t = ens.time(j);
    parallel_for(np, [&](std::size_t l) {
      const auto a = ens.control(j, l);
      const double penalty = nonsmooth_value(nonsmooth, a, kBoxTolerance);
      if (!std::isfinite(penalty))
        throw Error("estimate_cost: control outside the box constraint at " + describe_particle(j, l));
      per_particle[l] += (problem.running_cost(t, ens.state(j, l), a, eta) + penalty) * dt;
    });
  }
  const EmpiricalMeasure mu = ens.measure(ens.steps());
  parallel_for(np, [&](std::size_t l) { per_particle[l] += problem.terminal_cost(ens.state(ens.steps(), l), mu); });

  const double mean = chunked_sum(np, [&](std::size_t l) { return per_particle[l]; }) / static_cast<double>(np);
  const double ss = chunked_sum(np, [&](std::size_t l) {
    const double e = per_particle[l] - mean;
    return e * e;
  });
  CostEstimate out;
  out.value = mean;
  out.std_error = np > 1 ? std::sqrt(ss / static_cast<double>(np - 1) / static_cast<double>(np)) : 0.0;
  return out;
}

std::vector<double> empirical_expect(
    const ParticleEnsemble& ens, std::size_t j, std::size_t width,
    const std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>& fn) {
  if (j > ens.steps()) throw Error("empirical_expect: time index out of range");
  const std::size_t np = ens.particles();
  std::vector<double> values(np * width);
  parallel_for(np, [&](std::size_t l) {
    fn(ens.state(j, l), ens.control(j, l), std::span(values).subspan(l * width, width));
  });
  std::vector<double> out(width);
  for (std::size_t c = 0; c < width; ++c)
    out[c] = chunked_sum(np, [&](std::size_t l) { return values[l * width + c]; }) / static_cast<double>(np);
  return out;
}

void write_trajectories(const ParticleEnsemble& ens, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  const std::size_t d = ens.dims().state, k = ens.dims().control;
  os << "j,l";
  for (std::size_t i = 0; i < d; ++i) os << ",x" << i + 1;
  for (std::size_t i = 0; i < k; ++i) os << ",a" << i + 1;
  os << "\n" << std::setprecision(17);
  for (std::size_t j = 0; j <= ens.steps(); ++j)
    for (std::size_t l = 0; l < ens.particles(); ++l) {
      os << j << "," << l;
      for (double v : ens.state(j, l)) os << "," << v;
      for (double v : ens.control(j, l)) os << "," << v;
      os << "\n";
    }
}

}  // namespace mfc
