#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "mfc/grid.hpp"
#include "mfc/problem.hpp"

namespace mfc {

/// N particle paths on the Euler grid t_j = j T / M, j = 0..M, with the policy
/// evaluated at every particle and slice.
class ParticleEnsemble {
 public:
  ParticleEnsemble(Dims dims, std::size_t particles, std::size_t steps, double horizon, std::uint64_t seed);

  const Dims& dims() const { return dims_; }
  std::size_t particles() const { return particles_; }
  std::size_t steps() const { return steps_; }
  double horizon() const { return horizon_; }
  double dt() const { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t j) const { return static_cast<double>(j) * dt(); }
  std::uint64_t seed() const { return seed_; }

  std::span<double> states(std::size_t j) { return std::span(states_).subspan(j * particles_ * dims_.state, particles_ * dims_.state); }
  std::span<const double> states(std::size_t j) const {
    return std::span(states_).subspan(j * particles_ * dims_.state, particles_ * dims_.state);
  }
  std::span<double> controls(std::size_t j) {
    return std::span(controls_).subspan(j * particles_ * dims_.control, particles_ * dims_.control);
  }
  std::span<const double> controls(std::size_t j) const {
    return std::span(controls_).subspan(j * particles_ * dims_.control, particles_ * dims_.control);
  }
  std::span<const double> state(std::size_t j, std::size_t l) const {
    return states(j).subspan(l * dims_.state, dims_.state);
  }
  std::span<const double> control(std::size_t j, std::size_t l) const {
    return controls(j).subspan(l * dims_.control, dims_.control);
  }

  /// The empirical measure of slice j (states and evaluated controls).
  EmpiricalMeasure measure(std::size_t j) const;

 private:
  Dims dims_;
  std::size_t particles_, steps_;
  double horizon_;
  std::uint64_t seed_;
  std::vector<double> states_;
  std::vector<double> controls_;
};

/// Forward Euler-Maruyama for the interacting particle system driven by the
/// feedback `policy`. Brownian increments for (particle l, step j, component
/// c) are drawn from the counter-based stream keyed by the seed, so the result
/// is independent of the worker count.
ParticleEnsemble simulate(const MfcProblem& problem, const PolicyField& policy, std::size_t particles,
                          std::size_t steps, std::uint64_t seed);

struct CostEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo cost with left-rectangle quadrature on the Euler grid.
CostEstimate estimate_cost(const MfcProblem& problem, const ParticleEnsemble& ensemble);

/// Arithmetic mean of fn(x, a) over slice j; fn writes `width` values.
std::vector<double> empirical_expect(
    const ParticleEnsemble& ensemble, std::size_t j, std::size_t width,
    const std::function<void(std::span<const double>, std::span<const double>, std::span<double>)>& fn);

/// Trajectory dump: `j,l,x1..xd,a1..ak`.
void write_trajectories(const ParticleEnsemble& ensemble, const std::filesystem::path& path);

}  // namespace mfc
