#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "mfc/grid.hpp"
#include "mfc/problems.hpp"

namespace mfc {

/// Samples of the Cucker-Smale LQ Riccati solution
///   a' - 2 K a - a^2 / (2 gamma1) + 2 = 0,  a(T) = 2,
/// on t_i = i * dt, forward-indexed.
struct RiccatiSolution {
  double coupling = 1.0;
  double gamma1 = 0.1;
  double horizon = 1.0;
  double dt = 1e-4;
  std::vector<double> a;

  double time(std::size_t i) const { return static_cast<double>(i) * dt; }
  /// Linear interpolation in t; throws outside [0, T].
  double at(double t) const;
  /// Largest |a' - 2Ka - a^2/(2 gamma1) + 2| over interior samples, with
  /// fourth-order central differences for a'.
  double max_residual() const;
};

inline constexpr double kRiccatiBlowUp = 1e6;

/// Classical RK4 backward from a(T) = 2. dt_ode <= 1e-3; the step is
/// shortened so that it divides T.
RiccatiSolution solve_cs_riccati(double coupling, double gamma1, double horizon, double dt_ode = 1e-4);

/// phi*(t, x, v) = -(a_t / (2 gamma1)) (v - mean_v(t)); mean_v is sampled
/// uniformly on [0, T] (linear interpolation between samples).
double cs_lq_feedback(const RiccatiSolution& sol, std::span<const double> mean_v, double t, double x, double v);

/// Mean velocity under the LQ feedback, by closed-loop particle simulation on
/// `steps` Euler steps. The feedback depends on the mean it produces, so the
/// simulation is repeated with the updated mean `passes` times.
std::vector<double> cs_lq_mean_velocity(const CuckerSmaleProblem& problem, const RiccatiSolution& sol,
                                        const SpaceTimeGrid& grid, std::size_t particles, std::uint64_t seed,
                                        std::size_t passes = 3);

/// The LQ feedback sampled on a policy grid.
PolicyField cs_lq_policy(const RiccatiSolution& sol, std::span<const double> mean_v, const SpaceTimeGrid& grid);

struct AffineFit {
  std::vector<double> slopes;  // one per fitted variable
  double intercept = 0.0;
  /// ||phi - fit|| / ||phi|| over the fitted nodes (0 when phi vanishes there).
  double relative_residual = 0.0;
};

/// Per-slice least-squares fit phi(t_j, x) ~ c + sum_i s_i x_{vars_i} over the
/// nodes inside the optional box [lo, hi] (first control component).
struct FitRegion {
  std::vector<double> lo, hi;
};
std::vector<AffineFit> affine_fit_check(const PolicyField& policy, const std::vector<std::size_t>& vars,
                                        const std::optional<FitRegion>& region = std::nullopt);
std::vector<AffineFit> affine_fit_check(const PolicyField& policy, std::size_t slice_var,
                                        const std::optional<FitRegion>& region = std::nullopt);

/// CSV `t,a`.
void write_riccati_csv(const RiccatiSolution& sol, const std::filesystem::path& path);

}  // namespace mfc
