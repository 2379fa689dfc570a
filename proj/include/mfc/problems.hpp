#pragma once

#include <memory>
#include <string>

#include "mfc/problem.hpp"

namespace mfc {

/// Optimal execution with permanent price impact. State (S, Q), control the
/// trading rate.
struct PortfolioParams {
  double horizon = 1.0;
  double s0 = 2.0;
  double lambda = 0.5;
  double sigma = 0.7;
  double gamma = 0.5;
  double k1 = 1.0;
  double k2 = 0.0;
  double q_min = 1.0;
  double q_max = 2.0;

  void validate() const;
  bool operator==(const PortfolioParams&) const = default;
};

class PortfolioProblem : public MfcProblem {
 public:
  explicit PortfolioProblem(PortfolioParams params);

  const PortfolioParams& params() const { return p_; }

  std::string name() const override { return "portfolio"; }
  Dims dims() const override { return {2, 1, 1}; }
  double horizon() const override { return p_.horizon; }
  ProxSpec nonsmooth_cost() const override;
  void sample_initial(const CounterRng& rng, std::size_t index, std::span<double> x) const override;

  void drift(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
             std::span<double> out) const override;
  void diffusion(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                 std::span<double> out) const override;
  double running_cost(double t, std::span<const double> x, std::span<const double> a,
                      const EmpiricalMeasure& eta) const override;
  double terminal_cost(std::span<const double> x, const EmpiricalMeasure& mu) const override;

  void drift_dx(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                std::span<double> out) const override;
  void drift_da(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                std::span<double> out) const override;
  void running_cost_dx(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                       std::span<double> out) const override;
  void running_cost_da(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                       std::span<double> out) const override;
  void terminal_cost_dx(std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) const override;

  void drift_dmu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                 std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void drift_dnu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                 std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void running_cost_dmu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                        std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void running_cost_dnu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                        std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void terminal_cost_dmu(std::span<const double> xc, const EmpiricalMeasure& mu, std::span<const double> x,
                         std::span<double> out) const override;

  // Only E[a] enters (through the S drift), so the state kernels vanish and
  // the control kernel is the constant lambda on the S slot.
  void nonlocal_state_source(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                             std::span<const double> eval_x, std::span<const double> eval_a,
                             std::span<double> out) const override;
  void nonlocal_control_gradient(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                 std::span<const double> eval_x, std::span<const double> eval_a,
                                 std::span<double> out) const override;
  void nonlocal_terminal(const EmpiricalMeasure& mu, std::span<const double> eval_x,
                         std::span<double> out) const override;

 private:
  PortfolioParams p_;
};

/// Cucker-Smale flocking with scalar position x and velocity v; the control
/// acts on the velocity.
struct CuckerSmaleParams {
  double horizon = 1.0;
  double coupling = 1.0;  // K
  double beta = 0.0;
  double sigma = 0.1;
  double gamma1 = 0.1;
  double gamma2 = 0.0;
  // Initial law: equal mixture of two Gaussians with isotropic variance.
  double mean1_x = 1.2, mean1_v = 1.8;
  double mean2_x = 1.8, mean2_v = 1.2;
  double weight1 = 0.5;
  double variance = 0.01;

  void validate() const;
  bool operator==(const CuckerSmaleParams&) const = default;
};

class CuckerSmaleProblem : public MfcProblem {
 public:
  explicit CuckerSmaleProblem(CuckerSmaleParams params);

  const CuckerSmaleParams& params() const { return p_; }

  /// kappa(x, v; x', v') = K (v' - v) / (1 + |x - x'|^2)^beta
  double kernel(double x, double v, double xp, double vp) const;
  /// Gradient of kappa in (x, v, x', v').
  void kernel_gradient(double x, double v, double xp, double vp, double out[4]) const;
  /// Particle average of kappa at (x, v).
  double mean_kernel(double x, double v, const EmpiricalMeasure& eta) const;

  std::string name() const override { return "cs2d"; }
  Dims dims() const override { return {2, 1, 1}; }
  double horizon() const override { return p_.horizon; }
  ProxSpec nonsmooth_cost() const override;
  void sample_initial(const CounterRng& rng, std::size_t index, std::span<double> x) const override;

  void drift(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
             std::span<double> out) const override;
  void diffusion(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                 std::span<double> out) const override;
  double running_cost(double t, std::span<const double> x, std::span<const double> a,
                      const EmpiricalMeasure& eta) const override;
  double terminal_cost(std::span<const double> x, const EmpiricalMeasure& mu) const override;

  void drift_dx(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                std::span<double> out) const override;
  void drift_da(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                std::span<double> out) const override;
  void running_cost_dx(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                       std::span<double> out) const override;
  void running_cost_da(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                       std::span<double> out) const override;
  void terminal_cost_dx(std::span<const double> x, const EmpiricalMeasure& mu, std::span<double> out) const override;

  void drift_dmu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                 std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void drift_dnu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                 std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void running_cost_dmu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                        std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void running_cost_dnu(double t, std::span<const double> xc, std::span<const double> ac, const EmpiricalMeasure& eta,
                        std::span<const double> x, std::span<const double> a, std::span<double> out) const override;
  void terminal_cost_dmu(std::span<const double> xc, const EmpiricalMeasure& mu, std::span<const double> x,
                         std::span<double> out) const override;

  void nonlocal_state_source(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                             std::span<const double> eval_x, std::span<const double> eval_a,
                             std::span<double> out) const override;
  void nonlocal_control_gradient(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                 std::span<const double> eval_x, std::span<const double> eval_a,
                                 std::span<double> out) const override;
  void nonlocal_terminal(const EmpiricalMeasure& mu, std::span<const double> eval_x,
                         std::span<double> out) const override;

 private:
  /// (1 + r2)^(-beta), with a multiplication chain for integer beta.
  double decay(double r2) const;

  CuckerSmaleParams p_;
  bool integer_beta_;
  unsigned beta_int_;
};

}  // namespace mfc
