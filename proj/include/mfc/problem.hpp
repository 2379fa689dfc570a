#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mfc/parallel.hpp"
#include "mfc/prox.hpp"
#include "mfc/rng.hpp"

namespace mfc {

struct Dims {
  std::size_t state = 1;    // d
  std::size_t control = 1;  // k
  std::size_t noise = 1;    // n
};

/// Uniform atomic measure over N (state, control) pairs. Non-owning views of
/// the point arrays (row-major, N x d and N x k); the first moments are
/// computed once at construction.
class EmpiricalMeasure {
 public:
  EmpiricalMeasure(std::span<const double> states, std::span<const double> controls, Dims dims);

  std::size_t size() const { return n_; }
  const Dims& dims() const { return dims_; }

  std::span<const double> state(std::size_t l) const { return states_.subspan(l * dims_.state, dims_.state); }
  std::span<const double> control(std::size_t l) const {
    return controls_.subspan(l * dims_.control, dims_.control);
  }
  std::span<const double> states() const { return states_; }
  std::span<const double> controls() const { return controls_; }

  const std::vector<double>& state_mean() const { return state_mean_; }
  const std::vector<double>& control_mean() const { return control_mean_; }

  /// Mean of fn(l) over particles, reduced in fixed chunk order.
  template <typename F>
  double mean(F&& fn) const {
    return chunked_sum(n_, fn) / static_cast<double>(n_);
  }

 private:
  std::span<const double> states_;
  std::span<const double> controls_;
  Dims dims_;
  std::size_t n_;
  std::vector<double> state_mean_;
  std::vector<double> control_mean_;
};

/// Thrown by optional callbacks that a problem does not provide.
class MissingCallback : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// A mean-field control problem
///
///   dX = b(t, X, a, eta) dt + sigma(t, X, a, eta) dW,   X_0 ~ xi,
///   J  = E[ int_0^T f(t, X, a, eta) + l(a) dt + g(X_T, mu_T) ],
///
/// where eta is the joint law of (X_t, a_t) and mu_T the law of X_T. Laws are
/// always empirical measures.
///
/// Array conventions (all row-major):
///   drift_dx      d x d   (i, j) = d b_i / d x_j
///   drift_da      d x k   (i, j) = d b_i / d a_j
///   diffusion     d x n
///   diffusion_dx  (d*n) x d, row r*n + c holds d sigma_rc / d x_i in column i
///   diffusion_da  (d*n) x k
///
/// Measure derivatives are kernels of (carrier, evaluation) points: for
/// drift_dmu(t, xc, ac, eta, x, a, out), out(i, j) is the j-th component of
/// the L-derivative of eta -> b_i(t, xc, ac, eta) with respect to its state
/// marginal, evaluated at the point (x, a). Under an empirical measure this is
/// N times the derivative of b_i(t, xc, ac, eta) with respect to the state of
/// the particle sitting at (x, a).
class MfcProblem {
 public:
  virtual ~MfcProblem() = default;

  virtual std::string name() const = 0;
  virtual Dims dims() const = 0;
  virtual double horizon() const = 0;
  virtual ProxSpec nonsmooth_cost() const { return ProxSpec::none(); }

  /// When false, sigma depends on t only and the gradient-of-u source terms
  /// vanish; the sigma derivative callbacks are then never called.
  virtual bool diffusion_state_dependent() const { return false; }

  /// Draw of the initial state for particle `index`.
  virtual void sample_initial(const CounterRng& rng, std::size_t index, std::span<double> x) const = 0;

  // Coefficients.
  virtual void drift(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                     std::span<double> out) const = 0;
  virtual void diffusion(double t, std::span<const double> x, std::span<const double> a,
                         const EmpiricalMeasure& eta, std::span<double> out) const = 0;
  virtual double running_cost(double t, std::span<const double> x, std::span<const double> a,
                              const EmpiricalMeasure& eta) const = 0;
  virtual double terminal_cost(std::span<const double> x, const EmpiricalMeasure& mu) const = 0;

  // Pointwise derivatives.
  virtual void drift_dx(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                        std::span<double> out) const = 0;
  virtual void drift_da(double t, std::span<const double> x, std::span<const double> a, const EmpiricalMeasure& eta,
                        std::span<double> out) const = 0;
  virtual void running_cost_dx(double t, std::span<const double> x, std::span<const double> a,
                               const EmpiricalMeasure& eta, std::span<double> out) const = 0;
  virtual void running_cost_da(double t, std::span<const double> x, std::span<const double> a,
                               const EmpiricalMeasure& eta, std::span<double> out) const = 0;
  virtual void terminal_cost_dx(std::span<const double> x, const EmpiricalMeasure& mu,
                                std::span<double> out) const = 0;

  // Measure-derivative kernels.
  virtual void drift_dmu(double t, std::span<const double> xc, std::span<const double> ac,
                         const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                         std::span<double> out) const = 0;
  virtual void drift_dnu(double t, std::span<const double> xc, std::span<const double> ac,
                         const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                         std::span<double> out) const = 0;
  virtual void running_cost_dmu(double t, std::span<const double> xc, std::span<const double> ac,
                                const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                                std::span<double> out) const = 0;
  virtual void running_cost_dnu(double t, std::span<const double> xc, std::span<const double> ac,
                                const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                                std::span<double> out) const = 0;
  virtual void terminal_cost_dmu(std::span<const double> xc, const EmpiricalMeasure& mu,
                                 std::span<const double> x, std::span<double> out) const = 0;

  // Optional sigma derivatives, required only for state-dependent diffusion.
  virtual void diffusion_dx(double t, std::span<const double> x, std::span<const double> a,
                            const EmpiricalMeasure& eta, std::span<double> out) const;
  virtual void diffusion_da(double t, std::span<const double> x, std::span<const double> a,
                            const EmpiricalMeasure& eta, std::span<double> out) const;
  virtual void diffusion_dmu(double t, std::span<const double> xc, std::span<const double> ac,
                             const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                             std::span<double> out) const;
  virtual void diffusion_dnu(double t, std::span<const double> xc, std::span<const double> ac,
                             const EmpiricalMeasure& eta, std::span<const double> x, std::span<const double> a,
                             std::span<double> out) const;

  // Particle averages of the measure kernels, contracted against adjoint
  // values carried by the particles. The defaults loop over every
  // (evaluation point, particle) pair; problems with structured kernels
  // override them with closed forms.

  /// out[k] = mean_l [ drift_dmu(X^l, a^l; x_k, a_k)^T y^l + running_cost_dmu(X^l, a^l; x_k, a_k) ]
  /// y: N x d adjoint values at the particles; eval_x: K x d; eval_a: K x k; out: K x d.
  virtual void nonlocal_state_source(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                     std::span<const double> eval_x, std::span<const double> eval_a,
                                     std::span<double> out) const;

  /// out[k] = mean_l [ drift_dnu(X^l, a^l; x_k, a_k)^T y^l + running_cost_dnu(X^l, a^l; x_k, a_k) ]
  /// out: K x k.
  virtual void nonlocal_control_gradient(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                         std::span<const double> eval_x, std::span<const double> eval_a,
                                         std::span<double> out) const;

  /// out[k] = mean_l terminal_cost_dmu(X^l; x_k). out: K x d.
  virtual void nonlocal_terminal(const EmpiricalMeasure& mu, std::span<const double> eval_x,
                                 std::span<double> out) const;

  /// Dirichlet data on the truncated domain boundary; defaults to the
  /// terminal condition.
  virtual void boundary_value(double t, std::span<const double> x, std::span<const double> terminal,
                              std::span<double> out) const;
};

/// Worst-case finite-difference mismatch of one derivative callback.
struct DerivativeCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool flagged = false;
};

struct DerivativeReport {
  std::vector<DerivativeCheck> checks;
  bool all_clear() const;
  const DerivativeCheck& at(const std::string& name) const;
};

/// Compares every declared derivative (pointwise and measure kernels) with
/// central differences of its base function at `samples` random points.
/// Relative error is |D - FD| / (1 + |D|); anything above 1e-4 is flagged.
/// Measure kernels are checked by moving one particle of a random empirical
/// measure: d/dX^l F(eta) = kernel(.; X^l) / N.
DerivativeReport validate_derivatives(const MfcProblem& problem, std::size_t samples, double step, std::uint64_t seed);

inline constexpr double kDerivativeFlagTolerance = 1e-4;

}  // namespace mfc
