#include "mfc/problems.hpp"

#include <algorithm>
#include <cmath>

namespace mfc {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

// ---------------------------------------------------------------- portfolio

void PortfolioParams::validate() const {
  require(horizon > 0.0, "portfolio: horizon must be positive");
  require(k1 > 0.0, "portfolio: k1 must be positive");
  require(k2 >= 0.0, "portfolio: k2 must be nonnegative");
  require(sigma >= 0.0, "portfolio: sigma must be nonnegative");
  require(q_min < q_max, "portfolio: q_min must be below q_max");
}

PortfolioProblem::PortfolioProblem(PortfolioParams params) : p_(params) { p_.validate(); }

ProxSpec PortfolioProblem::nonsmooth_cost() const { return p_.k2 > 0.0 ? ProxSpec::l1(p_.k2) : ProxSpec::none(); }

void PortfolioProblem::sample_initial(const CounterRng& rng, std::size_t index, std::span<double> x) const {
  x[0] = p_.s0;
  x[1] = p_.q_min + (p_.q_max - p_.q_min) * rng.uniform(rng_stream::kInitial, index, 0);
}

void PortfolioProblem::drift(double, std::span<const double>, std::span<const double> a, const EmpiricalMeasure& eta,
                             std::span<double> out) const {
  out[0] = p_.lambda * eta.control_mean()[0];
  out[1] = a[0];
}

void PortfolioProblem::diffusion(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                 std::span<double> out) const {
  out[0] = p_.sigma;
  out[1] = 0.0;
}

double PortfolioProblem::running_cost(double, std::span<const double> x, std::span<const double> a,
                                      const EmpiricalMeasure&) const {
  return a[0] * x[0] + x[1] * x[1] + p_.k1 * a[0] * a[0];
}

double PortfolioProblem::terminal_cost(std::span<const double> x, const EmpiricalMeasure&) const {
  return -x[1] * (x[0] - p_.gamma * x[1]);
}

void PortfolioProblem::drift_dx(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void PortfolioProblem::drift_da(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 1.0;
}

void PortfolioProblem::running_cost_dx(double, std::span<const double> x, std::span<const double> a,
                                       const EmpiricalMeasure&, std::span<double> out) const {
  out[0] = a[0];
  out[1] = 2.0 * x[1];
}

void PortfolioProblem::running_cost_da(double, std::span<const double> x, std::span<const double> a,
                                       const EmpiricalMeasure&, std::span<double> out) const {
  out[0] = x[0] + 2.0 * p_.k1 * a[0];
}

void PortfolioProblem::terminal_cost_dx(std::span<const double> x, const EmpiricalMeasure&,
                                        std::span<double> out) const {
  out[0] = -x[1];
  out[1] = -x[0] + 2.0 * p_.gamma * x[1];
}

void PortfolioProblem::drift_dmu(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                 std::span<const double>, std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void PortfolioProblem::drift_dnu(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                 std::span<const double>, std::span<const double>, std::span<double> out) const {
  out[0] = p_.lambda;
  out[1] = 0.0;
}

void PortfolioProblem::running_cost_dmu(double, std::span<const double>, std::span<const double>,
                                        const EmpiricalMeasure&, std::span<const double>, std::span<const double>,
                                        std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void PortfolioProblem::running_cost_dnu(double, std::span<const double>, std::span<const double>,
                                        const EmpiricalMeasure&, std::span<const double>, std::span<const double>,
                                        std::span<double> out) const {
  out[0] = 0.0;
}

void PortfolioProblem::terminal_cost_dmu(std::span<const double>, const EmpiricalMeasure&, std::span<const double>,
                                         std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void PortfolioProblem::nonlocal_state_source(double, const EmpiricalMeasure&, std::span<const double>,
                                             std::span<const double>, std::span<const double>,
                                             std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void PortfolioProblem::nonlocal_control_gradient(double, const EmpiricalMeasure& eta, std::span<const double> y,
                                                 std::span<const double>, std::span<const double>,
                                                 std::span<double> out) const {
  const double mean_us = eta.mean([&](std::size_t l) { return y[l * 2]; });
  std::fill(out.begin(), out.end(), p_.lambda * mean_us);
}

void PortfolioProblem::nonlocal_terminal(const EmpiricalMeasure&, std::span<const double>,
                                         std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

// ------------------------------------------------------------ Cucker-Smale

void CuckerSmaleParams::validate() const {
  require(horizon > 0.0, "cs2d: horizon must be positive");
  require(beta >= 0.0, "cs2d: beta must be nonnegative");
  require(gamma1 > 0.0, "cs2d: gamma1 must be positive");
  require(gamma2 >= 0.0, "cs2d: gamma2 must be nonnegative");
  require(sigma >= 0.0, "cs2d: sigma must be nonnegative");
  require(variance >= 0.0, "cs2d: variance must be nonnegative");
  require(weight1 >= 0.0 && weight1 <= 1.0, "cs2d: weight1 must lie in [0, 1]");
}

CuckerSmaleProblem::CuckerSmaleProblem(CuckerSmaleParams params) : p_(params) {
  p_.validate();
  integer_beta_ = p_.beta == std::floor(p_.beta) && p_.beta <= 64.0;
  beta_int_ = integer_beta_ ? static_cast<unsigned>(p_.beta) : 0;
}

ProxSpec CuckerSmaleProblem::nonsmooth_cost() const {
  return p_.gamma2 > 0.0 ? ProxSpec::l1(p_.gamma2) : ProxSpec::none();
}

void CuckerSmaleProblem::sample_initial(const CounterRng& rng, std::size_t index, std::span<double> x) const {
  const double u = rng.uniform(rng_stream::kInitial, index, 0);
  const double sd = std::sqrt(p_.variance);
  const double z0 = rng.normal(rng_stream::kInitial, index, 2);
  const double z1 = rng.normal(rng_stream::kInitial, index, 3);
  if (u < p_.weight1) {
    x[0] = p_.mean1_x + sd * z0;
    x[1] = p_.mean1_v + sd * z1;
  } else {
    x[0] = p_.mean2_x + sd * z0;
    x[1] = p_.mean2_v + sd * z1;
  }
}

double CuckerSmaleProblem::decay(double r2) const {
  if (!integer_beta_) return std::pow(1.0 + r2, -p_.beta);
  double base = 1.0 / (1.0 + r2), acc = 1.0;
  for (unsigned e = beta_int_; e; e >>= 1) {
    if (e & 1u) acc *= base;
    base *= base;
  }
  return acc;
}

double CuckerSmaleProblem::kernel(double x, double v, double xp, double vp) const {
  const double r = x - xp;
  return p_.coupling * (vp - v) * decay(r * r);
}

void CuckerSmaleProblem::kernel_gradient(double x, double v, double xp, double vp, double out[4]) const {
  const double r = x - xp;
  const double w = decay(r * r);
  const double dx = p_.coupling * (vp - v) * (-p_.beta) * 2.0 * r * w / (1.0 + r * r);
  out[0] = dx;
  out[1] = -p_.coupling * w;
  out[2] = -dx;
  out[3] = p_.coupling * w;
}

double CuckerSmaleProblem::mean_kernel(double x, double v, const EmpiricalMeasure& eta) const {
  if (p_.beta == 0.0) return p_.coupling * (eta.state_mean()[1] - v);
  const auto s = eta.states();
  double acc = 0.0;
  for (std::size_t l = 0; l < eta.size(); ++l) acc += kernel(x, v, s[2 * l], s[2 * l + 1]);
  return acc / static_cast<double>(eta.size());
}

void CuckerSmaleProblem::drift(double, std::span<const double> x, std::span<const double> a,
                               const EmpiricalMeasure& eta, std::span<double> out) const {
  out[0] = x[1];
  out[1] = mean_kernel(x[0], x[1], eta) + a[0];
}

void CuckerSmaleProblem::diffusion(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                   std::span<double> out) const {
  out[0] = 0.0;
  out[1] = p_.sigma;
}

double CuckerSmaleProblem::running_cost(double, std::span<const double> x, std::span<const double> a,
                                        const EmpiricalMeasure& eta) const {
  const double dv = x[1] - eta.state_mean()[1];
  return dv * dv + p_.gamma1 * a[0] * a[0];
}

double CuckerSmaleProblem::terminal_cost(std::span<const double> x, const EmpiricalMeasure& mu) const {
  const double dv = x[1] - mu.state_mean()[1];
  return dv * dv;
}

void CuckerSmaleProblem::drift_dx(double, std::span<const double> x, std::span<const double>,
                                  const EmpiricalMeasure& eta, std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 1.0;
  if (p_.beta == 0.0) {
    out[2] = 0.0;
    out[3] = -p_.coupling;
    return;
  }
  const auto s = eta.states();
  double gx = 0.0, gv = 0.0, g[4];
  for (std::size_t l = 0; l < eta.size(); ++l) {
    kernel_gradient(x[0], x[1], s[2 * l], s[2 * l + 1], g);
    gx += g[0];
    gv += g[1];
  }
  out[2] = gx / static_cast<double>(eta.size());
  out[3] = gv / static_cast<double>(eta.size());
}

void CuckerSmaleProblem::drift_da(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                  std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 1.0;
}

void CuckerSmaleProblem::running_cost_dx(double, std::span<const double> x, std::span<const double>,
                                         const EmpiricalMeasure& eta, std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 2.0 * (x[1] - eta.state_mean()[1]);
}

void CuckerSmaleProblem::running_cost_da(double, std::span<const double>, std::span<const double> a,
                                         const EmpiricalMeasure&, std::span<double> out) const {
  out[0] = 2.0 * p_.gamma1 * a[0];
}

void CuckerSmaleProblem::terminal_cost_dx(std::span<const double> x, const EmpiricalMeasure& mu,
                                          std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 2.0 * (x[1] - mu.state_mean()[1]);
}

void CuckerSmaleProblem::drift_dmu(double, std::span<const double> xc, std::span<const double>,
                                   const EmpiricalMeasure&, std::span<const double> x, std::span<const double>,
                                   std::span<double> out) const {
  double g[4];
  kernel_gradient(xc[0], xc[1], x[0], x[1], g);
  out[0] = 0.0;
  out[1] = 0.0;
  out[2] = g[2];
  out[3] = g[3];
}

void CuckerSmaleProblem::drift_dnu(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                                   std::span<const double>, std::span<const double>, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void CuckerSmaleProblem::running_cost_dmu(double, std::span<const double> xc, std::span<const double>,
                                          const EmpiricalMeasure& eta, std::span<const double>,
                                          std::span<const double>, std::span<double> out) const {
  out[0] = 0.0;
  out[1] = -2.0 * (xc[1] - eta.state_mean()[1]);
}

void CuckerSmaleProblem::running_cost_dnu(double, std::span<const double>, std::span<const double>,
                                          const EmpiricalMeasure&, std::span<const double>, std::span<const double>,
                                          std::span<double> out) const {
  out[0] = 0.0;
}

void CuckerSmaleProblem::terminal_cost_dmu(std::span<const double> xc, const EmpiricalMeasure& mu,
                                           std::span<const double>, std::span<double> out) const {
  out[0] = 0.0;
  out[1] = -2.0 * (xc[1] - mu.state_mean()[1]);
}

void CuckerSmaleProblem::nonlocal_state_source(double, const EmpiricalMeasure& eta, std::span<const double> y,
                                               std::span<const double> eval_x, std::span<const double>,
                                               std::span<double> out) const {
  // The running-cost kernel averages to -2 (E[v] - E[v]) = 0.
  const std::size_t points = eval_x.size() / 2;
  const std::size_t np = eta.size();
  if (p_.beta == 0.0) {
    const double mean_y2 = eta.mean([&](std::size_t l) { return y[2 * l + 1]; });
    for (std::size_t p = 0; p < points; ++p) {
      out[2 * p] = 0.0;
      out[2 * p + 1] = p_.coupling * mean_y2;
    }
    return;
  }
  const auto s = eta.states();
  parallel_for(points, [&](std::size_t p) {
    const double x = eval_x[2 * p], v = eval_x[2 * p + 1];
    double ax = 0.0, av = 0.0, g[4];
    for (std::size_t l = 0; l < np; ++l) {
      kernel_gradient(s[2 * l], s[2 * l + 1], x, v, g);
      ax += g[2] * y[2 * l + 1];
      av += g[3] * y[2 * l + 1];
    }
    out[2 * p] = ax / static_cast<double>(np);
    out[2 * p + 1] = av / static_cast<double>(np);
  });
}

void CuckerSmaleProblem::nonlocal_control_gradient(double, const EmpiricalMeasure&, std::span<const double>,
                                                   std::span<const double>, std::span<const double>,
                                                   std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

void CuckerSmaleProblem::nonlocal_terminal(const EmpiricalMeasure&, std::span<const double>,
                                           std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
}

}  // namespace mfc
