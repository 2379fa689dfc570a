#include "mfc/problem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

namespace mfc {

EmpiricalMeasure::EmpiricalMeasure(std::span<const double> states, std::span<const double> controls, Dims dims)
    : states_(states), controls_(controls), dims_(dims), n_(dims.state ? states.size() / dims.state : 0) {
  if (n_ == 0) throw Error("empirical measure needs at least one point");
  if (states.size() != n_ * dims.state) throw Error("empirical measure: state array size is not N*d");
  if (!controls.empty() && controls.size() != n_ * dims.control)
    throw Error("empirical measure: control array size is not N*k");

  state_mean_.assign(dims.state, 0.0);
  for (std::size_t i = 0; i < dims.state; ++i)
    state_mean_[i] = mean([&](std::size_t l) { return states_[l * dims_.state + i]; });
  control_mean_.assign(dims.control, 0.0);
  if (!controls.empty())
    for (std::size_t i = 0; i < dims.control; ++i)
      control_mean_[i] = mean([&](std::size_t l) { return controls_[l * dims_.control + i]; });
}

void MfcProblem::diffusion_dx(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                              std::span<double>) const {
  throw MissingCallback(name() + ": diffusion_dx not provided");
}
void MfcProblem::diffusion_da(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                              std::span<double>) const {
  throw MissingCallback(name() + ": diffusion_da not provided");
}
void MfcProblem::diffusion_dmu(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                               std::span<const double>, std::span<const double>, std::span<double>) const {
  throw MissingCallback(name() + ": diffusion_dmu not provided");
}
void MfcProblem::diffusion_dnu(double, std::span<const double>, std::span<const double>, const EmpiricalMeasure&,
                               std::span<const double>, std::span<const double>, std::span<double>) const {
  throw MissingCallback(name() + ": diffusion_dnu not provided");
}

void MfcProblem::nonlocal_state_source(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                       std::span<const double> eval_x, std::span<const double> eval_a,
                                       std::span<double> out) const {
  const auto [d, k, n] = dims();
  const std::size_t points = eval_x.size() / d;
  const std::size_t np = eta.size();
  parallel_for(points, [&](std::size_t p) {
    const auto x = eval_x.subspan(p * d, d);
    const auto a = eval_a.subspan(p * k, k);
    std::vector<double> jac(d * d), grad(d), acc(d, 0.0);
    for (std::size_t l = 0; l < np; ++l) {
      drift_dmu(t, eta.state(l), eta.control(l), eta, x, a, jac);
      running_cost_dmu(t, eta.state(l), eta.control(l), eta, x, a, grad);
      const auto yl = y.subspan(l * d, d);
      for (std::size_t j = 0; j < d; ++j) {
        double s = grad[j];
        for (std::size_t i = 0; i < d; ++i) s += jac[i * d + j] * yl[i];
        acc[j] += s;
      }
    }
    for (std::size_t j = 0; j < d; ++j) out[p * d + j] = acc[j] / static_cast<double>(np);
  });
}

void MfcProblem::nonlocal_control_gradient(double t, const EmpiricalMeasure& eta, std::span<const double> y,
                                           std::span<const double> eval_x, std::span<const double> eval_a,
                                           std::span<double> out) const {
  const auto [d, k, n] = dims();
  const std::size_t points = eval_x.size() / d;
  const std::size_t np = eta.size();
  parallel_for(points, [&](std::size_t p) {
    const auto x = eval_x.subspan(p * d, d);
    const auto a = eval_a.subspan(p * k, k);
    std::vector<double> jac(d * k), grad(k), acc(k, 0.0);
    for (std::size_t l = 0; l < np; ++l) {
      drift_dnu(t, eta.state(l), eta.control(l), eta, x, a, jac);
      running_cost_dnu(t, eta.state(l), eta.control(l), eta, x, a, grad);
      const auto yl = y.subspan(l * d, d);
      for (std::size_t j = 0; j < k; ++j) {
        double s = grad[j];
        for (std::size_t i = 0; i < d; ++i) s += jac[i * k + j] * yl[i];
        acc[j] += s;
      }
    }
    for (std::size_t j = 0; j < k; ++j) out[p * k + j] = acc[j] / static_cast<double>(np);
  });
}

void MfcProblem::nonlocal_terminal(const EmpiricalMeasure& mu, std::span<const double> eval_x,
                                   std::span<double> out) const {
  const std::size_t d = dims().state;
  const std::size_t points = eval_x.size() / d;
  const std::size_t np = mu.size();
  parallel_for(points, [&](std::size_t p) {
    const auto x = eval_x.subspan(p * d, d);
    std::vector<double> grad(d), acc(d, 0.0);
    for (std::size_t l = 0; l < np; ++l) {
      terminal_cost_dmu(mu.state(l), mu, x, grad);
      for (std::size_t j = 0; j < d; ++j) acc[j] += grad[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[p * d + j] = acc[j] / static_cast<double>(np);
  });
}

void MfcProblem::boundary_value(double, std::span<const double>, std::span<const double> terminal,
                                std::span<double> out) const {
  std::copy(terminal.begin(), terminal.end(), out.begin());
}

bool DerivativeReport::all_clear() const {
  return std::none_of(checks.begin(), checks.end(), [](const DerivativeCheck& c) { return c.flagged; });
}

const DerivativeCheck& DerivativeReport::at(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw Error("no derivative check named " + name);
}

namespace {

std::string format_point(std::span<const double> v) {
  std::ostringstream os;
  os.precision(6);
  os << "(";
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ")";
  return os.str();
}

// Vector-valued function of a flat input vector.
using VecFn = std::function<void(std::span<const double>, std::span<double>)>;

class Checker {
 public:
  explicit Checker(double step) : step_(step) {}

  /// Compares analytic (rows x cols, (r, c) = d out_r / d in_c, scaled by
  /// `scale`) against central differences of fn at `input`.
  void compare(const std::string& name, const VecFn& fn, std::span<const double> input,
               std::span<const double> analytic, std::size_t rows, double scale = 1.0) {
    const std::size_t cols = input.size();
    std::vector<double> xp(input.begin(), input.end()), xm(xp), fp(rows), fm(rows);
    double worst = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      xp = std::vector<double>(input.begin(), input.end());
      xm = xp;
      xp[c] += step_;
      xm[c] -= step_;
      fn(xp, fp);
      fn(xm, fm);
      for (std::size_t r = 0; r < rows; ++r) {
        ensure_finite(name, fp[r], xp);
        ensure_finite(name, fm[r], xm);
        const double fd = (fp[r] - fm[r]) / (2.0 * step_);
        const double an = analytic[r * cols + c] * scale;
        ensure_finite(name, an, input);
        worst = std::max(worst, std::abs(an - fd) / (1.0 + std::abs(an)));
      }
    }
    auto& entry = find(name);
    entry.max_rel_error = std::max(entry.max_rel_error, worst);
    entry.flagged = entry.max_rel_error > kDerivativeFlagTolerance;
  }

  DerivativeReport report;

 private:
  static void ensure_finite(const std::string& name, double v, std::span<const double> input) {
    if (!std::isfinite(v))
      throw Error("validate_derivatives: non-finite value from " + name + " at input " + format_point(input));
  }

  DerivativeCheck& find(const std::string& name) {
    for (auto& c : report.checks)
      if (c.name == name) return c;
    report.checks.push_back({name, 0.0, false});
    return report.checks.back();
  }

  double step_;
};

}  // namespace

DerivativeReport validate_derivatives(const MfcProblem& problem, std::size_t samples, double step, std::uint64_t seed) {
  if (!(step > 0.0 && step <= 1e-3)) throw ConfigError("validate_derivatives: step must lie in (0, 1e-3]");
  if (samples == 0) throw ConfigError("validate_derivatives: samples must be positive");

  const auto [d, k, n] = problem.dims();
  const double horizon = problem.horizon();
  const CounterRng rng(seed);
  const bool sigma_x = problem.diffusion_state_dependent();
  constexpr std::size_t kMeasurePoints = 6;

  Checker checker(step);
  for (std::size_t s = 0; s < samples; ++s) {
    std::uint64_t counter = 0;
    auto unif = [&](double lo, double hi) {
      return lo + (hi - lo) * rng.uniform(rng_stream::kValidation, s, counter++);
    };

    // Random empirical measure around initial draws.
    std::vector<double> mx(kMeasurePoints * d), ma(kMeasurePoints * k);
    for (std::size_t l = 0; l < kMeasurePoints; ++l) {
      problem.sample_initial(CounterRng(CounterRng::derive(seed, s)), l, std::span(mx).subspan(l * d, d));
      for (std::size_t i = 0; i < d; ++i) mx[l * d + i] += unif(-0.5, 0.5);
      for (std::size_t i = 0; i < k; ++i) ma[l * k + i] = unif(-1.0, 1.0);
    }
    const EmpiricalMeasure eta(mx, ma, {d, k, n});

    std::vector<double> x(d), a(k);
    problem.sample_initial(CounterRng(CounterRng::derive(seed, s + samples)), kMeasurePoints, x);
    for (auto& v : x) v += unif(-0.5, 0.5);
    for (auto& v : a) v = unif(-1.0, 1.0);
    const double t = unif(0.0, horizon);

    // Pointwise derivatives in x.
    {
      std::vector<double> jac(d * d), grad(d);
      problem.drift_dx(t, x, a, eta, jac);
      checker.compare("drift_dx", [&](std::span<const double> xi, std::span<double> o) { problem.drift(t, xi, a, eta, o); },
                      x, jac, d);
      problem.running_cost_dx(t, x, a, eta, grad);
      checker.compare("running_cost_dx",
                      [&](std::span<const double> xi, std::span<double> o) { o[0] = problem.running_cost(t, xi, a, eta); },
                      x, grad, 1);
      problem.terminal_cost_dx(x, eta, grad);
      checker.compare("terminal_cost_dx",
                      [&](std::span<const double> xi, std::span<double> o) { o[0] = problem.terminal_cost(xi, eta); }, x,
                      grad, 1);
    }
    // Pointwise derivatives in a.
    {
      std::vector<double> jac(d * k), grad(k);
      problem.drift_da(t, x, a, eta, jac);
      checker.compare("drift_da", [&](std::span<const double> ai, std::span<double> o) { problem.drift(t, x, ai, eta, o); },
                      a, jac, d);
      problem.running_cost_da(t, x, a, eta, grad);
      checker.compare("running_cost_da",
                      [&](std::span<const double> ai, std::span<double> o) { o[0] = problem.running_cost(t, x, ai, eta); },
                      a, grad, 1);
    }
    if (sigma_x) {
      std::vector<double> jx(d * n * d), ja(d * n * k);
      problem.diffusion_dx(t, x, a, eta, jx);
      checker.compare("diffusion_dx",
                      [&](std::span<const double> xi, std::span<double> o) { problem.diffusion(t, xi, a, eta, o); }, x,
                      jx, d * n);
      problem.diffusion_da(t, x, a, eta, ja);
      checker.compare("diffusion_da",
                      [&](std::span<const double> ai, std::span<double> o) { problem.diffusion(t, x, ai, eta, o); }, a,
                      ja, d * n);
    }

    // Measure kernels: move particle l of the measure.
    const std::size_t l = s % kMeasurePoints;
    const double inv_n = 1.0 / static_cast<double>(kMeasurePoints);
    auto with_state = [&](std::span<const double> xl) {
      std::vector<double> moved(mx);
      std::copy(xl.begin(), xl.end(), moved.begin() + static_cast<std::ptrdiff_t>(l * d));
      return moved;
    };
    auto with_control = [&](std::span<const double> al) {
      std::vector<double> moved(ma);
      std::copy(al.begin(), al.end(), moved.begin() + static_cast<std::ptrdiff_t>(l * k));
      return moved;
    };
    const auto xl = eta.state(l);
    const auto al = eta.control(l);
    {
      std::vector<double> jac(d * d), grad(d);
      problem.drift_dmu(t, x, a, eta, xl, al, jac);
      checker.compare(
          "drift_dmu",
          [&](std::span<const double> xi, std::span<double> o) {
            const auto moved = with_state(xi);
            problem.drift(t, x, a, EmpiricalMeasure(moved, ma, {d, k, n}), o);
          },
          xl, jac, d, inv_n);
      problem.running_cost_dmu(t, x, a, eta, xl, al, grad);
      checker.compare(
          "running_cost_dmu",
          [&](std::span<const double> xi, std::span<double> o) {
            const auto moved = with_state(xi);
            o[0] = problem.running_cost(t, x, a, EmpiricalMeasure(moved, ma, {d, k, n}));
          },
          xl, grad, 1, inv_n);
      problem.terminal_cost_dmu(x, eta, xl, grad);
      checker.compare(
          "terminal_cost_dmu",
          [&](std::span<const double> xi, std::span<double> o) {
            const auto moved = with_state(xi);
            o[0] = problem.terminal_cost(x, EmpiricalMeasure(moved, ma, {d, k, n}));
          },
          xl, grad, 1, inv_n);
    }
    {
      std::vector<double> jac(d * k), grad(k);
      problem.drift_dnu(t, x, a, eta, xl, al, jac);
      checker.compare(
          "drift_dnu",
          [&](std::span<const double> ai, std::span<double> o) {
            const auto moved = with_control(ai);
            problem.drift(t, x, a, EmpiricalMeasure(mx, moved, {d, k, n}), o);
          },
          al, jac, d, inv_n);
      problem.running_cost_dnu(t, x, a, eta, xl, al, grad);
      checker.compare(
          "running_cost_dnu",
          [&](std::span<const double> ai, std::span<double> o) {
            const auto moved = with_control(ai);
            o[0] = problem.running_cost(t, x, a, EmpiricalMeasure(mx, moved, {d, k, n}));
          },
          al, grad, 1, inv_n);
    }
    if (sigma_x) {
      std::vector<double> jx(d * n * d), ja(d * n * k);
      problem.diffusion_dmu(t, x, a, eta, xl, al, jx);
      checker.compare(
          "diffusion_dmu",
          [&](std::span<const double> xi, std::span<double> o) {
            const auto moved = with_state(xi);
            problem.diffusion(t, x, a, EmpiricalMeasure(moved, ma, {d, k, n}), o);
          },
          xl, jx, d * n, inv_n);
      problem.diffusion_dnu(t, x, a, eta, xl, al, ja);
      checker.compare(
          "diffusion_dnu",
          [&](std::span<const double> ai, std::span<double> o) {
            const auto moved = with_control(ai);
            problem.diffusion(t, x, a, EmpiricalMeasure(mx, moved, {d, k, n}), o);
          },
          al, ja, d * n, inv_n);
    }
  }
  return checker.report;
}

}  // namespace mfc
