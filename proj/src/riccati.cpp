#include "mfc/riccati.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mfc/particles.hpp"

namespace mfc {

double RiccatiSolution::at(double t) const {
  if (!(t >= -1e-12 && t <= horizon + 1e-12)) throw Error("riccati: time outside [0, T]");
  const double s = std::clamp(t, 0.0, horizon) / dt;
  const std::size_t i = std::min(static_cast<std::size_t>(s), a.size() - 2);
  const double w = s - static_cast<double>(i);
  return (1.0 - w) * a[i] + w * a[i + 1];
}

double RiccatiSolution::max_residual() const {
  double worst = 0.0;
  // Fourth-order central difference so the check resolves the RK4 accuracy.
  for (std::size_t i = 2; i + 2 < a.size(); ++i) {
    const double da = (a[i - 2] - 8.0 * a[i - 1] + 8.0 * a[i + 1] - a[i + 2]) / (12.0 * dt);
    const double r = da - 2.0 * coupling * a[i] - a[i] * a[i] / (2.0 * gamma1) + 2.0;
    worst = std::max(worst, std::abs(r));
  }
  return worst;
}

RiccatiSolution solve_cs_riccati(double coupling, double gamma1, double horizon, double dt_ode) {
  if (!(gamma1 > 0.0)) throw ConfigError("riccati: gamma1 must be positive");
  if (!(horizon > 0.0)) throw ConfigError("riccati: horizon must be positive");
  if (!(dt_ode > 0.0 && dt_ode <= 1e-3)) throw ConfigError("riccati: dt_ode must lie in (0, 1e-3]");
  const std::size_t steps = static_cast<std::size_t>(std::ceil(horizon / dt_ode - 1e-9));
  RiccatiSolution sol{coupling, gamma1, horizon, horizon / static_cast<double>(steps), {}};
  sol.a.assign(steps + 1, 0.0);
  // a' = rhs(a); integrate from T downwards with step -dt.
  auto rhs = [&](double a) { return 2.0 * coupling * a + a * a / (2.0 * gamma1) - 2.0; };
  const double h = -sol.dt;
  double a = 2.0;
  sol.a[steps] = a;
  for (std::size_t i = steps; i-- > 0;) {
    const double k1 = rhs(a);
    const double k2 = rhs(a + 0.5 * h * k1);
    const double k3 = rhs(a + 0.5 * h * k2);
    const double k4 = rhs(a + h * k3);
    a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!std::isfinite(a) || std::abs(a) > kRiccatiBlowUp) {
      std::ostringstream os;
      os << "riccati: solution blows up near t = " << sol.time(i);
      throw Error(os.str());
    }
    sol.a[i] = a;
  }
  return sol;
}

double cs_lq_feedback(const RiccatiSolution& sol, std::span<const double> mean_v, double t, double, double v) {
  if (mean_v.size() < 2) throw Error("cs_lq_feedback: need at least two mean samples");
  if (!(t >= -1e-12 && t <= sol.horizon + 1e-12)) throw Error("cs_lq_feedback: time outside [0, T]");
  const double step = sol.horizon / static_cast<double>(mean_v.size() - 1);
  const double s = std::clamp(t, 0.0, sol.horizon) / step;
  const std::size_t i = std::min(static_cast<std::size_t>(s), mean_v.size() - 2);
  const double w = s - static_cast<double>(i);
  const double m = (1.0 - w) * mean_v[i] + w * mean_v[i + 1];
  return -sol.at(t) / (2.0 * sol.gamma1) * (v - m);
}

PolicyField cs_lq_policy(const RiccatiSolution& sol, std::span<const double> mean_v, const SpaceTimeGrid& grid) {
  if (grid.dim() != 2) throw Error("cs_lq_policy: grid must be two-dimensional");
  PolicyField policy(grid, 1);
  std::vector<double> x(2);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j)
    for (std::size_t p = 0; p < grid.node_count(); ++p) {
      grid.coordinates(p, x);
      policy.at(j, p)[0] = cs_lq_feedback(sol, mean_v, grid.time(j), x[0], x[1]);
    }
  return policy;
}

std::vector<double> cs_lq_mean_velocity(const CuckerSmaleProblem& problem, const RiccatiSolution& sol,
                                        const SpaceTimeGrid& grid, std::size_t particles, std::uint64_t seed,
                                        std::size_t passes) {
  const auto& p = problem.params();
  std::vector<double> mean_v(grid.time_steps() + 1, p.weight1 * p.mean1_v + (1.0 - p.weight1) * p.mean2_v);
  for (std::size_t pass = 0; pass < std::max<std::size_t>(passes, 1); ++pass) {
    const PolicyField policy = cs_lq_policy(sol, mean_v, grid);
    const auto ens = simulate(problem, policy, particles, grid.time_steps(), seed);
    for (std::size_t j = 0; j <= grid.time_steps(); ++j) mean_v[j] = ens.measure(j).state_mean()[1];
  }
  return mean_v;
}

std::vector<AffineFit> affine_fit_check(const PolicyField& policy, const std::vector<std::size_t>& vars,
                                        const std::optional<FitRegion>& region) {
  const auto& grid = policy.grid();
  const std::size_t d = grid.dim();
  for (auto v : vars)
    if (v >= d) throw Error("affine_fit_check: variable index out of range");
  std::vector<std::size_t> nodes;
  std::vector<double> x(d);
  for (std::size_t p = 0; p < grid.node_count(); ++p) {
    grid.coordinates(p, x);
    bool inside = true;
    if (region)
      for (std::size_t i = 0; i < d; ++i)
        inside = inside && x[i] >= region->lo[i] - 1e-12 && x[i] <= region->hi[i] + 1e-12;
    if (inside) nodes.push_back(p);
  }
  if (nodes.size() < vars.size() + 1) throw Error("affine_fit_check: too few nodes in the fit region");

  const Eigen::Index rows = static_cast<Eigen::Index>(nodes.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(vars.size() + 1);
  Eigen::MatrixXd A(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    grid.coordinates(nodes[static_cast<std::size_t>(r)], x);
    A(r, 0) = 1.0;
    for (std::size_t c = 0; c < vars.size(); ++c) A(r, static_cast<Eigen::Index>(c + 1)) = x[vars[c]];
  }
  const auto qr = A.colPivHouseholderQr();

  std::vector<AffineFit> fits;
  const std::size_t k = policy.components();
  for (std::size_t j = 0; j <= grid.time_steps(); ++j) {
    Eigen::VectorXd b(rows);
    for (Eigen::Index r = 0; r < rows; ++r) b[r] = policy.slice(j)[nodes[static_cast<std::size_t>(r)] * k];
    const Eigen::VectorXd coef = qr.solve(b);
    const double norm = b.norm();
    AffineFit fit;
    fit.intercept = coef[0];
    for (std::size_t c = 0; c < vars.size(); ++c) fit.slopes.push_back(coef[static_cast<Eigen::Index>(c + 1)]);
    fit.relative_residual = norm > 0.0 ? (b - A * coef).norm() / norm : 0.0;
    fits.push_back(std::move(fit));
  }
  return fits;
}

std::vector<AffineFit> affine_fit_check(const PolicyField& policy, std::size_t slice_var,
                                        const std::optional<FitRegion>& region) {
  return affine_fit_check(policy, std::vector<std::size_t>{slice_var}, region);
}

void write_riccati_csv(const RiccatiSolution& sol, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "t,a\n" << std::setprecision(17);
  for (std::size_t i = 0; i < sol.a.size(); ++i) os << sol.time(i) << "," << sol.a[i] << "\n";
}

}  // namespace mfc
