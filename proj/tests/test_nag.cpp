#include <cmath>
#include <vector>

#include "doctest.h"
#include "mfc/nag.hpp"
#include "mfc/problems.hpp"
#include "toys.hpp"

using mfc::GridField;
using mfc::PolicyField;
using mfc::SpaceTimeGrid;

namespace {

struct WorkerGuard {
  ~WorkerGuard() { mfc::set_worker_count(0); }
};

SpaceTimeGrid portfolio_grid(std::size_t cells = 50, std::size_t M = 50) {
  return SpaceTimeGrid(1.0, M, {-2.0, 0.0}, {6.0, 4.0}, {cells + 1, cells + 1});
}

SpaceTimeGrid cs_grid(std::size_t cells = 50, std::size_t M = 50) {
  return SpaceTimeGrid(1.0, M, {0.0, 0.0}, {5.0, 4.0}, {cells + 1, cells + 1});
}

/// J at matched noise; the pairing <grad F, delta> over the training paths.
struct Directional {
  double fd;
  double pairing;
};

Directional directional_check(const mfc::MfcProblem& problem, const PolicyField& psi, const GridField& delta,
                              std::size_t particles, std::uint64_t seed, double eps) {
  const auto& grid = psi.grid();
  const std::size_t M = grid.time_steps();
  PolicyField plus = psi, minus = psi;
  for (std::size_t i = 0; i < psi.values().size(); ++i) {
    plus.values()[i] += eps * delta.values()[i];
    minus.values()[i] -= eps * delta.values()[i];
  }
  const double jp = mfc::evaluate_policy(problem, plus, particles, seed).value;
  const double jm = mfc::evaluate_policy(problem, minus, particles, seed).value;

  const auto ens = mfc::simulate(problem, psi, particles, M, seed);
  const auto adjoint = mfc::backward_sweep(problem, psi, ens, grid);
  const auto g = mfc::gradient_field(problem, psi, ens, adjoint, grid);
  double pairing = 0.0;
  double gv[1], dv[1];
  for (std::size_t j = 0; j < M; ++j) {
    double s = 0.0;
    for (std::size_t l = 0; l < particles; ++l) {
      mfc::interpolate_slice(g, j, ens.state(j, l), gv);
      mfc::interpolate_slice(delta, j, ens.state(j, l), dv);
      s += gv[0] * dv[0];
    }
    pairing += s / static_cast<double>(particles) * grid.dt();
  }
  return {(jp - jm) / (2.0 * eps), pairing};
}

GridField random_direction(const SpaceTimeGrid& grid, std::uint64_t seed) {
  const mfc::CounterRng rng(seed);
  double c[6];
  for (std::size_t i = 0; i < 6; ++i) c[i] = 2.0 * rng.uniform(9, 0, i) - 1.0;
  GridField delta(grid, 1);
  std::vector<double> x(2);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j)
    for (std::size_t n = 0; n < grid.node_count(); ++n) {
      grid.coordinates(n, x);
      const double t = grid.time(j);
      delta.at(j, n)[0] = 0.5 + c[0] * std::sin(x[0] + c[1]) + c[2] * std::cos(1.5 * x[1] + c[3]) + c[4] * t +
                          0.3 * c[5] * x[0] * x[1] / 10.0;
    }
  return delta;
}

}  // namespace

TEST_CASE("momentum coefficient") {
  CHECK(mfc::momentum_coefficient(0) == 0.0);
  CHECK(mfc::momentum_coefficient(1) == 0.25);
  CHECK(mfc::momentum_coefficient(7) == 0.7);
  CHECK(mfc::momentum_coefficient(97, 0.5) == 0.5);
}

TEST_CASE("nag step algebra") {
  const SpaceTimeGrid g(1.0, 2, {0.0}, {1.0}, {3});
  PolicyField phi0(g, 1);
  for (std::size_t i = 0; i < phi0.values().size(); ++i) phi0.values()[i] = 0.125 * static_cast<double>(i);
  GridField g1(g, 1), g2(g, 1);
  for (std::size_t i = 0; i < g1.values().size(); ++i) {
    g1.values()[i] = 0.5 - 0.25 * static_cast<double>(i);
    g2.values()[i] = 1.0 + 0.5 * static_cast<double>(i % 3);
  }
  const double tau = 0.25;

  SUBCASE("first step has no momentum") {
    const auto s1 = mfc::nag_step(mfc::NagState::start(phi0, tau, true), g1, mfc::ProxSpec::none());
    CHECK(s1.iteration == 1);
    CHECK(s1.psi.values() == s1.phi.values());
  }
  SUBCASE("two steps compose affinely") {
    const auto s1 = mfc::nag_step(mfc::NagState::start(phi0, tau, true), g1, mfc::ProxSpec::none());
    const auto s2 = mfc::nag_step(s1, g2, mfc::ProxSpec::none());
    for (std::size_t i = 0; i < phi0.values().size(); ++i) {
      const double phi1 = phi0.values()[i] - tau * g1.values()[i];
      const double phi2 = phi1 - tau * g2.values()[i];
      CHECK(s1.phi.values()[i] == phi1);
      CHECK(s2.phi.values()[i] == phi2);
      CHECK(s2.phi_prev.values()[i] == phi1);
      CHECK(s2.psi.values()[i] == phi2 + 0.25 * (phi2 - phi1));
    }
    const auto i1 = mfc::nag_step(mfc::NagState::start(phi0, tau, false), g1, mfc::ProxSpec::none());
    const auto i2 = mfc::nag_step(i1, g2, mfc::ProxSpec::none());
    for (std::size_t i = 0; i < phi0.values().size(); ++i)
      CHECK(i2.psi.values()[i] == phi0.values()[i] - tau * (g1.values()[i] + g2.values()[i]));
  }
  SUBCASE("zero gradient is a fixed point of the prox-free step") {
    const GridField zero(g, 1);
    auto s = mfc::NagState::start(phi0, tau, true);
    s = mfc::nag_step(s, g1, mfc::ProxSpec::none());
    const auto next = mfc::nag_step(s, zero, mfc::ProxSpec::none());
    CHECK(next.phi.values() == s.psi.values());
  }
  SUBCASE("prox acts on the gradient step") {
    const auto s = mfc::nag_step(mfc::NagState::start(phi0, tau, true), g1, mfc::ProxSpec::l1(1.0));
    for (std::size_t i = 0; i < phi0.values().size(); ++i)
      CHECK(s.phi.values()[i] == mfc::prox_apply(mfc::ProxSpec::l1(1.0), tau, phi0.values()[i] - tau * g1.values()[i]));
  }
  SUBCASE("mismatched gradients and bad steps are rejected") {
    const SpaceTimeGrid other(1.0, 3, {0.0}, {1.0}, {3});
    CHECK_THROWS_AS(mfc::nag_step(mfc::NagState::start(phi0, tau, true), GridField(other, 1), mfc::ProxSpec::none()),
                    mfc::Error);
    CHECK_THROWS_AS(mfc::NagState::start(phi0, 0.0, true), mfc::ConfigError);
  }
}

TEST_CASE("method names") {
  for (auto m : {mfc::Method::fipde, mfc::Method::ipde, mfc::Method::emreg})
    CHECK(mfc::parse_method(mfc::to_string(m)) == m);
  CHECK_THROWS_AS(mfc::parse_method("sgd"), mfc::ConfigError);
}

TEST_CASE("gradient closed forms") {
  const mfc::PortfolioProblem p(mfc::PortfolioParams{});
  const auto g = portfolio_grid(20, 10);
  PolicyField psi(g, 1);
  std::vector<double> x(2);
  for (std::size_t j = 0; j <= 10; ++j)
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      g.coordinates(n, x);
      psi.at(j, n)[0] = -0.2 * x[1] + 0.05 * x[0];
    }
  const auto ens = mfc::simulate(p, psi, 800, 10, 3);
  const auto adj = mfc::backward_sweep(p, psi, ens, g);
  for (std::size_t j : {0u, 4u, 9u}) {
    double mean_u1 = 0.0;
    double u[2];
    for (std::size_t l = 0; l < 800; ++l) {
      mfc::interpolate_slice(adj.u, j, ens.state(j, l), u);
      mean_u1 += u[0];
    }
    mean_u1 /= 800.0;
    for (std::size_t n : std::vector<std::size_t>{0, 123, 250, g.node_count() - 1}) {
      g.coordinates(n, x);
      const auto grad = mfc::gradient_map(p, psi, ens, adj, g, j, n);
      const double expected = adj.u.at(j, n)[1] + x[0] + 2.0 * psi.at(j, n)[0] + 0.5 * mean_u1;
      CHECK(grad[0] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  const mfc::CuckerSmaleProblem cs(mfc::CuckerSmaleParams{});
  const auto cg = cs_grid(20, 10);
  PolicyField cpsi(cg, 1, 0.3);
  const auto cens = mfc::simulate(cs, cpsi, 500, 10, 3);
  const auto cadj = mfc::backward_sweep(cs, cpsi, cens, cg);
  for (std::size_t n : {0u, 77u, 300u}) {
    const auto grad = mfc::gradient_map(cs, cpsi, cens, cadj, cg, 5, n);
    CHECK(grad[0] == doctest::Approx(2.0 * 0.1 * 0.3 + cadj.u.at(5, n)[1]).epsilon(1e-12));
  }

  toys::GeneratorToy toy;
  toy.sigma_ = {0.2, 0.0, 0.0, 0.2};
  const SpaceTimeGrid tg(1.0, 4, {0.0, 0.0}, {1.0, 1.0}, {5, 5});
  const PolicyField zero(tg, 1);
  const auto tens = mfc::simulate(toy, zero, 10, 4, 1);
  const mfc::AdjointField none{GridField(tg, 2), std::nullopt, false, {}, {}};
  const auto tgrad = mfc::gradient_field(toy, zero, tens, none, tg);
  for (double v : tgrad.values()) CHECK(v == 0.0);
}

TEST_CASE("gradient matches the finite-difference directional derivative") {
  const double eps = 1e-3;
  SUBCASE("portfolio") {
    const mfc::PortfolioProblem p(mfc::PortfolioParams{});
    const auto g = portfolio_grid();
    PolicyField psi(g, 1);
    for (std::size_t j = 0; j <= g.time_steps(); ++j)
      for (std::size_t n = 0; n < g.node_count(); ++n) psi.at(j, n)[0] = -0.5 * g.time(j);
    for (std::uint64_t dir : {1u, 2u}) {
      const auto r = directional_check(p, psi, random_direction(g, dir), 10000, 17, eps);
      MESSAGE("portfolio fd " << r.fd << " pairing " << r.pairing);
      CHECK(std::abs(r.fd - r.pairing) <= 0.05 * std::abs(r.fd));
    }
  }
  SUBCASE("cucker-smale") {
    const mfc::CuckerSmaleProblem cs(mfc::CuckerSmaleParams{});
    const auto g = cs_grid(40, 40);
    const PolicyField psi(g, 1);
    const auto r = directional_check(cs, psi, random_direction(g, 3), 10000, 19, eps);
    MESSAGE("cs fd " << r.fd << " pairing " << r.pairing);
    CHECK(std::abs(r.fd - r.pairing) <= 0.05 * std::abs(r.fd));
  }
}

TEST_CASE("long-range flocking gradient error shrinks under grid refinement") {
  mfc::CuckerSmaleParams params;
  params.beta = 10.0;
  const mfc::CuckerSmaleProblem cs(params);
  std::vector<double> gaps;
  for (std::size_t cells : {40u, 80u}) {
    const auto g = cs_grid(cells, 40);
    const PolicyField psi(g, 1);
    const auto r = directional_check(cs, psi, random_direction(g, 3), 2000, 19, 1e-3);
    MESSAGE("cells " << cells << " fd " << r.fd << " pairing " << r.pairing);
    gaps.push_back(std::abs(r.fd - r.pairing) / std::abs(r.fd));
  }
  CHECK(gaps[1] <= 0.75 * gaps[0]);
  CHECK(gaps[1] <= 0.2);
}


TEST_CASE("run records and edge cases") {
  const mfc::PortfolioProblem p(mfc::PortfolioParams{});
  mfc::RunSettings s;
  s.grid = portfolio_grid(20, 20);
  s.particles = 1000;
  s.iterations = 0;
  const auto r0 = mfc::run(p, s);
  REQUIRE(r0.records.size() == 1);
  CHECK(r0.records[0].m == 0);
  CHECK(r0.records[0].grad_norm == 0.0);
  CHECK(r0.records[0].J == mfc::evaluate_policy(p, PolicyField(s.grid, 1), 1000, s.eval_seed).value);

  s.iterations = 3;
  std::size_t calls = 0;
  const auto r3 = mfc::run(p, s, [&](const mfc::IterationRecord&) { ++calls; });
  CHECK(calls == 4);
  REQUIRE(r3.records.size() == 4);
  for (std::size_t m = 0; m <= 3; ++m) CHECK(r3.records[m].m == m);
  CHECK(r3.records[1].grad_norm > 0.0);
  CHECK(r3.records[3].J < r3.records[0].J);
  CHECK(r3.records[3].J == mfc::evaluate_policy(p, *r3.phi, 1000, s.eval_seed).value);

  s.method = mfc::Method::emreg;
  CHECK_THROWS_AS(mfc::run(p, s), mfc::ConfigError);
}

TEST_CASE("run failures carry the partial report") {
  const toys::ExplodingPortfolio p;
  mfc::RunSettings s;
  s.grid = portfolio_grid(10, 10);
  s.particles = 100;
  s.iterations = 2;
  try {
    (void)mfc::run(p, s);
    FAIL("expected a run failure");
  } catch (const mfc::RunFailure& e) {
    CHECK(e.iteration() == 0);
    CHECK(std::string(e.what()).find("iteration 0") != std::string::npos);
    CHECK(e.partial().records.empty());
  }

  struct LateNan : mfc::PortfolioProblem {
    LateNan() : mfc::PortfolioProblem(mfc::PortfolioParams{}) {}
    void running_cost_da(double t, toys::CSpan x, toys::CSpan a, const mfc::EmpiricalMeasure& eta,
                         toys::Span out) const override {
      mfc::PortfolioProblem::running_cost_da(t, x, a, eta, out);
      if (a[0] < -0.3) out[0] = std::nan("");
    }
  };
  const LateNan late;
  s.iterations = 10;
  try {
    (void)mfc::run(late, s);
    FAIL("expected a run failure");
  } catch (const mfc::RunFailure& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.partial().records.size() == e.iteration() + 1);
    CHECK(std::string(e.what()).find("gradient") != std::string::npos);
  }
}

TEST_CASE("missing sigma callbacks are a startup configuration error") {
  const toys::MissingSigmaToy toy;
  mfc::RunSettings s;
  s.grid = SpaceTimeGrid(1.0, 5, {0.0}, {2.0}, {11});
  s.particles = 10;
  CHECK_THROWS_AS(mfc::run(toy, s), mfc::ConfigError);
  const toys::LinearSigmaToy ok;
  CHECK_NOTHROW(mfc::run(ok, s));
}

TEST_CASE("runs are bitwise reproducible across worker counts") {
  WorkerGuard guard;
  mfc::CuckerSmaleParams params;
  params.beta = 10.0;
  const mfc::CuckerSmaleProblem cs(params);
  mfc::RunSettings s;
  s.grid = cs_grid(16, 16);
  s.particles = 1200;
  s.iterations = 3;
  s.resample_each_iteration = true;
  mfc::set_worker_count(1);
  const auto a = mfc::run(cs, s);
  mfc::set_worker_count(4);
  const auto b = mfc::run(cs, s);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t m = 0; m < a.records.size(); ++m) {
    CHECK(a.records[m].J == b.records[m].J);
    CHECK(a.records[m].grad_norm == b.records[m].grad_norm);
  }
  CHECK(a.phi->values() == b.phi->values());
}

TEST_CASE("momentum beats plain gradient at iteration ten on coarse flocking runs") {
  for (double beta : {0.0, 10.0}) {
    mfc::CuckerSmaleParams params;
    params.beta = beta;
    const mfc::CuckerSmaleProblem cs(params);
    mfc::RunSettings s;
    s.grid = cs_grid(25, 25);
    s.particles = beta > 0 ? 1000 : 4000;
    s.iterations = 10;
    const auto f = mfc::run(cs, s);
    s.method = mfc::Method::ipde;
    const auto i = mfc::run(cs, s);
    MESSAGE("beta " << beta << ": fipde " << f.records.back().J << " ipde " << i.records.back().J);
    CHECK(f.records.back().J <= i.records.back().J);
  }
}
