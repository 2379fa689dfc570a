#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "mfc/fd_solver.hpp"
#include "mfc/particles.hpp"
#include "mfc/problems.hpp"
#include "toys.hpp"

using mfc::GridField;
using mfc::PolicyField;
using mfc::SpaceTimeGrid;
using toys::CSpan;
using toys::Span;

namespace {

toys::GeneratorToy line_toy(double sigma) {
  toys::GeneratorToy toy;
  toy.dims_ = {1, 1, 1};
  toy.sigma_ = {sigma};
  toy.lo_ = {0.0};
  toy.hi_ = {1.0};
  return toy;
}

struct Setup {
  SpaceTimeGrid grid;
  PolicyField policy;
  mfc::ParticleEnsemble ensemble;
};

Setup setup(const mfc::MfcProblem& p, const SpaceTimeGrid& grid, std::size_t particles = 16, double a = 0.0) {
  PolicyField policy(grid, p.dims().control, a);
  auto ens = mfc::simulate(p, policy, particles, grid.time_steps(), 1);
  return {grid, std::move(policy), std::move(ens)};
}

void require_nonnegative(const mfc::MonotoneOperator& op) {
  for (double w : op.weight) REQUIRE(w >= 0.0);
}

}  // namespace

TEST_CASE("operator examples in one dimension") {
  const SpaceTimeGrid g(1.0, 4, {0.0}, {1.0}, {11});
  {
    const auto toy = line_toy(std::sqrt(2.0));
    const auto s = setup(toy, g);
    const auto op = mfc::build_operator(toy, s.policy, s.ensemble, g, 2);
    CHECK(op.dirichlet[0] == 1);
    CHECK(op.dirichlet[10] == 1);
    for (std::size_t k = 1; k < 10; ++k) {
      CHECK(op.dirichlet[k] == 0);
      CHECK(op.weight_of(k, k + 1) == doctest::Approx(100.0).epsilon(1e-12));
      CHECK(op.weight_of(k, k - 1) == doctest::Approx(100.0).epsilon(1e-12));
    }
  }
  {
    auto toy = line_toy(0.0);
    toy.drift_fn = [](double, CSpan, Span o) { o[0] = 1.0; };
    const auto s = setup(toy, g);
    const auto op = mfc::build_operator(toy, s.policy, s.ensemble, g, 0);
    for (std::size_t k = 1; k < 10; ++k) {
      CHECK(op.weight_of(k, k + 1) == doctest::Approx(10.0).epsilon(1e-12));
      CHECK(op.weight_of(k, k - 1) == 0.0);
    }
    toy.drift_fn = [](double, CSpan, Span o) { o[0] = -1.0; };
    const auto back = mfc::build_operator(toy, s.policy, s.ensemble, g, 0);
    CHECK(back.weight_of(5, 4) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(back.weight_of(5, 6) == 0.0);
  }
}

TEST_CASE("operator annihilates constants and is nonnegative on the shipped problems") {
  const mfc::PortfolioProblem portfolio(mfc::PortfolioParams{});
  mfc::CuckerSmaleParams csp;
  csp.beta = 10.0;
  const mfc::CuckerSmaleProblem cs(csp);
  const SpaceTimeGrid pg(1.0, 10, {-2.0, 0.0}, {6.0, 4.0}, {21, 21});
  const SpaceTimeGrid cg(1.0, 10, {0.0, 0.0}, {5.0, 4.0}, {21, 21});
  for (auto [p, g] : {std::pair<const mfc::MfcProblem*, const SpaceTimeGrid*>{&portfolio, &pg}, {&cs, &cg}}) {
    PolicyField psi(*g, 1);
    std::vector<double> x(2);
    for (std::size_t j = 0; j <= 10; ++j)
      for (std::size_t n = 0; n < g->node_count(); ++n) {
        g->coordinates(n, x);
        psi.at(j, n)[0] = std::sin(x[0] + x[1]) - 0.5;
      }
    const auto ens = mfc::simulate(*p, psi, 400, 10, 2);
    for (std::size_t j = 0; j <= 10; ++j) {
      const auto op = mfc::build_operator(*p, psi, ens, *g, j);
      require_nonnegative(op);
      const std::vector<double> c(g->node_count(), 2.5);
      std::vector<double> out(g->node_count());
      op.apply(c, out);
      for (double v : out) REQUIRE(std::abs(v) <= 1e-9);
    }
  }
}

TEST_CASE("cross diffusion uses the diagonally dominant stencil") {
  toys::GeneratorToy toy;
  toy.sigma_ = {0.6, 0.0, 0.3, 0.5};
  toy.lo_ = {0.0, 0.0};
  toy.hi_ = {2.0, 2.0};
  const SpaceTimeGrid g(1.0, 4, {0.0, 0.0}, {2.0, 2.0}, {11, 11});
  const auto s = setup(toy, g);
  const auto op = mfc::build_operator(toy, s.policy, s.ensemble, g, 1);
  require_nonnegative(op);
  const std::vector<std::size_t> mid{5, 5};
  const std::size_t p = g.flat(mid);
  const double h2 = 0.04;
  CHECK(op.weight_of(p, p + g.stride(0) + g.stride(1)) == doctest::Approx(0.09 / h2));
  CHECK(op.weight_of(p, p + g.stride(0) - g.stride(1)) == 0.0);
  CHECK(op.weight_of(p, p + g.stride(0)) == doctest::Approx((0.18 - 0.09) / h2));
  CHECK(op.weight_of(p, p + g.stride(1)) == doctest::Approx((0.17 - 0.09) / h2));
  // Quadratic test function: the stencil reproduces D : Hessian exactly.
  std::vector<double> phi(g.node_count()), out(g.node_count()), x(2);
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    g.coordinates(n, x);
    phi[n] = x[0] * x[0] + 3.0 * x[0] * x[1] - x[1] * x[1];
  }
  op.apply(phi, out);
  CHECK(out[p] == doctest::Approx(0.18 * 2.0 + 2.0 * 0.09 * 3.0 - 0.17 * 2.0).epsilon(1e-10));
}

TEST_CASE("negative stencil weights are rejected with the node") {
  toys::GeneratorToy toy;
  toy.sigma_ = {1.0, 0.0, 1.0, 0.0};
  toy.lo_ = {0.0, 0.0};
  toy.hi_ = {1.0, 2.0};
  const SpaceTimeGrid g(1.0, 4, {0.0, 0.0}, {1.0, 2.0}, {11, 11});
  const auto s = setup(toy, g);
  CHECK_THROWS_WITH_AS(mfc::build_operator(toy, s.policy, s.ensemble, g, 0), doctest::Contains("node"), mfc::Error);
}

TEST_CASE("constant terminal data is preserved") {
  toys::GeneratorToy toy;
  toy.sigma_ = {0.5, 0.1, 0.0, 0.4};
  toy.drift_fn = [](double t, CSpan x, Span o) {
    o[0] = std::sin(3.0 * x[1]) + t;
    o[1] = x[0] - 0.5;
  };
  toy.terminal_fn = [](CSpan, Span o) {
    o[0] = 1.75;
    o[1] = -0.5;
  };
  const SpaceTimeGrid g(1.0, 20, {0.0, 0.0}, {1.0, 1.0}, {17, 17});
  const auto s = setup(toy, g);
  const auto field = mfc::backward_sweep(toy, s.policy, s.ensemble, g);
  for (std::size_t j = 0; j <= 20; ++j)
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      REQUIRE(field.u.at(j, n)[0] == doctest::Approx(1.75).epsilon(1e-12));
      REQUIRE(field.u.at(j, n)[1] == doctest::Approx(-0.5).epsilon(1e-12));
    }
  CHECK_FALSE(field.v.has_value());
}

TEST_CASE("discrete maximum principle for zero source") {
  for (auto solver : {mfc::LinearSolver::direct, mfc::LinearSolver::gauss_seidel}) {
    toys::GeneratorToy toy;
    toy.sigma_ = {0.4, 0.0, 0.2, 0.3};
    toy.drift_fn = [](double t, CSpan x, Span o) {
      o[0] = std::cos(4.0 * x[1]) * (1.0 + t);
      o[1] = -2.0 * (x[0] - 0.5);
    };
    toy.terminal_fn = [](CSpan x, Span o) {
      o[0] = 2.0 * std::sin(7.0 * x[0]) * std::cos(5.0 * x[1]);
      o[1] = x[0] > 0.5 ? 2.0 : -2.0;
    };
    const SpaceTimeGrid g(1.0, 25, {0.0, 0.0}, {1.0, 1.0}, {26, 26});
    const auto s = setup(toy, g);
    mfc::SolverOptions opts;
    opts.solver = solver;
    const auto field = mfc::backward_sweep(toy, s.policy, s.ensemble, g, opts);
    const auto ranges = mfc::max_principle_check(field.u);
    for (std::size_t c = 0; c < 2; ++c) {
      const auto [lo, hi] = ranges[25][c];
      for (std::size_t j = 0; j <= 25; ++j) {
        REQUIRE(ranges[j][c].first >= lo - 1e-10);
        REQUIRE(ranges[j][c].second <= hi + 1e-10);
        REQUIRE(ranges[j][c].first >= -2.0 - 1e-10);
        REQUIRE(ranges[j][c].second <= 2.0 + 1e-10);
      }
    }
  }
}

TEST_CASE("implicit systems have a nonnegative inverse") {
  const mfc::CounterRng rng(99);
  for (std::size_t inst = 0; inst < 10; ++inst) {
    auto r = [&](std::size_t c) { return rng.uniform(8, inst, c); };
    toys::GeneratorToy toy;
    const double s11 = 0.2 + r(0), s22 = 0.2 + r(2);
    // Keep the diffusion diagonally dominant so the scheme stays monotone.
    const double s21 = 0.5 * r(1) * std::min(s11, s22 * s22 / s11);
    toy.sigma_ = {s11, 0.0, s21, s22};
    const double b0 = 2.0 * r(3) - 1.0, b1 = 2.0 * r(4) - 1.0, w = 1.0 + 5.0 * r(5);
    toy.drift_fn = [=](double, CSpan x, Span o) {
      o[0] = b0 * std::sin(w * x[1]);
      o[1] = b1 * std::cos(w * x[0]);
    };
    toy.boundary_fn = [](double, CSpan, Span o) { std::fill(o.begin(), o.end(), 0.0); };
    const SpaceTimeGrid g(1.0, 10, {0.0, 0.0}, {1.0, 1.0}, {16, 16});
    const auto s = setup(toy, g);
    const double phase = 10.0 * r(6);
    const auto field = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, [&](double t, CSpan x, Span o) {
      o[0] = std::pow(std::sin(phase + 3.0 * x[0] * x[1] + t), 2);
      o[1] = x[0] * x[1];
    });
    for (double v : field.u.values()) REQUIRE(v >= -1e-12);
  }
}

TEST_CASE("backward sweep is affine in the source") {
  toys::GeneratorToy toy;
  toy.sigma_ = {0.5, 0.0, 0.1, 0.3};
  toy.drift_fn = [](double, CSpan x, Span o) {
    o[0] = x[1] - 0.5;
    o[1] = 0.3;
  };
  toy.terminal_fn = [](CSpan x, Span o) {
    o[0] = x[0];
    o[1] = std::cos(x[1]);
  };
  const SpaceTimeGrid g(1.0, 12, {0.0, 0.0}, {1.0, 1.0}, {13, 13});
  const auto s = setup(toy, g);
  auto s1 = [](double t, CSpan x, Span o) {
    o[0] = std::exp(x[0]) * t;
    o[1] = -x[1];
  };
  auto s2 = [](double t, CSpan x, Span o) {
    o[0] = std::sin(5.0 * x[1]);
    o[1] = t * t + x[0];
  };
  const auto u0 = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, [](double, CSpan, Span o) {
    std::fill(o.begin(), o.end(), 0.0);
  });
  const auto u1 = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, s1);
  const auto u2 = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, s2);
  const auto u12 = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, [&](double t, CSpan x, Span o) {
    double a[2], b[2];
    s1(t, x, a);
    s2(t, x, b);
    o[0] = a[0] + b[0];
    o[1] = a[1] + b[1];
  });
  for (std::size_t i = 0; i < u0.u.values().size(); ++i)
    REQUIRE(std::abs(u12.u.values()[i] - (u1.u.values()[i] + u2.u.values()[i] - u0.u.values()[i])) <= 1e-9);
}

TEST_CASE("manufactured solution converges at first order") {
  const double D11 = 0.18, D12 = 0.09, D22 = 0.17, b0 = 0.4, b1 = -0.3;
  auto exact = [](double t, CSpan x, Span o) {
    o[0] = std::exp(-t) * std::sin(x[0]) * std::cos(x[1]);
    o[1] = std::cos(t) * x[0] * x[1];
  };
  auto source = [&](double t, CSpan x, Span o) {
    const double e = std::exp(-t), sx = std::sin(x[0]), cx = std::cos(x[0]), sy = std::sin(x[1]),
                 cy = std::cos(x[1]);
    const double u1 = e * sx * cy;
    const double gen1 = -u1 + b0 * e * cx * cy - b1 * e * sx * sy + D11 * (-u1) + 2.0 * D12 * (-e * cx * sy) +
                        D22 * (-u1);
    const double gen2 = -std::sin(t) * x[0] * x[1] + b0 * std::cos(t) * x[1] + b1 * std::cos(t) * x[0] +
                        2.0 * D12 * std::cos(t);
    o[0] = -gen1;
    o[1] = -gen2;
  };
  toys::GeneratorToy toy;
  toy.sigma_ = {0.6, 0.0, 0.3, 0.5};
  toy.lo_ = {0.0, 0.0};
  toy.hi_ = {2.0, 2.0};
  toy.drift_fn = [&](double, CSpan, Span o) {
    o[0] = b0;
    o[1] = b1;
  };
  toy.terminal_fn = [&](CSpan x, Span o) { exact(1.0, x, o); };
  toy.boundary_fn = exact;

  std::vector<double> errors;
  for (std::size_t level : {20u, 40u, 80u}) {
    const SpaceTimeGrid g(1.0, level, {0.0, 0.0}, {2.0, 2.0}, {level + 1, level + 1});
    const auto s = setup(toy, g);
    const auto field = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, source);
    double err = 0.0;
    std::vector<double> x(2);
    double ex[2];
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      g.coordinates(n, x);
      exact(0.0, x, ex);
      err = std::max({err, std::abs(field.u.at(0, n)[0] - ex[0]), std::abs(field.u.at(0, n)[1] - ex[1])});
    }
    errors.push_back(err);
  }
  const double order1 = std::log2(errors[0] / errors[1]);
  const double order2 = std::log2(errors[1] / errors[2]);
  MESSAGE("manufactured errors " << errors[0] << " " << errors[1] << " " << errors[2]);
  CHECK(order1 >= 0.9);
  CHECK(order2 >= 0.9);
}

TEST_CASE("heat equation manufactured solution in one dimension") {
  auto toy = line_toy(std::sqrt(2.0));
  toy.lo_ = {0.0};
  toy.hi_ = {std::numbers::pi};
  auto exact = [](double t, CSpan x, Span o) { o[0] = std::exp(-t) * std::sin(x[0]); };
  toy.terminal_fn = [&](CSpan x, Span o) { exact(1.0, x, o); };
  toy.boundary_fn = exact;
  std::vector<double> errors;
  for (std::size_t cells : {16u, 32u, 64u}) {
    const double h = std::numbers::pi / static_cast<double>(cells);
    const std::size_t M = cells;
    const SpaceTimeGrid g(1.0, M, {0.0}, {std::numbers::pi}, {cells + 1});
    const auto s = setup(toy, g);
    const auto field = mfc::backward_sweep(toy, s.policy, s.ensemble, g, {}, [&](double t, CSpan x, Span o) {
      exact(t, x, o);
      o[0] *= 2.0;
    });
    double l2 = 0.0;
    std::vector<double> x(1);
    double ex[1];
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      g.coordinates(n, x);
      exact(0.0, x, ex);
      l2 += h * std::pow(field.u.at(0, n)[0] - ex[0], 2);
    }
    errors.push_back(std::sqrt(l2));
  }
  CHECK(std::log2(errors[0] / errors[1]) >= 0.9);
  CHECK(std::log2(errors[1] / errors[2]) >= 0.9);
}

TEST_CASE("direct and gauss-seidel solvers agree") {
  const mfc::PortfolioProblem p(mfc::PortfolioParams{});
  const SpaceTimeGrid g(1.0, 10, {-2.0, 0.0}, {6.0, 4.0}, {21, 21});
  const auto s = setup(p, g, 300, -0.4);
  const auto direct = mfc::backward_sweep(p, s.policy, s.ensemble, g);
  mfc::SolverOptions gs;
  gs.solver = mfc::LinearSolver::gauss_seidel;
  gs.tolerance = 1e-12;
  const auto iter = mfc::backward_sweep(p, s.policy, s.ensemble, g, gs);
  for (std::size_t i = 0; i < direct.u.values().size(); ++i)
    REQUIRE(std::abs(direct.u.values()[i] - iter.u.values()[i]) <= 1e-8);
  mfc::SolverOptions starved = gs;
  starved.max_sweeps = 1;
  CHECK_THROWS_WITH_AS(mfc::backward_sweep(p, s.policy, s.ensemble, g, starved), doctest::Contains("residual"),
                       mfc::Error);
}

/// Portfolio with the exact affine solution at psi = 0 imposed on the boundary.
struct AffinePortfolio : mfc::PortfolioProblem {
  AffinePortfolio() : mfc::PortfolioProblem(mfc::PortfolioParams{}) {}
  void boundary_value(double t, CSpan x, CSpan, Span out) const override {
    const auto& p = params();
    out[0] = -x[1];
    out[1] = -x[0] + 2.0 * p.gamma * x[1] + 2.0 * x[1] * (p.horizon - t);
  }
};

TEST_CASE("portfolio adjoint at zero control is affine") {
  const AffinePortfolio p;
  const SpaceTimeGrid g(1.0, 50, {-2.0, 0.0}, {6.0, 4.0}, {51, 51});
  const auto s = setup(p, g, 2000, 0.0);
  const auto field = mfc::backward_sweep(p, s.policy, s.ensemble, g);
  std::vector<double> x(2);
  for (std::size_t j = 0; j <= 50; ++j) {
    double worst = 0.0;
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      g.coordinates(n, x);
      const double t = g.time(j);
      worst = std::max(worst, std::abs(field.u.at(j, n)[0] + x[1]));
      worst = std::max(worst, std::abs(field.u.at(j, n)[1] - (-x[0] + x[1] + 2.0 * x[1] * (1.0 - t))));
    }
    REQUIRE(worst <= 1e-8);
  }
}

TEST_CASE("source examples") {
  mfc::CuckerSmaleParams csp;
  const mfc::CuckerSmaleProblem cs(csp);
  const SpaceTimeGrid g(1.0, 10, {0.0, 0.0}, {5.0, 4.0}, {11, 11});
  const auto s = setup(cs, g, 500, 0.1);
  GridField u(g, 2);
  for (std::size_t i = 0; i < u.values().size(); ++i) u.values()[i] = std::sin(0.37 * static_cast<double>(i));
  const auto src = mfc::assemble_source(cs, s.policy, s.ensemble, u, g, 4);
  for (std::size_t n = 0; n < g.node_count(); ++n) REQUIRE(std::abs(src[2 * n]) <= 1e-14);

  struct LinearCost : toys::GeneratorToy {
    void running_cost_dx(double, CSpan, CSpan, const mfc::EmpiricalMeasure&, Span out) const override {
      out[0] = 0.75;
      out[1] = -2.0;
    }
  };
  LinearCost lin;
  lin.sigma_ = {0.3, 0.0, 0.0, 0.3};
  const SpaceTimeGrid lg(1.0, 5, {0.0, 0.0}, {1.0, 1.0}, {6, 6});
  const auto ls = setup(lin, lg);
  const GridField lu(lg, 2, 3.0);
  const auto lsrc = mfc::assemble_source(lin, ls.policy, ls.ensemble, lu, lg, 2);
  for (std::size_t n = 0; n < lg.node_count(); ++n) {
    REQUIRE(lsrc[2 * n] == 0.75);
    REQUIRE(lsrc[2 * n + 1] == -2.0);
  }
}

TEST_CASE("state-dependent diffusion adds the gradient source and materializes v") {
  const toys::LinearSigmaToy toy;
  const SpaceTimeGrid g(1.0, 20, {0.0}, {2.0}, {41});
  const auto s = setup(toy, g, 100, 0.0);
  const GridField& psi = s.policy;
  GridField u(g, 1);
  std::vector<double> x(1);
  for (std::size_t j = 0; j <= 20; ++j)
    for (std::size_t n = 0; n < g.node_count(); ++n) {
      g.coordinates(n, x);
      u.at(j, n)[0] = toy.alpha * x[0];
    }
  const mfc::SliceContext ctx(toy, psi, s.ensemble, g, 20, {});
  std::vector<double> fex(g.node_count());
  mfc::diffusion_gradient_terms(toy, ctx, u, 20, false, fex);
  for (std::size_t n = 1; n + 1 < g.node_count(); ++n) {
    g.coordinates(n, x);
    REQUIRE(fex[n] == doctest::Approx(toy.c * toy.c * toy.alpha * x[0]).epsilon(1e-12));
  }
  const auto field = mfc::backward_sweep(toy, psi, s.ensemble, g);
  REQUIRE(field.v.has_value());
  for (std::size_t n = 1; n + 1 < g.node_count(); ++n) {
    g.coordinates(n, x);
    REQUIRE(field.v->at(20, n)[0] == doctest::Approx(toy.alpha * toy.c * x[0]).epsilon(1e-12));
  }
}

TEST_CASE("backward sweep diagnostics") {
  auto toy = line_toy(0.2);
  const SpaceTimeGrid coarse_t(1.0, 2, {0.0}, {1.0}, {201});
  const SpaceTimeGrid g(1.0, 10, {0.0}, {1.0}, {11});
  {
    const auto s = setup(toy, g);
    const auto ok = mfc::backward_sweep(toy, s.policy, s.ensemble, g);
    CHECK(ok.warnings.empty());
    const SpaceTimeGrid other(1.0, 5, {0.0}, {1.0}, {11});
    CHECK_THROWS_AS(mfc::backward_sweep(toy, s.policy, s.ensemble, other), mfc::ConfigError);
    CHECK_THROWS_WITH_AS(mfc::backward_sweep(toy, s.policy, s.ensemble, g, {},
                                             [](double t, CSpan x, Span o) {
                                               o[0] = (t < 0.5 && x[0] > 0.45 && x[0] < 0.55) ? std::nan("") : 0.0;
                                             }),
                         doctest::Contains("k=5"), mfc::Error);
  }
  {
    const auto s = setup(toy, coarse_t);
    const auto warned = mfc::backward_sweep(toy, s.policy, s.ensemble, coarse_t);
    CHECK(warned.warnings.size() == 1);
  }
}

TEST_CASE("kernel subsample is seeded and sized") {
  const mfc::PortfolioProblem p(mfc::PortfolioParams{});
  const SpaceTimeGrid g(1.0, 4, {-2.0, 0.0}, {6.0, 4.0}, {5, 5});
  const auto s = setup(p, g, 1000, 0.2);
  mfc::SolverOptions o;
  o.kernel_subsample = 100;
  o.subsample_seed = 5;
  const mfc::SliceContext a(p, s.policy, s.ensemble, g, 2, o), b(p, s.policy, s.ensemble, g, 2, o);
  CHECK(a.measure().size() == 100);
  CHECK(std::equal(a.measure().states().begin(), a.measure().states().end(), b.measure().states().begin()));
  o.kernel_subsample = 0;
  const mfc::SliceContext full(p, s.policy, s.ensemble, g, 2, o);
  CHECK(full.measure().size() == 1000);
}
