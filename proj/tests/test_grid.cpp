#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "mfc/grid.hpp"
#include "mfc/parallel.hpp"
#include "mfc/rng.hpp"
#include "toys.hpp"

using mfc::GridField;
using mfc::SpaceTimeGrid;

namespace {

SpaceTimeGrid grid3d() { return SpaceTimeGrid(2.0, 8, {-1.0, 0.0, 2.0}, {1.0, 3.0, 2.5}, {5, 7, 4}); }

}  // namespace

TEST_CASE("grid geometry") {
  const auto g = grid3d();
  CHECK(g.dt() == doctest::Approx(0.25));
  CHECK(g.node_count() == 5 * 7 * 4);
  CHECK(g.mesh(0) == doctest::Approx(0.5));
  CHECK(g.mesh(1) == doctest::Approx(0.5));
  CHECK(g.time_index(0.0) == 0);
  CHECK(g.time_index(0.26) == 1);
  CHECK(g.time_index(2.0) == 8);
  CHECK(g.time_index(7.0) == 8);
  std::vector<std::size_t> m(3);
  for (std::size_t p = 0; p < g.node_count(); ++p) {
    g.unflat(p, m);
    REQUIRE(g.flat(m) == p);
  }
  std::vector<std::size_t> first{1, 0, 0};
  CHECK(g.flat(first) == 7 * 4);
  std::vector<double> x(3);
  g.coordinates(g.node_count() - 1, x);
  CHECK(x == std::vector<double>{1.0, 3.0, 2.5});
  CHECK(g.on_boundary(0));
  const std::vector<std::size_t> inner{2, 3, 1};
  CHECK_FALSE(g.on_boundary(g.flat(inner)));
  CHECK(mfc::cell_count(g) == 4 * 6 * 3);
}

TEST_CASE("invalid grids are rejected") {
  CHECK_THROWS_AS(SpaceTimeGrid(0.0, 4, {0.0}, {1.0}, {3}), mfc::ConfigError);
  CHECK_THROWS_AS(SpaceTimeGrid(1.0, 0, {0.0}, {1.0}, {3}), mfc::ConfigError);
  CHECK_THROWS_AS(SpaceTimeGrid(1.0, 4, {0.0}, {1.0}, {1}), mfc::ConfigError);
  CHECK_THROWS_AS(SpaceTimeGrid(1.0, 4, {1.0}, {0.0}, {3}), mfc::ConfigError);
  CHECK_THROWS_AS(SpaceTimeGrid(1.0, 4, {0.0, 0.0}, {1.0}, {3}), mfc::ConfigError);
}

TEST_CASE("interpolation examples") {
  const SpaceTimeGrid g(1.0, 2, {0.0}, {1.0}, {2});
  GridField f(g, 1);
  for (std::size_t j = 0; j <= 2; ++j) {
    f.at(j, 0)[0] = 0.0;
    f.at(j, 1)[0] = 1.0;
  }
  double out[1];
  const double half[1] = {0.5}, far[1] = {-5.0}, above[1] = {9.0};
  mfc::interpolate(f, 0.3, half, out);
  CHECK(out[0] == 0.5);
  mfc::interpolate(f, 0.3, far, out);
  CHECK(out[0] == 0.0);
  mfc::interpolate(f, 0.3, above, out);
  CHECK(out[0] == 1.0);
  const double bad[1] = {std::nan("")};
  CHECK_THROWS_WITH_AS(mfc::interpolate(f, 0.3, bad, out), doctest::Contains("x1"), mfc::Error);
}

TEST_CASE("interpolation at nodes returns stored values") {
  const auto g = grid3d();
  GridField f(g, 2);
  for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = std::cos(1.7 * static_cast<double>(i));
  std::vector<double> x(3), out(2);
  for (std::size_t j = 0; j <= g.time_steps(); ++j)
    for (std::size_t p = 0; p < g.node_count(); ++p) {
      g.coordinates(p, x);
      mfc::interpolate(f, g.time(j), x, out);
      REQUIRE(out[0] == f.at(j, p)[0]);
      REQUIRE(out[1] == f.at(j, p)[1]);
    }
}

TEST_CASE("tent weights form a partition of unity") {
  const auto g = grid3d();
  const auto pts = toys::random_points(10000, 3, {-1.5, -0.5, 1.5}, {1.5, 3.5, 3.0}, 3);
  for (std::size_t q = 0; q < 10000; ++q) {
    const auto st = mfc::interpolation_stencil(g, std::span(pts).subspan(3 * q, 3));
    REQUIRE(st.nodes.size() <= 8);
    double sum = 0.0;
    for (double w : st.weights) {
      REQUIRE(w >= 0.0);
      REQUIRE(w <= 1.0);
      sum += w;
    }
    REQUIRE(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("interpolation is exact on affine functions") {
  const auto g = grid3d();
  auto affine = [](std::span<const double> x) { return 0.7 - 1.3 * x[0] + 2.1 * x[1] + 0.4 * x[2]; };
  GridField f(g, 1);
  std::vector<double> x(3);
  for (std::size_t j = 0; j <= g.time_steps(); ++j)
    for (std::size_t p = 0; p < g.node_count(); ++p) {
      g.coordinates(p, x);
      f.at(j, p)[0] = affine(x);
    }
  const auto pts = toys::random_points(5000, 3, {-1.0, 0.0, 2.0}, {1.0, 3.0, 2.5}, 5);
  double out[1];
  for (std::size_t q = 0; q < 5000; ++q) {
    const auto xq = std::span(pts).subspan(3 * q, 3);
    mfc::interpolate(f, 0.9, xq, out);
    REQUIRE(std::abs(out[0] - affine(xq)) <= 1e-12);
  }
}

TEST_CASE("interpolation is monotone in the nodal values") {
  const auto g = grid3d();
  GridField a(g, 1), b(g, 1);
  const mfc::CounterRng rng(2);
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    a.values()[i] = rng.uniform(7, i, 0);
    b.values()[i] = a.values()[i] + rng.uniform(7, i, 1);
  }
  const auto pts = toys::random_points(3000, 3, {-2.0, -1.0, 1.0}, {2.0, 4.0, 3.0}, 6);
  double oa[1], ob[1];
  for (std::size_t q = 0; q < 3000; ++q) {
    const auto xq = std::span(pts).subspan(3 * q, 3);
    const double t = 2.0 * rng.uniform(8, q, 0);
    mfc::interpolate(a, t, xq, oa);
    mfc::interpolate(b, t, xq, ob);
    REQUIRE(oa[0] <= ob[0]);
  }
}

TEST_CASE("constant fields interpolate to the constant everywhere") {
  const auto g = grid3d();
  const GridField f(g, 1, 3.25);
  const auto pts = toys::random_points(500, 3, {-10.0, -10.0, -10.0}, {10.0, 10.0, 10.0}, 9);
  double out[1];
  for (std::size_t q = 0; q < 500; ++q) {
    mfc::interpolate(f, 1.0, std::span(pts).subspan(3 * q, 3), out);
    REQUIRE(out[0] == doctest::Approx(3.25).epsilon(1e-15));
  }
}

TEST_CASE("interpolation holds the slice between time nodes") {
  const SpaceTimeGrid g(1.0, 4, {0.0}, {1.0}, {3});
  GridField f(g, 1);
  for (std::size_t j = 0; j <= 4; ++j)
    for (std::size_t p = 0; p < 3; ++p) f.at(j, p)[0] = static_cast<double>(j);
  const double x[1] = {0.4};
  double out[1];
  mfc::interpolate(f, 0.49, x, out);
  CHECK(out[0] == 1.0);
  mfc::interpolate(f, 1.0, x, out);
  CHECK(out[0] == 4.0);
}

TEST_CASE("cells and piecewise-constant lookup") {
  const SpaceTimeGrid g(1.0, 1, {0.0, 0.0}, {2.0, 3.0}, {3, 4});
  GridField f(g, 1);
  for (std::size_t p = 0; p < g.node_count(); ++p) f.at(0, p)[0] = static_cast<double>(p);
  const double inside[2] = {1.5, 0.2};
  CHECK(mfc::cell_index(g, inside) == 1 * 3 + 0);
  double out[1];
  mfc::cell_value_slice(f, 0, inside, out);
  std::vector<std::size_t> corner{1, 0};
  CHECK(out[0] == static_cast<double>(g.flat(corner)));
  const double outside[2] = {9.0, 9.0};
  CHECK(mfc::cell_index(g, outside) == mfc::cell_count(g) - 1);
  const std::vector<std::size_t> last{2, 3};
  CHECK(mfc::node_cell(g, g.flat(last)) == mfc::cell_count(g) - 1);
}

TEST_CASE("max principle check examples") {
  const SpaceTimeGrid g(1.0, 3, {0.0, 0.0}, {1.0, 1.0}, {4, 4});
  const GridField c(g, 2, -1.5);
  for (const auto& slice : mfc::max_principle_check(c))
    for (const auto& [lo, hi] : slice) {
      CHECK(lo == -1.5);
      CHECK(hi == -1.5);
    }
  GridField spike(g, 1);
  spike.at(2, 5)[0] = 7.0;
  const auto r = mfc::max_principle_check(spike);
  CHECK(r[2][0] == std::make_pair(0.0, 7.0));
  CHECK(r[1][0] == std::make_pair(0.0, 0.0));
}

TEST_CASE("csv round trip is exact") {
  const auto g = grid3d();
  GridField f(g, 2);
  for (std::size_t i = 0; i < f.values().size(); ++i) f.values()[i] = std::exp(0.01 * static_cast<double>(i)) / 3.0;
  const auto path = std::filesystem::temp_directory_path() / "mfc_grid_roundtrip.csv";
  mfc::write_csv(f, path);
  const GridField back = mfc::read_csv(path);
  CHECK(back.grid().same_as(g));
  CHECK(back.components() == 2);
  CHECK(back.values() == f.values());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(mfc::read_csv(path), mfc::Error);
}
