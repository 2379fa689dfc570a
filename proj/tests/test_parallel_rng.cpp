#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mfc/parallel.hpp"
#include "mfc/rng.hpp"

namespace {

struct WorkerGuard {
  ~WorkerGuard() { mfc::set_worker_count(0); }
};

}  // namespace

TEST_CASE("chunked_sum is bitwise independent of the worker count") {
  WorkerGuard guard;
  const std::size_t n = 100003;
  auto term = [](std::size_t i) { return std::sin(0.37 * static_cast<double>(i)) / (1.0 + static_cast<double>(i)); };
  mfc::set_worker_count(1);
  const double one = mfc::chunked_sum(n, term);
  for (std::size_t w : {2u, 3u, 8u}) {
    mfc::set_worker_count(w);
    CHECK(mfc::chunked_sum(n, term) == one);
  }
}

TEST_CASE("parallel_for visits every index once") {
  WorkerGuard guard;
  mfc::set_worker_count(4);
  std::vector<int> hits(5000, 0);
  mfc::parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) REQUIRE(h == 1);
}

TEST_CASE("parallel_chunks rethrows a worker exception") {
  WorkerGuard guard;
  mfc::set_worker_count(4);
  CHECK_THROWS_AS(mfc::parallel_for(10000, [](std::size_t i) {
                    if (i == 7777) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
  mfc::set_worker_count(1);
  CHECK_THROWS_AS(mfc::parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("counter rng is a pure function of its counters") {
  const mfc::CounterRng a(42), b(42), c(43);
  CHECK(a.bits(1, 2, 3) == b.bits(1, 2, 3));
  CHECK(a.bits(1, 2, 3) != c.bits(1, 2, 3));
  CHECK(a.bits(1, 2, 3) != a.bits(1, 2, 4));
  CHECK(a.bits(1, 2, 3) != a.bits(2, 2, 3));
  CHECK(mfc::CounterRng::derive(1, 0) != mfc::CounterRng::derive(1, 1));
}

TEST_CASE("uniform and normal draws have the right moments") {
  const mfc::CounterRng rng(7);
  const std::size_t n = 200000;
  double su = 0.0, su2 = 0.0, sn = 0.0, sn2 = 0.0, sn4 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(mfc::rng_stream::kBrownian, i, 0);
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    const double z = rng.normal(mfc::rng_stream::kBrownian, i, i % 3);
    sn += z;
    sn2 += z * z;
    sn4 += z * z * z * z;
  }
  const double dn = static_cast<double>(n);
  CHECK(su / dn == doctest::Approx(0.5).epsilon(0.01));
  CHECK(su2 / dn == doctest::Approx(1.0 / 3.0).epsilon(0.01));
  CHECK(std::abs(sn / dn) < 3.0 * std::sqrt(1.0 / dn));
  CHECK(std::abs(sn2 / dn - 1.0) < 3.0 * std::sqrt(2.0 / dn));
  CHECK(std::abs(sn4 / dn - 3.0) < 3.0 * std::sqrt(96.0 / dn));
}
