#include "mfc/prox.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mfc/parallel.hpp"

namespace mfc {

ProxSpec ProxSpec::l1(double weight) {
  if (!(weight >= 0.0)) throw ConfigError("l1 weight must be nonnegative");
  ProxSpec s;
  s.kind = Kind::l1;
  s.weight = weight;
  return s;
}

ProxSpec ProxSpec::box(std::vector<double> lo, std::vector<double> hi) {
  if (lo.size() != hi.size()) throw ConfigError("box bounds have different lengths");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] <= hi[i])) throw ConfigError("box bound lo > hi in component " + std::to_string(i));
  ProxSpec s;
  s.kind = Kind::box;
  s.lo = std::move(lo);
  s.hi = std::move(hi);
  return s;
}

std::string ProxSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::none: os << "none"; break;
    case Kind::l1: os << "l1(" << weight << ")"; break;
    case Kind::box: os << "box"; break;
  }
  return os.str();
}

namespace {

double soft_threshold(double a, double threshold) {
  // |a| == threshold maps to exactly 0
  if (std::abs(a) <= threshold) return 0.0;
  return a > 0.0 ? a - threshold : a + threshold;
}

}  // namespace

void prox_apply(const ProxSpec& spec, double tau, std::span<const double> a, std::span<double> out) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (spec.kind) {
      case ProxSpec::Kind::none: out[i] = a[i]; break;
      case ProxSpec::Kind::l1: out[i] = soft_threshold(a[i], tau * spec.weight); break;
      case ProxSpec::Kind::box: out[i] = std::clamp(a[i], spec.lo[i], spec.hi[i]); break;
    }
  }
}

double prox_apply(const ProxSpec& spec, double tau, double a) {
  double out = 0.0;
  prox_apply(spec, tau, std::span<const double>(&a, 1), std::span<double>(&out, 1));
  return out;
}

double nonsmooth_value(const ProxSpec& spec, std::span<const double> a, double tol) {
  switch (spec.kind) {
    case ProxSpec::Kind::none: return 0.0;
    case ProxSpec::Kind::l1: {
      double s = 0.0;
      for (double v : a) s += std::abs(v);
      return spec.weight * s;
    }
    case ProxSpec::Kind::box:
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] < spec.lo[i] - tol || a[i] > spec.hi[i] + tol)
          return std::numeric_limits<double>::infinity();
      return 0.0;
  }
  return 0.0;
}

}  // namespace mfc
