#pragma once

#include <span>
#include <string>
#include <vector>

namespace mfc {

/// Nonsmooth control cost and its proximal map.
///   none : zero cost
///   l1   : weight * |a|_1
///   box  : indicator of [lo, hi] (componentwise)
struct ProxSpec {
  enum class Kind { none, l1, box };

  Kind kind = Kind::none;
  double weight = 0.0;
  std::vector<double> lo;
  std::vector<double> hi;

  static ProxSpec none() { return {}; }
  static ProxSpec l1(double weight);
  static ProxSpec box(std::vector<double> lo, std::vector<double> hi);

  std::string describe() const;
};

/// Componentwise minimizer of 0.5|z - a|^2 + tau * l(z), written to out.
void prox_apply(const ProxSpec& spec, double tau, std::span<const double> a, std::span<double> out);

/// Scalar convenience for single-control problems.
double prox_apply(const ProxSpec& spec, double tau, double a);

/// l(a). For box this is 0 inside [lo - tol, hi + tol] and +inf outside.
double nonsmooth_value(const ProxSpec& spec, std::span<const double> a, double tol = 0.0);

}  // namespace mfc
