#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mfc {

/// Uniform space-time grid: t_j = j * dt for j = 0..M, and per spatial
/// dimension i nodes lo_i + k * h_i for k = 0..n_i - 1.
class SpaceTimeGrid {
 public:
  SpaceTimeGrid(double horizon, std::size_t time_steps, std::vector<double> lo, std::vector<double> hi,
                std::vector<std::size_t> nodes);

  double horizon() const { return horizon_; }
  std::size_t time_steps() const { return time_steps_; }
  double dt() const { return horizon_ / static_cast<double>(time_steps_); }
  double time(std::size_t j) const { return static_cast<double>(j) * dt(); }

  std::size_t dim() const { return lo_.size(); }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }
  const std::vector<std::size_t>& nodes() const { return nodes_; }
  double mesh(std::size_t i) const { return h_[i]; }
  std::size_t node_count() const { return node_count_; }
  std::size_t stride(std::size_t i) const { return stride_[i]; }

  /// Time index of t: floor(t / dt) capped at M.
  std::size_t time_index(double t) const;

  /// Flat node index <-> multi-index. The first dimension varies slowest.
  std::size_t flat(std::span<const std::size_t> multi) const;
  void unflat(std::size_t flat, std::span<std::size_t> multi) const;
  void coordinates(std::size_t flat, std::span<double> x) const;
  double coordinate(std::size_t i, std::size_t k) const { return lo_[i] + static_cast<double>(k) * h_[i]; }
  bool on_boundary(std::size_t flat) const;

  /// All node coordinates of one slice, node_count x dim.
  std::vector<double> node_coordinates() const;

  bool same_as(const SpaceTimeGrid& other) const;

 private:
  double horizon_;
  std::size_t time_steps_;
  std::vector<double> lo_, hi_, h_;
  std::vector<std::size_t> nodes_, stride_;
  std::size_t node_count_;
};

/// Corner weights of the multilinear (tent-function) interpolant at a point.
/// At most 2^d entries; weights are nonnegative and sum to one.
struct InterpolationStencil {
  std::vector<std::size_t> nodes;
  std::vector<double> weights;
};

/// Clamps x into the grid box and returns the multilinear stencil. Throws on
/// non-finite coordinates.
InterpolationStencil interpolation_stencil(const SpaceTimeGrid& grid, std::span<const double> x);

/// Grid-valued field with `components` values per node and time slice.
/// Storage is time-major, node-next, component-minor.
class GridField {
 public:
  GridField(SpaceTimeGrid grid, std::size_t components, double fill = 0.0);

  const SpaceTimeGrid& grid() const { return grid_; }
  std::size_t components() const { return components_; }

  std::span<double> slice(std::size_t j) { return std::span(values_).subspan(j * slice_size(), slice_size()); }
  std::span<const double> slice(std::size_t j) const {
    return std::span(values_).subspan(j * slice_size(), slice_size());
  }
  std::span<double> at(std::size_t j, std::size_t node) {
    return std::span(values_).subspan(j * slice_size() + node * components_, components_);
  }
  std::span<const double> at(std::size_t j, std::size_t node) const {
    return std::span(values_).subspan(j * slice_size() + node * components_, components_);
  }
  std::size_t slice_size() const { return grid_.node_count() * components_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

 private:
  SpaceTimeGrid grid_;
  std::size_t components_;
  std::vector<double> values_;
};

/// Feedback control on a grid: multilinear in space (clamped to the box),
/// piecewise constant in time on [t_j, t_{j+1}).
using PolicyField = GridField;

/// Multilinear interpolation of `field` at (t, x); writes `components` values.
void interpolate(const GridField& field, double t, std::span<const double> x, std::span<double> out);

/// Same, for a fixed time slice j.
void interpolate_slice(const GridField& field, std::size_t j, std::span<const double> x, std::span<double> out);

/// Piecewise-constant evaluation: the value stored at the lower corner of the
/// cell containing x (cells indexed 0..n_i-2 after clamping).
void cell_value_slice(const GridField& field, std::size_t j, std::span<const double> x, std::span<double> out);

/// Cell index (flat over cells, n_i - 1 per dimension) containing x after clamping.
std::size_t cell_index(const SpaceTimeGrid& grid, std::span<const double> x);
/// Cell owned by a node: per-dimension min(k_i, n_i - 2).
std::size_t node_cell(const SpaceTimeGrid& grid, std::size_t node);
std::size_t cell_count(const SpaceTimeGrid& grid);

/// Exact (min, max) of every component in every time slice; indexed [j][c].
std::vector<std::vector<std::pair<double, double>>> max_principle_check(const GridField& field);

/// CSV export: header `t,x1..xd,c1..cc`, one row per (time, node), 17
/// significant digits.
void write_csv(const GridField& field, const std::filesystem::path& path);
void write_csv(const GridField& field, std::ostream& os);

/// Reads a field written by write_csv. The grid is reconstructed from the
/// distinct coordinates in the file.
GridField read_csv(const std::filesystem::path& path);

}  // namespace mfc
