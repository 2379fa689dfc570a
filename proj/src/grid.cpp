#include "mfc/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "mfc/parallel.hpp"

namespace mfc {

SpaceTimeGrid::SpaceTimeGrid(double horizon, std::size_t time_steps, std::vector<double> lo, std::vector<double> hi,
                             std::vector<std::size_t> nodes)
    : horizon_(horizon), time_steps_(time_steps), lo_(std::move(lo)), hi_(std::move(hi)), nodes_(std::move(nodes)) {
  if (!(horizon_ > 0.0)) throw ConfigError("grid horizon must be positive");
  if (time_steps_ < 1) throw ConfigError("grid needs at least one time step");
  if (lo_.empty() || lo_.size() != hi_.size() || lo_.size() != nodes_.size())
    throw ConfigError("grid bounds and node counts must have matching nonzero dimension");
  const std::size_t d = lo_.size();
  h_.resize(d);
  stride_.resize(d);
  node_count_ = 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (nodes_[i] < 2) throw ConfigError("grid needs at least 2 nodes per dimension");
    if (!(lo_[i] < hi_[i])) throw ConfigError("grid bound lo must be below hi");
    h_[i] = (hi_[i] - lo_[i]) / static_cast<double>(nodes_[i] - 1);
  }
  for (std::size_t i = d; i-- > 0;) {
    stride_[i] = node_count_;
    node_count_ *= nodes_[i];
  }
}

std::size_t SpaceTimeGrid::time_index(double t) const {
  const double r = t / dt();
  // absorb rounding in t = j * dt
  const double f = std::floor(r + 1e-9);
  if (f <= 0.0) return 0;
  return std::min<std::size_t>(static_cast<std::size_t>(f), time_steps_);
}

std::size_t SpaceTimeGrid::flat(std::span<const std::size_t> multi) const {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < dim(); ++i) idx += multi[i] * stride_[i];
  return idx;
}

void SpaceTimeGrid::unflat(std::size_t flat, std::span<std::size_t> multi) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    multi[i] = flat / stride_[i];
    flat %= stride_[i];
  }
}

void SpaceTimeGrid::coordinates(std::size_t flat, std::span<double> x) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    const std::size_t k = flat / stride_[i];
    flat %= stride_[i];
    x[i] = coordinate(i, k);
  }
}

bool SpaceTimeGrid::on_boundary(std::size_t flat) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    const std::size_t k = flat / stride_[i];
    flat %= stride_[i];
    if (k == 0 || k + 1 == nodes_[i]) return true;
  }
  return false;
}

std::vector<double> SpaceTimeGrid::node_coordinates() const {
  std::vector<double> xs(node_count_ * dim());
  for (std::size_t p = 0; p < node_count_; ++p) coordinates(p, std::span(xs).subspan(p * dim(), dim()));
  return xs;
}

bool SpaceTimeGrid::same_as(const SpaceTimeGrid& other) const {
  return horizon_ == other.horizon_ && time_steps_ == other.time_steps_ && lo_ == other.lo_ && hi_ == other.hi_ &&
         nodes_ == other.nodes_;
}

namespace {

// Coordinates that land on a node up to rounding are moved onto it.
double snap(double r) {
  const double n = std::nearbyint(r);
  return std::abs(r - n) <= 1e-10 * std::max(1.0, n) ? n : r;
}

}  // namespace

InterpolationStencil interpolation_stencil(const SpaceTimeGrid& grid, std::span<const double> x) {
  const std::size_t d = grid.dim();
  std::vector<std::size_t> base(d);
  std::vector<double> frac(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::isfinite(x[i]))
      throw Error("interpolate: non-finite coordinate x" + std::to_string(i + 1));
    const double xi = std::clamp(x[i], grid.lo()[i], grid.hi()[i]);
    const double r = snap((xi - grid.lo()[i]) / grid.mesh(i));
    std::size_t k = static_cast<std::size_t>(std::floor(r));
    k = std::min(k, grid.nodes()[i] - 2);
    base[i] = k;
    frac[i] = std::clamp(r - static_cast<double>(k), 0.0, 1.0);
  }
  InterpolationStencil s;
  const std::size_t corners = std::size_t{1} << d;
  s.nodes.reserve(corners);
  s.weights.reserve(corners);
  for (std::size_t c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const bool upper = (c >> i) & 1U;
      w *= upper ? frac[i] : 1.0 - frac[i];
      idx += (base[i] + (upper ? 1 : 0)) * grid.stride(i);
    }
    if (w == 0.0) continue;
    s.nodes.push_back(idx);
    s.weights.push_back(w);
  }
  return s;
}

GridField::GridField(SpaceTimeGrid grid, std::size_t components, double fill)
    : grid_(std::move(grid)), components_(components) {
  if (components_ == 0) throw ConfigError("grid field needs at least one component");
  values_.assign((grid_.time_steps() + 1) * grid_.node_count() * components_, fill);
}

void interpolate_slice(const GridField& field, std::size_t j, std::span<const double> x, std::span<double> out) {
  const auto& grid = field.grid();
  const std::size_t c = field.components();
  const std::size_t d = grid.dim();
  const auto slice = field.slice(j);

  // Inline 2D path; the generic stencil allocates.
  if (d == 2) {
    std::size_t base[2];
    double frac[2];
    for (std::size_t i = 0; i < 2; ++i) {
      if (!std::isfinite(x[i])) throw Error("interpolate: non-finite coordinate x" + std::to_string(i + 1));
      const double xi = std::clamp(x[i], grid.lo()[i], grid.hi()[i]);
      const double r = snap((xi - grid.lo()[i]) / grid.mesh(i));
      std::size_t k = static_cast<std::size_t>(r);
      k = std::min(k, grid.nodes()[i] - 2);
      base[i] = k;
      frac[i] = std::clamp(r - static_cast<double>(k), 0.0, 1.0);
    }
    const std::size_t s0 = grid.stride(0), s1 = grid.stride(1);
    const std::size_t n00 = base[0] * s0 + base[1] * s1;
    const double w00 = (1 - frac[0]) * (1 - frac[1]), w10 = frac[0] * (1 - frac[1]);
    const double w01 = (1 - frac[0]) * frac[1], w11 = frac[0] * frac[1];
    for (std::size_t q = 0; q < c; ++q) {
      double v = w00 * slice[n00 * c + q];
      if (w10 != 0.0) v += w10 * slice[(n00 + s0) * c + q];
      if (w01 != 0.0) v += w01 * slice[(n00 + s1) * c + q];
      if (w11 != 0.0) v += w11 * slice[(n00 + s0 + s1) * c + q];
      out[q] = v;
    }
    return;
  }

  const auto st = interpolation_stencil(grid, x);
  for (std::size_t q = 0; q < c; ++q) {
    double v = 0.0;
    for (std::size_t s = 0; s < st.nodes.size(); ++s) v += st.weights[s] * slice[st.nodes[s] * c + q];
    out[q] = v;
  }
}

void interpolate(const GridField& field, double t, std::span<const double> x, std::span<double> out) {
  interpolate_slice(field, field.grid().time_index(t), x, out);
}

std::size_t cell_index(const SpaceTimeGrid& grid, std::span<const double> x) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid.dim(); ++i) {
    if (!std::isfinite(x[i])) throw Error("cell_index: non-finite coordinate x" + std::to_string(i + 1));
    const double xi = std::clamp(x[i], grid.lo()[i], grid.hi()[i]);
    std::size_t k = static_cast<std::size_t>(std::floor((xi - grid.lo()[i]) / grid.mesh(i)));
    k = std::min(k, grid.nodes()[i] - 2);
    idx = idx * (grid.nodes()[i] - 1) + k;
  }
  return idx;
}

std::size_t node_cell(const SpaceTimeGrid& grid, std::size_t node) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < grid.dim(); ++i) {
    std::size_t k = node / grid.stride(i);
    node %= grid.stride(i);
    k = std::min(k, grid.nodes()[i] - 2);
    idx = idx * (grid.nodes()[i] - 1) + k;
  }
  return idx;
}

std::size_t cell_count(const SpaceTimeGrid& grid) {
  std::size_t n = 1;
  for (auto k : grid.nodes()) n *= k - 1;
  return n;
}

void cell_value_slice(const GridField& field, std::size_t j, std::span<const double> x, std::span<double> out) {
  const auto& grid = field.grid();
  std::size_t node = 0;
  for (std::size_t i = 0; i < grid.dim(); ++i) {
    if (!std::isfinite(x[i])) throw Error("cell_value: non-finite coordinate x" + std::to_string(i + 1));
    const double xi = std::clamp(x[i], grid.lo()[i], grid.hi()[i]);
    std::size_t k = static_cast<std::size_t>(std::floor((xi - grid.lo()[i]) / grid.mesh(i)));
    k = std::min(k, grid.nodes()[i] - 2);
    node += k * grid.stride(i);
  }
  const auto v = field.at(j, node);
  std::copy(v.begin(), v.end(), out.begin());
}

std::vector<std::vector<std::pair<double, double>>> max_principle_check(const GridField& field) {
  const std::size_t c = field.components();
  const std::size_t slices = field.grid().time_steps() + 1;
  std::vector<std::vector<std::pair<double, double>>> out(slices);
  for (std::size_t j = 0; j < slices; ++j) {
    out[j].assign(c, {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
    const auto s = field.slice(j);
    for (std::size_t p = 0; p < field.grid().node_count(); ++p)
      for (std::size_t q = 0; q < c; ++q) {
        auto& [lo, hi] = out[j][q];
        lo = std::min(lo, s[p * c + q]);
        hi = std::max(hi, s[p * c + q]);
      }
  }
  return out;
}

void write_csv(const GridField& field, std::ostream& os) {
  const auto& grid = field.grid();
  const std::size_t d = grid.dim();
  const std::size_t c = field.components();
  os << "t";
  for (std::size_t i = 0; i < d; ++i) os << ",x" << i + 1;
  for (std::size_t q = 0; q < c; ++q) os << ",c" << q + 1;
  os << "\n";
  os << std::setprecision(17);
  std::vector<double> x(d);
  for (std::size_t j = 0; j <= grid.time_steps(); ++j) {
    for (std::size_t p = 0; p < grid.node_count(); ++p) {
      grid.coordinates(p, x);
      os << grid.time(j);
      for (double xi : x) os << "," << xi;
      for (double v : field.at(j, p)) os << "," << v;
      os << "\n";
    }
  }
}

void write_csv(const GridField& field, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_csv(field, os);
}

GridField read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open policy file " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(path.string() + ": empty file");
  std::size_t d = 0, c = 0;
  {
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (!col.empty() && col[0] == 'x') ++d;
      if (!col.empty() && col[0] == 'c') ++c;
    }
  }
  if (d == 0 || c == 0) throw Error(path.string() + ": header must be t,x1..xd,c1..cc");

  std::vector<std::vector<double>> rows;
  std::set<double> times;
  std::vector<std::set<double>> coords(d);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": not a number: " + cell);
      }
    }
    if (row.size() != 1 + d + c) throw Error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    times.insert(row[0]);
    for (std::size_t i = 0; i < d; ++i) coords[i].insert(row[1 + i]);
    rows.push_back(std::move(row));
  }
  if (times.size() < 2) throw Error(path.string() + ": need at least two time slices");
  std::vector<double> lo(d), hi(d);
  std::vector<std::size_t> nodes(d);
  for (std::size_t i = 0; i < d; ++i) {
    lo[i] = *coords[i].begin();
    hi[i] = *coords[i].rbegin();
    nodes[i] = coords[i].size();
  }
  SpaceTimeGrid grid(*times.rbegin(), times.size() - 1, lo, hi, nodes);
  if (rows.size() != times.size() * grid.node_count()) throw Error(path.string() + ": incomplete grid");
  GridField field(grid, c);
  std::size_t r = 0;
  for (std::size_t j = 0; j <= grid.time_steps(); ++j)
    for (std::size_t p = 0; p < grid.node_count(); ++p, ++r)
      for (std::size_t q = 0; q < c; ++q) field.at(j, p)[q] = rows[r][1 + d + q];
  return field;
}

}  // namespace mfc
