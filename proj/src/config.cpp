#include "mfc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

namespace mfc {

namespace {

struct ValueError {
  std::string message;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) throw ValueError{"expected a number, got '" + s + "'"};
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ValueError{"expected a nonnegative integer, got '" + s + "'"};
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValueError{"expected true or false, got '" + s + "'"};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  if (out.empty()) throw ValueError{"expected a comma-separated list"};
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

enum class Range { any, positive, nonnegative };

void check_range(double v, Range r) {
  if (r == Range::positive && !(v > 0.0)) throw ValueError{"must be positive, got " + fmt(v)};
  if (r == Range::nonnegative && !(v >= 0.0)) throw ValueError{"must be nonnegative, got " + fmt(v)};
}

struct Key {
  std::string name;
  std::string scope;  // "" or a problem name
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Get>
Key real_key(std::string name, std::string scope, Get member, Range range = Range::any) {
  return {std::move(name), std::move(scope),
          [member, range](RunConfig& c, const std::string& v) {
            const double x = to_double(v);
            check_range(x, range);
            member(c) = x;
          },
          [member](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }};
}

template <typename T, typename Get>
Key int_key(std::string name, Get member, bool positive) {
  return {std::move(name), "",
          [member, positive](RunConfig& c, const std::string& v) {
            if (!v.empty() && v.front() == '-') throw ValueError{"must be nonnegative, got " + v};
            const std::uint64_t x = to_u64(v);
            if (positive && x == 0) throw ValueError{"must be positive, got 0"};
            member(c) = static_cast<T>(x);
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Get>
Key bool_key(std::string name, Get member) {
  return {std::move(name), "", [member](RunConfig& c, const std::string& v) { member(c) = to_bool(v); },
          [member](const RunConfig& c) { return std::string(member(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

template <typename Get>
Key string_key(std::string name, Get member) {
  return {std::move(name), "", [member](RunConfig& c, const std::string& v) { member(c) = unquote(v); },
          [member](const RunConfig& c) { return "\"" + member(const_cast<RunConfig&>(c)) + "\""; }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> keys = [] {
    std::vector<Key> k;
    k.push_back({"method", "", [](RunConfig& c, const std::string& v) { c.method = parse_method(v); },
                 [](const RunConfig& c) { return to_string(c.method); }});
    k.push_back({"grid.lo", "",
                 [](RunConfig& c, const std::string& v) {
                   c.grid_lo.clear();
                   for (const auto& s : split_list(v)) c.grid_lo.push_back(to_double(s));
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.grid_lo.size(); ++i) s += (i ? ", " : "") + fmt(c.grid_lo[i]);
                   return s;
                 }});
    k.push_back({"grid.hi", "",
                 [](RunConfig& c, const std::string& v) {
                   c.grid_hi.clear();
                   for (const auto& s : split_list(v)) c.grid_hi.push_back(to_double(s));
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.grid_hi.size(); ++i) s += (i ? ", " : "") + fmt(c.grid_hi[i]);
                   return s;
                 }});
    k.push_back({"grid.cells", "",
                 [](RunConfig& c, const std::string& v) {
                   c.grid_cells.clear();
                   for (const auto& s : split_list(v)) {
                     const auto n = to_u64(s);
                     if (n < 2) throw ValueError{"each dimension needs at least 2 cells"};
                     c.grid_cells.push_back(static_cast<std::size_t>(n));
                   }
                 },
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.grid_cells.size(); ++i)
                     s += (i ? ", " : "") + std::to_string(c.grid_cells[i]);
                   return s;
                 }});
    k.push_back(int_key<std::size_t>("grid.time_steps", [](RunConfig& c) -> auto& { return c.time_steps; }, true));
    k.push_back(int_key<std::size_t>("particles", [](RunConfig& c) -> auto& { return c.particles; }, true));
    k.push_back(int_key<std::size_t>("eval_particles", [](RunConfig& c) -> auto& { return c.eval_particles; }, false));
    k.push_back(real_key("tau", "", [](RunConfig& c) -> auto& { return c.tau; }, Range::positive));
    k.push_back(int_key<std::size_t>("iterations", [](RunConfig& c) -> auto& { return c.iterations; }, false));
    k.push_back(int_key<std::uint64_t>("seed", [](RunConfig& c) -> auto& { return c.seed; }, false));
    k.push_back(int_key<std::uint64_t>("eval_seed", [](RunConfig& c) -> auto& { return c.eval_seed; }, false));
    k.push_back(real_key("momentum_cap", "", [](RunConfig& c) -> auto& { return c.momentum_cap; }));
    k.push_back(bool_key("resample_each_iteration", [](RunConfig& c) -> auto& { return c.resample_each_iteration; }));
    k.push_back({"solver", "",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "direct")
                     c.solver = LinearSolver::direct;
                   else if (v == "gauss_seidel")
                     c.solver = LinearSolver::gauss_seidel;
                   else
                     throw ValueError{"expected direct or gauss_seidel, got '" + v + "'"};
                 },
                 [](const RunConfig& c) {
                   return std::string(c.solver == LinearSolver::direct ? "direct" : "gauss_seidel");
                 }});
    k.push_back(real_key("solver.tolerance", "", [](RunConfig& c) -> auto& { return c.solver_tolerance; },
                         Range::positive));
    k.push_back(int_key<std::size_t>("solver.max_sweeps", [](RunConfig& c) -> auto& { return c.max_sweeps; }, true));
    k.push_back(
        int_key<std::size_t>("kernel_subsample", [](RunConfig& c) -> auto& { return c.kernel_subsample; }, false));
    k.push_back(string_key("output", [](RunConfig& c) -> auto& { return c.output; }));
    k.push_back(string_key("initial_policy", [](RunConfig& c) -> auto& { return c.initial_policy; }));
    k.push_back(bool_key("dump_adjoint", [](RunConfig& c) -> auto& { return c.dump_adjoint; }));
    k.push_back(bool_key("dump_trajectories", [](RunConfig& c) -> auto& { return c.dump_trajectories; }));
    k.push_back(bool_key("report.wall_time", [](RunConfig& c) -> auto& { return c.wall_time; }));
    k.push_back(real_key("sweep.q_min_lo", "", [](RunConfig& c) -> auto& { return c.sweep_q_min_lo; }));
    k.push_back(real_key("sweep.q_min_hi", "", [](RunConfig& c) -> auto& { return c.sweep_q_min_hi; }));
    k.push_back(real_key("sweep.q_max_lo", "", [](RunConfig& c) -> auto& { return c.sweep_q_max_lo; }));
    k.push_back(real_key("sweep.q_max_hi", "", [](RunConfig& c) -> auto& { return c.sweep_q_max_hi; }));
    k.push_back(int_key<std::size_t>("sweep.steps", [](RunConfig& c) -> auto& { return c.sweep_steps; }, true));
    k.push_back(int_key<std::size_t>("sweep.reference_iterations",
                                     [](RunConfig& c) -> auto& { return c.sweep_reference_iterations; }, false));

    const std::string pf = "portfolio";
    k.push_back(real_key("problem.T", pf, [](RunConfig& c) -> auto& { return c.portfolio.horizon; }, Range::positive));
    k.push_back(real_key("problem.s0", pf, [](RunConfig& c) -> auto& { return c.portfolio.s0; }));
    k.push_back(real_key("problem.lambda", pf, [](RunConfig& c) -> auto& { return c.portfolio.lambda; }));
    k.push_back(
        real_key("problem.sigma", pf, [](RunConfig& c) -> auto& { return c.portfolio.sigma; }, Range::nonnegative));
    k.push_back(real_key("problem.gamma", pf, [](RunConfig& c) -> auto& { return c.portfolio.gamma; }));
    k.push_back(real_key("problem.k1", pf, [](RunConfig& c) -> auto& { return c.portfolio.k1; }, Range::positive));
    k.push_back(real_key("problem.k2", pf, [](RunConfig& c) -> auto& { return c.portfolio.k2; }, Range::nonnegative));
    k.push_back(real_key("problem.q_min", pf, [](RunConfig& c) -> auto& { return c.portfolio.q_min; }));
    k.push_back(real_key("problem.q_max", pf, [](RunConfig& c) -> auto& { return c.portfolio.q_max; }));

    const std::string cs = "cs2d";
    k.push_back(real_key("problem.T", cs, [](RunConfig& c) -> auto& { return c.cs.horizon; }, Range::positive));
    k.push_back(real_key("problem.K", cs, [](RunConfig& c) -> auto& { return c.cs.coupling; }));
    k.push_back(real_key("problem.beta", cs, [](RunConfig& c) -> auto& { return c.cs.beta; }, Range::nonnegative));
    k.push_back(real_key("problem.sigma", cs, [](RunConfig& c) -> auto& { return c.cs.sigma; }, Range::nonnegative));
    k.push_back(real_key("problem.gamma1", cs, [](RunConfig& c) -> auto& { return c.cs.gamma1; }, Range::positive));
    k.push_back(
        real_key("problem.gamma2", cs, [](RunConfig& c) -> auto& { return c.cs.gamma2; }, Range::nonnegative));
    k.push_back(real_key("problem.mean1_x", cs, [](RunConfig& c) -> auto& { return c.cs.mean1_x; }));
    k.push_back(real_key("problem.mean1_v", cs, [](RunConfig& c) -> auto& { return c.cs.mean1_v; }));
    k.push_back(real_key("problem.mean2_x", cs, [](RunConfig& c) -> auto& { return c.cs.mean2_x; }));
    k.push_back(real_key("problem.mean2_v", cs, [](RunConfig& c) -> auto& { return c.cs.mean2_v; }));
    k.push_back(real_key("problem.weight1", cs, [](RunConfig& c) -> auto& { return c.cs.weight1; }));
    k.push_back(
        real_key("problem.variance", cs, [](RunConfig& c) -> auto& { return c.cs.variance; }, Range::nonnegative));
    return k;
  }();
  return keys;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string nearest_key(const std::string& key, const std::string& problem) {
  std::string best = "problem";
  std::size_t best_d = edit_distance(key, best);
  for (const auto& k : key_table()) {
    if (!k.scope.empty() && k.scope != problem) continue;
    const std::size_t d = edit_distance(key, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

void apply_problem_defaults(RunConfig& c) {
  c.time_steps = 50;
  c.grid_cells = {50, 50};
  c.tau = 1.0 / 6.0;
  c.particles = 10000;
  c.iterations = 20;
  if (c.problem == "portfolio") {
    c.grid_lo = {-2.0, 0.0};
    c.grid_hi = {6.0, 4.0};
  } else {
    c.grid_lo = {0.0, 0.0};
    c.grid_hi = {5.0, 4.0};
  }
}

struct Line {
  std::size_t number;
  std::string key, value;
};

}  // namespace

RunConfig parse_config_text(const std::string& text, const std::string& source) {
  std::vector<Line> lines;
  std::istringstream is(text);
  std::string raw;
  std::size_t number = 0;
  auto fail = [&](std::size_t line, const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
  };
  while (std::getline(is, raw)) {
    ++number;
    std::string s = raw;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') quoted = !quoted;
      if (s[i] == '#' && !quoted) {
        s.resize(i);
        break;
      }
    }
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(number, "expected 'key = value'");
    Line l{number, trim(s.substr(0, eq)), trim(s.substr(eq + 1))};
    if (l.key.empty()) fail(number, "missing key");
    if (l.value.empty()) fail(number, "missing value for '" + l.key + "'");
    for (const auto& prev : lines)
      if (prev.key == l.key)
        fail(number, "duplicate key '" + l.key + "' (first set on line " + std::to_string(prev.number) + ")");
    lines.push_back(std::move(l));
  }

  RunConfig c;
  const auto it = std::find_if(lines.begin(), lines.end(), [](const Line& l) { return l.key == "problem"; });
  if (it == lines.end()) throw ConfigError(source + ": missing required key 'problem' (portfolio or cs2d)");
  c.problem = unquote(it->value);
  if (c.problem != "portfolio" && c.problem != "cs2d")
    fail(it->number, "unknown problem '" + c.problem + "' (expected portfolio or cs2d)");
  apply_problem_defaults(c);

  for (const auto& l : lines) {
    if (l.key == "problem") continue;
    const auto& table = key_table();
    const auto key = std::find_if(table.begin(), table.end(), [&](const Key& k) {
      return k.name == l.key && (k.scope.empty() || k.scope == c.problem);
    });
    if (key == table.end())
      fail(l.number, "unknown key '" + l.key + "' for problem " + c.problem + "; did you mean '" +
                         nearest_key(l.key, c.problem) + "'?");
    try {
      key->set(c, l.value);
    } catch (const ValueError& e) {
      fail(l.number, "key '" + l.key + "': " + e.message);
    } catch (const ConfigError& e) {
      fail(l.number, e.what());
    }
  }

  if (c.grid_lo.size() != 2 || c.grid_hi.size() != 2 || c.grid_cells.size() != 2)
    throw ConfigError(source + ": grid.lo, grid.hi and grid.cells need two entries");
  for (std::size_t i = 0; i < 2; ++i)
    if (!(c.grid_lo[i] < c.grid_hi[i])) throw ConfigError(source + ": grid.lo must be below grid.hi");
  if (c.sweep_q_min_lo > c.sweep_q_min_hi || c.sweep_q_max_lo > c.sweep_q_max_hi)
    throw ConfigError(source + ": sweep ranges must be ordered");
  try {
    if (c.problem == "portfolio")
      c.portfolio.validate();
    else
      c.cs.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::string to_text(const RunConfig& config) {
  std::ostringstream os;
  os << "problem = " << config.problem << "\n";
  for (const auto& k : key_table())
    if (k.scope.empty() || k.scope == config.problem) os << k.name << " = " << k.get(config) << "\n";
  return os.str();
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out{"problem"};
  for (const auto& k : key_table())
    if (std::find(out.begin(), out.end(), k.name) == out.end()) out.push_back(k.name);
  return out;
}

std::unique_ptr<MfcProblem> make_problem(const RunConfig& config) {
  if (config.problem == "portfolio") return std::make_unique<PortfolioProblem>(config.portfolio);
  if (config.problem == "cs2d") return std::make_unique<CuckerSmaleProblem>(config.cs);
  throw ConfigError("unknown problem '" + config.problem + "'");
}

SpaceTimeGrid make_grid(const RunConfig& config) {
  const double horizon = config.problem == "portfolio" ? config.portfolio.horizon : config.cs.horizon;
  std::vector<std::size_t> nodes;
  for (auto c : config.grid_cells) nodes.push_back(c + 1);
  return SpaceTimeGrid(horizon, config.time_steps, config.grid_lo, config.grid_hi, nodes);
}

RunSettings make_settings(const RunConfig& config) {
  RunSettings s;
  s.method = config.method;
  s.grid = make_grid(config);
  s.particles = config.particles;
  s.eval_particles = config.eval_particles;
  s.tau = config.tau;
  s.iterations = config.iterations;
  s.momentum_cap = config.momentum_cap;
  s.seed = config.seed;
  s.eval_seed = config.eval_seed;
  s.resample_each_iteration = config.resample_each_iteration;
  s.solver.solver = config.solver;
  s.solver.tolerance = config.solver_tolerance;
  s.solver.max_sweeps = config.max_sweeps;
  s.solver.kernel_subsample = config.kernel_subsample;
  s.solver.subsample_seed = CounterRng::derive(config.seed, 0x5eed);
  if (!config.initial_policy.empty()) {
    GridField p = read_csv(config.initial_policy);
    if (!p.grid().same_as(s.grid))
      throw ConfigError("initial policy " + config.initial_policy + " is not on the configured grid");
    s.initial_policy = std::move(p);
  }
  return s;
}

}  // namespace mfc
