#include "mfc/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mfc/emreg.hpp"

namespace mfc {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace

RunReport run_method(const MfcProblem& problem, const RunSettings& settings, const IterationCallback& on_iteration) {
  if (settings.method == Method::emreg) return run_emreg(problem, settings, on_iteration);
  return run(problem, settings, on_iteration);
}

void write_report(const RunReport& report, const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto os = open_out(dir / "report.csv");
    os << "m,J,stderr,grad_norm,wall_ms\n";
    for (const auto& r : report.records)
      os << r.m << "," << fmt(r.J) << "," << fmt(r.std_error) << "," << fmt(r.grad_norm) << ","
         << fmt(config.wall_time ? r.wall_ms : 0.0) << "\n";
  }
  {
    nlohmann::ordered_json j;
    j["method"] = to_string(report.method);
    j["problem"] = config.problem;
    j["seed"] = report.seed;
    j["eval_seed"] = report.eval_seed;
    j["config"] = to_text(config);
    j["reference_convention"] = "J_ref is the value estimate at the final iteration of a long reference run";
    auto& recs = j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : report.records)
      recs.push_back({{"m", r.m},
                      {"J", r.J},
                      {"stderr", r.std_error},
                      {"grad_norm", r.grad_norm},
                      {"wall_ms", config.wall_time ? r.wall_ms : 0.0}});
    j["warnings"] = report.warnings;
    auto os = open_out(dir / "report.json");
    os << j.dump(2) << "\n";
  }
  if (report.phi) write_csv(*report.phi, dir / "policy_phi.csv");
  if (report.psi) write_csv(*report.psi, dir / "policy_psi.csv");
  if (config.dump_adjoint && report.last_adjoint) {
    write_csv(report.last_adjoint->u, dir / "adjoint_u.csv");
    if (report.last_adjoint->v) write_csv(*report.last_adjoint->v, dir / "adjoint_v.csv");
  }
  if (config.dump_trajectories && report.last_ensemble) write_trajectories(*report.last_ensemble, dir / "trajectories.csv");
}

int run_experiment(const RunConfig& config, std::ostream& log) {
  const auto problem = make_problem(config);
  RunSettings settings = make_settings(config);
  settings.keep_last = config.dump_adjoint || config.dump_trajectories;
  log << "running " << to_string(config.method) << " on " << config.problem << " for " << config.iterations
      << " iterations\n";
  auto progress = [&](const IterationRecord& r) {
    log << "  m=" << r.m << "  J=" << std::setprecision(8) << r.J << "  stderr=" << r.std_error
        << "  grad_norm=" << r.grad_norm << "\n";
  };
  try {
    const RunReport report = run_method(*problem, settings, progress);
    for (const auto& w : report.warnings) log << "warning: " << w << "\n";
    write_report(report, config, config.output);
  } catch (const RunFailure& e) {
    write_report(e.partial(), config, config.output);
    log << "error: " << e.what() << "\n";
    return 1;
  }
  log << "wrote " << config.output << "\n";
  return 0;
}

std::vector<double> sparsity_report(const PolicyField& policy, double threshold) {
  if (threshold < 0.0) throw ConfigError("sparsity threshold must be nonnegative");
  const auto& grid = policy.grid();
  const std::size_t k = policy.components();
  std::vector<double> out;
  for (std::size_t j = 0; j <= grid.time_steps(); ++j) {
    const auto s = policy.slice(j);
    std::size_t zeros = 0;
    for (std::size_t p = 0; p < grid.node_count(); ++p) {
      bool zero = true;
      for (std::size_t c = 0; c < k; ++c) zero = zero && std::abs(s[p * k + c]) <= threshold;
      zeros += zero;
    }
    out.push_back(static_cast<double>(zeros) / static_cast<double>(grid.node_count()));
  }
  return out;
}

double SweepCell::abs_gap() const { return std::abs(J_pre - J_ref); }
double SweepCell::rel_gap() const { return abs_gap() / std::abs(J_ref); }

namespace {

double reference_value(const RunConfig& perturbed) {
  RunConfig ref = perturbed;
  ref.method = Method::fipde;
  ref.iterations = perturbed.sweep_reference_iterations;
  ref.initial_policy.clear();
  const auto problem = make_problem(ref);
  const RunReport r = run(*problem, make_settings(ref));
  return r.records.back().J;
}

RunConfig perturb(const RunConfig& base, double q_min, double q_max) {
  if (base.problem != "portfolio") throw ConfigError("robustness sweeps are defined for the portfolio problem");
  RunConfig c = base;
  c.portfolio.q_min = q_min;
  c.portfolio.q_max = q_max;
  c.portfolio.validate();
  return c;
}

double frozen_value(const RunConfig& perturbed, const PolicyField& policy) {
  const auto problem = make_problem(perturbed);
  const std::size_t n = perturbed.eval_particles ? perturbed.eval_particles : perturbed.particles;
  return evaluate_policy(*problem, policy, n, perturbed.eval_seed).value;
}

std::vector<double> lattice(double lo, double hi, std::size_t steps) {
  std::vector<double> v;
  for (std::size_t i = 0; i < steps; ++i)
    v.push_back(steps == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1));
  return v;
}

}  // namespace

SweepCell sweep_cell(const RunConfig& base, const PolicyField& policy, double q_min, double q_max) {
  const RunConfig c = perturb(base, q_min, q_max);
  return {q_min, q_max, frozen_value(c, policy), reference_value(c)};
}

SweepResult robustness_sweep(const RunConfig& base, const PolicyField& policy, const std::filesystem::path& cache,
                             std::ostream* log) {
  if (!policy.grid().same_as(make_grid(base))) throw ConfigError("sweep policy is not on the configured grid");
  SweepResult result;
  result.q_min = lattice(base.sweep_q_min_lo, base.sweep_q_min_hi, base.sweep_steps);
  result.q_max = lattice(base.sweep_q_max_lo, base.sweep_q_max_hi, base.sweep_steps);

  std::map<std::pair<std::string, std::string>, double> cached;
  if (!cache.empty() && std::filesystem::exists(cache)) {
    std::ifstream is(cache);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      std::stringstream ss(line);
      std::string a, b, v;
      if (std::getline(ss, a, ',') && std::getline(ss, b, ',') && std::getline(ss, v)) cached[{a, b}] = std::stod(v);
    }
  }
  for (double qmin : result.q_min)
    for (double qmax : result.q_max) {
      if (!(qmin < qmax)) {
        result.cells.push_back({qmin, qmax, std::nan(""), std::nan("")});
        continue;
      }
      const RunConfig c = perturb(base, qmin, qmax);
      SweepCell cell{qmin, qmax, frozen_value(c, policy), 0.0};
      const auto key = std::make_pair(fmt(qmin), fmt(qmax));
      if (auto it = cached.find(key); it != cached.end()) {
        cell.J_ref = it->second;
      } else {
        cell.J_ref = reference_value(c);
        cached[key] = cell.J_ref;
        if (!cache.empty()) {
          const bool fresh = !std::filesystem::exists(cache);
          std::ofstream os(cache, std::ios::app);
          if (fresh) os << "q_min,q_max,J_ref\n";
          os << key.first << "," << key.second << "," << fmt(cell.J_ref) << "\n";
        }
      }
      if (log)
        *log << "  cell (" << qmin << ", " << qmax << "): J_pre=" << cell.J_pre << " J_ref=" << cell.J_ref
             << " rel_gap=" << cell.rel_gap() << "\n";
      result.cells.push_back(cell);
    }
  return result;
}

void write_sweep(const SweepResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto matrix = [&](const std::string& name, auto value) {
    auto os = open_out(dir / name);
    os << "q_min\\q_max";
    for (double q : result.q_max) os << "," << fmt(q);
    os << "\n";
    for (std::size_t i = 0; i < result.q_min.size(); ++i) {
      os << fmt(result.q_min[i]);
      for (std::size_t j = 0; j < result.q_max.size(); ++j)
        os << "," << fmt(value(result.cells[i * result.q_max.size() + j]));
      os << "\n";
    }
  };
  matrix("J_pre.csv", [](const SweepCell& c) { return c.J_pre; });
  matrix("J_ref.csv", [](const SweepCell& c) { return c.J_ref; });
  matrix("abs_gap.csv", [](const SweepCell& c) { return c.abs_gap(); });
  matrix("rel_gap.csv", [](const SweepCell& c) { return c.rel_gap(); });
}

}  // namespace mfc
