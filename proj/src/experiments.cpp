#include "mloc/experiments.hpp"

#include "mloc/estimators.hpp"
#include "mloc/mesh.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <thread>
#include <vector>

namespace mloc {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Staged output files; nothing touches the disk until write_all, so a
/// failed run leaves no partial outputs behind.
struct OutputBundle {
  std::vector<std::pair<std::string, std::string>> files;

  void add(const std::string& name, const std::string& content) {
    files.emplace_back(name, content);
  }
  void write_all(const fs::path& dir) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory: " + dir.string());
    std::vector<fs::path> written;
    for (const auto& [name, content] : files) {
      const fs::path p = dir / name;
      std::ofstream out(p, std::ios::binary);
      if (!out || !(out << content)) {
        for (const auto& w : written) fs::remove(w, ec);
        throw std::runtime_error("failed to write " + p.string());
      }
      written.push_back(p);
    }
  }
};

struct ResolvedSetup {
  std::string experiment;
  std::string out_dir;
  std::uint64_t master_seed = 0;
  int threads = 1;
  ProblemConfig problem;
  int coarsest_level = 2;
};

ScalarField resolve_z(const std::string& spec_str) {
  if (spec_str == "paper" || spec_str == "sincos") {
    return [](Point p) {
      return std::sin(2.0 * std::numbers::pi * p.x) * std::cos(std::numbers::pi * p.y);
    };
  }
  try {
    std::size_t pos = 0;
    const double c = std::stod(spec_str, &pos);
    if (pos == spec_str.size()) {
      return [c](Point) { return c; };
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("ocp.z: expected `paper` or a constant, got: " + spec_str);
}

ResolvedSetup resolve_setup(const Config& cfg, const RunOptions& opts) {
  ResolvedSetup s;
  s.experiment = cfg.get_string("experiment", "");
  if (s.experiment.empty()) throw ConfigError("missing `experiment` key");
  s.out_dir = opts.out_override.value_or(cfg.get_string("out_dir", "out"));
  s.master_seed = opts.seed_override.value_or(cfg.get_u64("seed.master", 20260810));

  const std::string threads = cfg.get_string("threads", "1");
  if (threads == "auto") {
    s.threads = std::max(1u, std::thread::hardware_concurrency());
  } else {
    s.threads = cfg.get_int("threads", 1);
    if (s.threads < 1) throw ConfigError("threads must be >= 1 (or `auto`)");
  }

  auto amplitudes = cfg.get_doubles("field.amplitudes");
  if (amplitudes.empty()) amplitudes = {0.84, 0.45, 0.45, 0.25};
  if (amplitudes.size() != 4) throw ConfigError("field.amplitudes: expected 4 values");
  const double f_lo = cfg.get_double("field.freq_low", 0.42 * std::numbers::pi);
  const double f_hi = cfg.get_double("field.freq_high", 1.17 * std::numbers::pi);
  s.problem.basis = KLBasis::default_basis({amplitudes[0], amplitudes[1], amplitudes[2],
                                            amplitudes[3]},
                                           f_lo, f_hi);

  OCPConfig& ocp = s.problem.ocp;
  ocp.alpha = cfg.get_double("ocp.alpha", 1e-2);
  ocp.z = resolve_z(cfg.get_string("ocp.z", "paper"));
  ocp.u_a = cfg.get_double("ocp.u_a", -std::numeric_limits<double>::infinity());
  ocp.u_b = cfg.get_double("ocp.u_b", std::numeric_limits<double>::infinity());
  ocp.newton_tol = cfg.get_double("ocp.newton_tol", 1e-10);
  ocp.newton_maxit = cfg.get_int("ocp.newton_maxit", 50);
  ocp.solve_rtol = cfg.get_double("fem.solve_rtol", 1e-12);
  const std::string ci = cfg.get_string("ocp.control_integration", "quadrature5");
  if (ci == "quadrature5") {
    ocp.control_integration = ControlIntegration::quadrature5;
  } else if (ci == "cutcell") {
    throw ConfigError("ocp.control_integration = cutcell is reserved but not implemented");
  } else {
    throw ConfigError("ocp.control_integration: unknown value " + ci);
  }
  try {
    ocp.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }

  const std::string quad = cfg.get_string("fem.coeff_quadrature", "centroid");
  if (quad == "centroid") {
    s.problem.coeff_quadrature = CoeffQuadrature::centroid;
  } else if (quad == "vertex_avg") {
    s.problem.coeff_quadrature = CoeffQuadrature::vertex_avg;
  } else {
    throw ConfigError("fem.coeff_quadrature: unknown value " + quad);
  }

  s.coarsest_level = cfg.get_int("mesh.coarsest_level", 2);
  if (s.coarsest_level < 0) throw ConfigError("mesh.coarsest_level must be >= 0");
  return s;
}

json manifest_json(const Config& cfg, const ResolvedSetup& s) {
  json m;
  m["experiment"] = s.experiment;
  m["seed"] = s.master_seed;
  m["threads"] = s.threads;
  json c;
  for (const auto& [k, v] : cfg.entries()) c[k] = v;
  m["config"] = c;
  const auto now = std::chrono::system_clock::now();
  m["timestamp_unix"] = std::chrono::duration_cast<std::chrono::seconds>(
                            now.time_since_epoch())
                            .count();
  return m;
}

std::string csv_join(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

std::string field_csv(const TriMesh& mesh, const Eigen::VectorXd& v) {
  std::string csv = "dof,x,y,value\n";
  for (int i = 0; i < mesh.n_interior(); ++i) {
    const Point& p = mesh.vertices[mesh.interior_vertices[i]];
    csv += csv_join({std::to_string(i), fmt(p.x), fmt(p.y), fmt(v[i])});
  }
  return csv;
}

std::vector<double> synthetic_costs(int L, double h0, double gamma) {
  std::vector<double> c(L + 1);
  for (int l = 0; l <= L; ++l) c[l] = std::pow(std::ldexp(h0, -l), -gamma);
  return c;
}

// ---- experiments ----------------------------------------------------------

void run_pathwise(const Config& cfg, const ResolvedSetup& s, OutputBundle& out, json& summary) {
  const int level = cfg.get_int("pathwise.level", 3);
  const std::uint64_t sample_id = cfg.get_u64("pathwise.sample_id", 0);
  const MeshHierarchy hy = MeshHierarchy::build(level);
  const TriMesh& mesh = hy.mesh(level);

  const auto sample = draw_sample(s.problem.basis, s.master_seed, sample_id);
  PathwiseSolver solver(mesh, s.problem.basis, s.problem.ocp, s.problem.coeff_quadrature);
  const double t0 = std::chrono::duration<double>(
                        std::chrono::steady_clock::now().time_since_epoch())
                        .count();
  const PathwiseSolution sol = solver.solve(sample);
  const double dt = std::chrono::duration<double>(
                        std::chrono::steady_clock::now().time_since_epoch())
                        .count() -
                    t0;

  const auto [a_min, a_max] = field_extrema(sample, 64);
  summary["level"] = level;
  summary["h"] = mesh.h;
  summary["n_dofs"] = mesh.n_interior();
  summary["sample_id"] = sample_id;
  summary["cost_value"] = sol.cost_value;
  summary["u_norm"] = l2_norm(solver.mass(), sol.u.values);
  summary["y_norm"] = l2_norm(solver.mass(), sol.y.values);
  summary["newton_iters"] = sol.newton_iters;
  summary["residual"] = sol.residual;
  summary["active_fraction"] = sol.active_fraction;
  summary["a_min_est"] = a_min;
  summary["a_max_est"] = a_max;
  summary["timing"]["solve_seconds"] = dt;

  if (cfg.get_bool("pathwise.dump_mesh", false)) {
    std::ostringstream ms;
    write_text(mesh, ms);
    out.add("mesh.txt", ms.str());
  }
  if (cfg.get_bool("pathwise.dump_solution", false)) {
    out.add("control.csv", field_csv(mesh, sol.u.values));
    out.add("state.csv", field_csv(mesh, sol.y.values));
    out.add("adjoint.csv", field_csv(mesh, sol.p.values));
  }
}

void emit_rates_outputs(const RatesReport& rep, const MeshHierarchy& hy, OutputBundle& out,
                        json& summary) {
  std::string conv = "level,h,N,err_l2,cost_mean_s\n";
  for (std::size_t k = 0; k < rep.levels.size(); ++k) {
    conv += csv_join({std::to_string(rep.levels[k]), fmt(rep.h[k]),
                      std::to_string(hy.mesh(rep.levels[k]).n_interior()), fmt(rep.err[k]),
                      fmt(rep.mean_cost_s[k])});
  }
  out.add("convergence.csv", conv);

  std::string rates = "quantity,slope,intercept,r2\n";
  if (!rep.error_degenerate)
    rates += csv_join({"control_error_vs_h", fmt(rep.error_fit.slope), fmt(rep.error_fit.intercept),
                       fmt(rep.error_fit.r2)});
  rates += csv_join({"cost_vs_N", fmt(rep.cost_fit.slope), fmt(rep.cost_fit.intercept),
                     fmt(rep.cost_fit.r2)});
  out.add("rates.csv", rates);

  summary["error_degenerate"] = rep.error_degenerate;
  if (!rep.error_degenerate) {
    summary["slope_2s"] = rep.slope_2s;
    summary["s"] = rep.rates.s;
    summary["fit_r2"] = rep.error_fit.r2;
    summary["theory_flag"] = rep.theory_flag;
  }
  summary["timing"]["gamma"] = rep.rates.gamma;
  summary["timing"]["cost_fit_r2"] = rep.cost_fit.r2;
}

void run_convergence(const Config& cfg, const ResolvedSetup& s, OutputBundle& out, json& summary,
                     const std::string& prefix) {
  auto lv = cfg.get_doubles(prefix + ".levels");
  int lmin = 0, lmax = 5;
  if (lv.size() == 2) {
    lmin = static_cast<int>(lv[0]);
    lmax = static_cast<int>(lv[1]);
  } else if (!lv.empty()) {
    throw ConfigError(prefix + ".levels: expected `min max`");
  }
  const int ref = cfg.get_int(prefix + ".ref_level", 7);
  const int M = cfg.get_int(prefix + ".pilot_M", cfg.get_int(prefix + ".M", 50));
  if (lmin < 0 || lmax < lmin || ref <= lmax) throw ConfigError(prefix + ": bad level range");

  const MeshHierarchy hy = MeshHierarchy::build(ref);
  std::vector<int> levels;
  for (int l = lmin; l <= lmax; ++l) levels.push_back(l);

  EstimatorOptions eopts;
  eopts.threads = s.threads;
  const RatesReport rep =
      estimate_rates(hy, s.problem, M, levels, ref, s.master_seed, eopts);
  summary["levels"] = {lmin, lmax};
  summary["ref_level"] = ref;
  summary["pilot_M"] = M;
  emit_rates_outputs(rep, hy, out, summary);
}

void run_mc(const Config& cfg, const ResolvedSetup& s, OutputBundle& out, json& summary) {
  const int level = cfg.get_int("mc.level", 1);
  const std::uint64_t M = cfg.get_u64("mc.M", 100);
  const MeshHierarchy hy = MeshHierarchy::build(level);

  EstimatorOptions eopts;
  eopts.threads = s.threads;
  const MCResult res = mc_estimate(hy, level, M, s.problem, s.master_seed, eopts);
  const SparseOperator mass = assemble_mass(hy.mesh(level));

  summary["level"] = level;
  summary["h"] = hy.mesh(level).h;
  summary["M"] = M;
  summary["mean_norm"] = l2_norm(mass, res.mean.values);
  summary["variance_scalar"] = res.variance_scalar;
  summary["timing"]["cost_seconds"] = res.cost_seconds;

  if (cfg.get_bool("mc.dump_mean", false))
    out.add("mc_mean.csv", field_csv(hy.mesh(level), res.mean.values));
}

struct CostModel {
  std::vector<double> costs;
  std::string kind;
};

CostModel resolve_costs(const Config& cfg, const ResolvedSetup& s, const MeshHierarchy& hy,
                        int L, double h0, double gamma) {
  CostModel cm;
  cm.kind = cfg.get_string("mlmc.cost_model", "measured");
  if (cm.kind == "synthetic") {
    cm.costs = synthetic_costs(L, h0, gamma);
  } else if (cm.kind == "measured") {
    const int pilot = cfg.get_int("mlmc.pilot_M", 20);
    std::vector<int> levels;
    for (int l = 0; l <= L; ++l) levels.push_back(s.coarsest_level + l);
    EstimatorOptions eopts;
    eopts.threads = s.threads;
    cm.costs = measure_level_costs(hy, s.problem, levels, pilot, s.master_seed, eopts);
  } else {
    throw ConfigError("mlmc.cost_model: expected measured or synthetic");
  }
  return cm;
}

double resolve_rate(const Config& cfg, const std::string& key, double fallback, bool* is_auto) {
  const std::string v = cfg.get_string(key, "");
  *is_auto = (v == "auto");
  if (*is_auto || v.empty()) return fallback;
  return cfg.get_double(key, fallback);
}

RateParams resolve_rates(const Config& cfg, const ResolvedSetup& s, const MeshHierarchy& hy,
                         int L, json& summary) {
  RateParams rates;
  rates.c0 = cfg.get_double("mlmc.c0", 0.5);
  rates.t = cfg.get_double("mlmc.t", 1.0);
  bool s_auto = false, g_auto = false;
  rates.s = resolve_rate(cfg, "mlmc.s", 1.0, &s_auto);
  rates.gamma = resolve_rate(cfg, "mlmc.gamma", 2.4, &g_auto);
  if (s_auto || g_auto) {
    const int pilot = std::max(2, cfg.get_int("mlmc.pilot_M", 20));
    std::vector<int> levels;
    for (int l = 0; l <= L; ++l) levels.push_back(s.coarsest_level + l);
    if (levels.size() < 3) {
      levels.clear();
      for (int l = 0; l < 3; ++l) levels.push_back(s.coarsest_level + l);
    }
    const int ref = levels.back() + 1;
    EstimatorOptions eopts;
    eopts.threads = s.threads;
    const RatesReport rep =
        estimate_rates(MeshHierarchy::build(ref), s.problem, pilot, levels, ref, s.master_seed,
                       eopts, rates);
    if (s_auto) {
      if (rep.error_degenerate) throw SolveError("rate estimation degenerate: error data is zero");
      rates.s = rep.rates.s;
    }
    if (g_auto) rates.gamma = rep.rates.gamma;
    summary["rates_estimated"] = {{"s_auto", s_auto}, {"gamma_auto", g_auto}};
    (void)hy;
  }
  summary["rates"] = {{"s", rates.s}, {"t", rates.t}, {"gamma", rates.gamma}, {"c0", rates.c0}};
  return rates;
}

void run_allocate(const Config& cfg, const ResolvedSetup& s, OutputBundle& out, json& summary) {
  const int L = cfg.get_int("mlmc.L", 3);
  if (L < 0) throw ConfigError("mlmc.L must be >= 0");
  const MeshHierarchy hy = MeshHierarchy::build(s.coarsest_level + L);
  const double h0 = hy.mesh(s.coarsest_level).h;
  const RateParams rates = resolve_rates(cfg, s, hy, L, summary);
  const CostModel cm = resolve_costs(cfg, s, hy, L, h0, rates.gamma);
  const auto plans = allocate_samples(L, rates, cm.costs, h0);

  std::string csv = "level,h,M,cost_per_sample\n";
  for (const auto& p : plans)
    csv += csv_join({std::to_string(p.level), fmt(p.h), std::to_string(p.samples),
                     fmt(p.cost_per_sample)});
  out.add("allocation.csv", csv);

  json jp = json::array();
  for (const auto& p : plans) jp.push_back(p.samples);
  summary["L"] = L;
  summary["cost_model"] = cm.kind;
  summary["samples"] = jp;
  if (plans.size() >= 2) {
    json ratios = json::array();
    for (std::size_t l = 0; l + 1 < plans.size(); ++l)
      ratios.push_back(static_cast<double>(plans[l].samples) /
                       static_cast<double>(plans[l + 1].samples));
    summary["sample_ratios"] = ratios;
  }
}

void run_mlmc(const Config& cfg, const ResolvedSetup& s, OutputBundle& out, json& summary) {
  const int L = cfg.get_int("mlmc.L", 3);
  if (L < 0) throw ConfigError("mlmc.L must be >= 0");
  const MeshHierarchy hy = MeshHierarchy::build(s.coarsest_level + L);
  const double h0 = hy.mesh(s.coarsest_level).h;

  std::vector<LevelPlan> plans;
  const auto explicit_m = cfg.get_u64s("mlmc.samples");
  if (!explicit_m.empty()) {
    if (static_cast<int>(explicit_m.size()) != L + 1)
      throw ConfigError("mlmc.samples: expected L+1 sample counts");
    for (int l = 0; l <= L; ++l)
      plans.push_back({l, std::ldexp(h0, -l), std::max<std::uint64_t>(1, explicit_m[l]), 0.0});
    summary["rates"] = nullptr;
  } else {
    const RateParams rates = resolve_rates(cfg, s, hy, L, summary);
    const CostModel cm = resolve_costs(cfg, s, hy, L, h0, rates.gamma);
    plans = allocate_samples(L, rates, cm.costs, h0);
    summary["cost_model"] = cm.kind;
  }

  EstimatorOptions eopts;
  eopts.threads = s.threads;
  const MLMCResult res = mlmc_estimate(hy, plans, s.problem, s.master_seed, eopts);

  std::string csv = "level,h,M,corr_mean_norm,corr_var,cost_s\n";
  for (const auto& st : res.per_level)
    csv += csv_join({std::to_string(st.level), fmt(st.h), std::to_string(st.samples),
                     fmt(st.corr_mean_norm), fmt(st.corr_var), fmt(st.cost_seconds)});
  out.add("mlmc.csv", csv);

  const SparseOperator mass = assemble_mass(hy.mesh(s.coarsest_level + L));
  summary["L"] = L;
  summary["coarsest_level"] = s.coarsest_level;
  summary["finest_level"] = s.coarsest_level + L;
  summary["h_L"] = std::ldexp(h0, -L);
  summary["N_L"] = hy.mesh(s.coarsest_level + L).n_interior();
  summary["mean_norm"] = l2_norm(mass, res.mean.values);
  summary["box_violation"] = res.box_violation;
  json jp = json::array();
  for (const auto& p : plans) jp.push_back(p.samples);
  summary["samples"] = jp;
  summary["timing"]["total_cost_seconds"] = res.total_cost;
  json jc = json::array();
  for (const auto& st : res.per_level) jc.push_back(st.cost_seconds);
  summary["timing"]["level_cost_seconds"] = jc;

  if (cfg.get_bool("mlmc.dump_mean", false))
    out.add("mlmc_mean.csv", field_csv(hy.mesh(s.coarsest_level + L), res.mean.values));
}

}  // namespace

int run_experiment(Config cfg, const RunOptions& opts) {
  ResolvedSetup setup;
  try {
    setup = resolve_setup(cfg, opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  }

  OutputBundle out;
  json summary;
  summary["experiment"] = setup.experiment;
  summary["seed"] = setup.master_seed;

  try {
    if (setup.experiment == "pathwise") {
      run_pathwise(cfg, setup, out, summary);
    } else if (setup.experiment == "convergence") {
      run_convergence(cfg, setup, out, summary, "convergence");
    } else if (setup.experiment == "rates") {
      run_convergence(cfg, setup, out, summary, "rates");
    } else if (setup.experiment == "mc") {
      run_mc(cfg, setup, out, summary);
    } else if (setup.experiment == "mlmc") {
      run_mlmc(cfg, setup, out, summary);
    } else if (setup.experiment == "allocate") {
      run_allocate(cfg, setup, out, summary);
    } else {
      std::cerr << "config error: unknown experiment `" << setup.experiment << "`\n";
      return 3;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 2;
  }

  out.add("summary.json", summary.dump(2) + "\n");
  out.add("manifest.json", manifest_json(cfg, setup).dump(2) + "\n");
  try {
    out.write_all(setup.out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "output failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_experiment(const RunOptions& opts) {
  Config cfg;
  try {
    cfg = Config::parse_file(opts.config_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  }
  return run_experiment(std::move(cfg), opts);
}

}  // namespace mloc
