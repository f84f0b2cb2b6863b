#include "mloc/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace mloc {

namespace {

constexpr std::uint64_t kChunk = 64;           // fixed: part of the reduction tree
constexpr std::uint64_t kLevelStride = 1ull << 40;  // level tag for coupled streams
constexpr std::uint64_t kCalibrationTag = 0xC5ull << 48;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

/// One-pass scalar moments, mergeable so the reduction tree is fixed.
struct Welford {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  static Welford merge(const Welford& a, const Welford& b) {
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    Welford out;
    out.n = a.n + b.n;
    const double d = b.mean - a.mean;
    out.mean = a.mean + d * (static_cast<double>(b.n) / static_cast<double>(out.n));
    out.m2 = a.m2 + b.m2 +
             d * d * (static_cast<double>(a.n) * static_cast<double>(b.n) /
                      static_cast<double>(out.n));
    return out;
  }
  double sample_variance() const { return n >= 2 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

/// Accumulator of one chunk of samples: field sum, norm moments, wall time.
struct ChunkAcc {
  Eigen::VectorXd field_sum;
  Welford norm_stats;
  double seconds = 0.0;

  static ChunkAcc merge(const ChunkAcc& a, const ChunkAcc& b) {
    if (a.field_sum.size() == 0) return b;
    if (b.field_sum.size() == 0) return a;
    ChunkAcc out;
    out.field_sum = a.field_sum + b.field_sum;
    out.norm_stats = Welford::merge(a.norm_stats, b.norm_stats);
    out.seconds = a.seconds + b.seconds;
    return out;
  }
};

/// Runs `n` samples split into fixed-size chunks over a worker pool and
/// returns the chunk partials in chunk order. The chunking (not the thread
/// schedule) defines the reduction tree, so results are bitwise identical
/// for any worker count.
template <typename Partial, typename WorkerFactory>
std::vector<Partial> run_chunks(std::uint64_t n, int threads, WorkerFactory&& make_worker) {
  const std::uint64_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<Partial> parts(nchunks);
  std::atomic<std::uint64_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;

  auto body = [&]() {
    try {
      auto worker = make_worker();
      for (;;) {
        const std::uint64_t c = next.fetch_add(1);
        if (c >= nchunks) return;
        parts[c] = worker(c * kChunk, std::min(n, (c + 1) * kChunk));
      }
    } catch (...) {
      std::lock_guard<std::mutex> g(err_mu);
      if (!err) err = std::current_exception();
    }
  };

  const int nthreads = std::max(1, threads);
  if (nthreads == 1 || nchunks <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    const int spawn = static_cast<int>(std::min<std::uint64_t>(nthreads, nchunks));
    pool.reserve(spawn);
    for (int t = 0; t < spawn; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
  }
  if (err) std::rethrow_exception(err);
  return parts;
}

template <typename Partial>
Partial pairwise_merge(std::vector<Partial> parts) {
  if (parts.empty()) return Partial{};
  while (parts.size() > 1) {
    std::vector<Partial> next;
    next.reserve((parts.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < parts.size(); i += 2)
      next.push_back(Partial::merge(parts[i], parts[i + 1]));
    if (parts.size() % 2 == 1) next.push_back(parts.back());
    parts.swap(next);
  }
  return parts.front();
}

int find_hierarchy_level(const MeshHierarchy& hy, double h) {
  for (int l = 0; l <= hy.max_level(); ++l)
    if (std::abs(hy.mesh(l).h - h) <= 1e-14 * h) return l;
  throw std::invalid_argument("no hierarchy level with mesh size h = " + std::to_string(h));
}

double box_violation_of(const Eigen::VectorXd& v, const OCPConfig& ocp) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(ocp.u_a)) worst = std::max(worst, ocp.u_a - v[i]);
    if (std::isfinite(ocp.u_b)) worst = std::max(worst, v[i] - ocp.u_b);
  }
  return worst;
}

}  // namespace

MCResult mc_estimate(const MeshHierarchy& hierarchy, int level, std::uint64_t M,
                     const ProblemConfig& cfg, std::uint64_t master_seed,
                     const EstimatorOptions& opts) {
  if (M < 1) throw std::invalid_argument("mc_estimate: M must be >= 1");
  const TriMesh& mesh = hierarchy.mesh(level);
  const int n = mesh.n_interior();

  auto parts = run_chunks<ChunkAcc>(M, opts.threads, [&]() {
    auto solver = std::make_shared<PathwiseSolver>(mesh, cfg.basis, cfg.ocp,
                                                   cfg.coeff_quadrature);
    return [&, solver](std::uint64_t begin, std::uint64_t end) {
      ChunkAcc acc;
      acc.field_sum = Eigen::VectorXd::Zero(n);
      for (std::uint64_t i = begin; i < end; ++i) {
        const auto sample = draw_sample(cfg.basis, master_seed, i);
        const double t0 = now_seconds();
        const PathwiseSolution sol = solver->solve(sample);
        acc.seconds += now_seconds() - t0;
        acc.field_sum += sol.u.values;
        acc.norm_stats.add(l2_norm(solver->mass(), sol.u.values));
      }
      return acc;
    };
  });
  const ChunkAcc total = pairwise_merge(std::move(parts));

  MCResult out;
  out.samples = M;
  out.mean.level = mesh.level;
  out.mean.values = total.field_sum / static_cast<double>(M);
  out.variance_scalar = total.norm_stats.sample_variance();
  out.cost_seconds = total.seconds;
  return out;
}

MLMCResult mlmc_estimate(const MeshHierarchy& hierarchy, const std::vector<LevelPlan>& plans,
                         const ProblemConfig& cfg, std::uint64_t master_seed,
                         const EstimatorOptions& opts) {
  if (plans.empty()) throw std::invalid_argument("mlmc_estimate: empty plan");
  for (std::size_t l = 0; l < plans.size(); ++l)
    if (plans[l].level != static_cast<int>(l))
      throw std::invalid_argument("mlmc_estimate: plans must cover levels 0..L contiguously");
  const int base = find_hierarchy_level(hierarchy, plans[0].h);
  const int L = static_cast<int>(plans.size()) - 1;
  if (base + L > hierarchy.max_level())
    throw std::invalid_argument("mlmc_estimate: hierarchy too shallow for the plan");

  MLMCResult out;
  out.master_seed = master_seed;
  const TriMesh& top = hierarchy.mesh(base + L);
  out.mean.level = top.level;
  out.mean.values = Eigen::VectorXd::Zero(top.n_interior());

  for (int l = 0; l <= L; ++l) {
    const TriMesh& fine = hierarchy.mesh(base + l);
    const std::uint64_t Ml = plans[l].samples;
    const std::uint64_t stream_base =
        opts.couple_streams_across_levels ? 0 : static_cast<std::uint64_t>(l) * kLevelStride;

    auto parts = run_chunks<ChunkAcc>(Ml, opts.threads, [&, l]() {
      auto fine_solver =
          std::make_shared<PathwiseSolver>(fine, cfg.basis, cfg.ocp, cfg.coeff_quadrature);
      std::shared_ptr<PathwiseSolver> coarse_solver;
      if (l > 0)
        coarse_solver = std::make_shared<PathwiseSolver>(hierarchy.mesh(base + l - 1), cfg.basis,
                                                         cfg.ocp, cfg.coeff_quadrature);
      return [&, l, fine_solver, coarse_solver](std::uint64_t begin, std::uint64_t end) {
        ChunkAcc acc;
        acc.field_sum = Eigen::VectorXd::Zero(fine.n_interior());
        for (std::uint64_t i = begin; i < end; ++i) {
          const auto sample = draw_sample(cfg.basis, master_seed, stream_base + i);
          const double t0 = now_seconds();
          const PathwiseSolution sol_f = fine_solver->solve(sample);
          Eigen::VectorXd corr = sol_f.u.values;
          if (l > 0) {
            const PathwiseSolution sol_c = coarse_solver->solve(sample);
            corr -= prolong(hierarchy, base + l - 1, base + l, sol_c.u.values);
          }
          acc.seconds += now_seconds() - t0;
          acc.field_sum += corr;
          acc.norm_stats.add(l2_norm(fine_solver->mass(), corr));
        }
        return acc;
      };
    });
    const ChunkAcc total = pairwise_merge(std::move(parts));

    const Eigen::VectorXd level_mean = total.field_sum / static_cast<double>(Ml);
    LevelStats stats;
    stats.level = l;
    stats.h = plans[l].h;
    stats.samples = Ml;
    stats.corr_mean_norm = l2_norm(assemble_mass(fine), level_mean);
    stats.corr_var = total.norm_stats.sample_variance();
    stats.cost_seconds = total.seconds;
    out.per_level.push_back(stats);
    out.total_cost += total.seconds;
    out.mean.values += prolong(hierarchy, base + l, base + L, level_mean);
  }
  out.box_violation = box_violation_of(out.mean.values, cfg.ocp);
  return out;
}

std::vector<LevelPlan> allocate_samples(int L, const RateParams& rates,
                                        std::span<const double> level_costs, double h0) {
  if (L < 0) throw std::invalid_argument("allocate_samples: L must be >= 0");
  if (static_cast<int>(level_costs.size()) != L + 1)
    throw std::invalid_argument("allocate_samples: need one cost per level");
  if (!(rates.s > 0.0) || !(rates.c0 > 0.0))
    throw std::invalid_argument("allocate_samples: rates must be positive");
  for (double c : level_costs)
    if (!(c > 0.0)) throw std::invalid_argument("allocate_samples: costs must be positive");

  std::vector<double> h(L + 1), a(L + 1);
  for (int l = 0; l <= L; ++l) {
    h[l] = std::ldexp(h0, -l);
    a[l] = std::pow(h[l], 2.0 * rates.s);
  }
  const double eps = rates.c0 * a[L];
  double lam13 = 0.0;
  for (int l = 0; l <= L; ++l)
    lam13 += std::cbrt(a[l] * a[l] * 2.0 * level_costs[l]);
  lam13 /= eps;

  std::vector<LevelPlan> plans(L + 1);
  for (int l = 0; l <= L; ++l) {
    const double m = std::pow(lam13 * std::cbrt(a[l] / (2.0 * level_costs[l])), 2.0);
    plans[l].level = l;
    plans[l].h = h[l];
    plans[l].samples_real = m;
    plans[l].samples = static_cast<std::uint64_t>(std::max(1.0, std::ceil(m)));
    plans[l].cost_per_sample = level_costs[l];
  }
  return plans;
}

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need at least two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit fit;
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double ybar = sy / n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = fit.slope * x[i] + fit.intercept;
    ss_res += (y[i] - pred) * (y[i] - pred);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

namespace {

/// Per-sample data of the rate pilot: solve one realization on every probe
/// level plus the reference, record coupled errors and solve times.
struct PilotAcc {
  Eigen::VectorXd err_sum;   // per probe level
  Eigen::VectorXd time_sum;  // per probe level
  std::uint64_t n = 0;

  static PilotAcc merge(const PilotAcc& a, const PilotAcc& b) {
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    PilotAcc out;
    out.err_sum = a.err_sum + b.err_sum;
    out.time_sum = a.time_sum + b.time_sum;
    out.n = a.n + b.n;
    return out;
  }
};

}  // namespace

RatesReport estimate_rates(const MeshHierarchy& hierarchy, const ProblemConfig& cfg, int pilot_M,
                           std::span<const int> levels, int ref_level, std::uint64_t master_seed,
                           const EstimatorOptions& opts, const RateParams& base) {
  if (pilot_M < 2) throw std::invalid_argument("estimate_rates: pilot_M must be >= 2");
  if (levels.size() < 3) throw std::invalid_argument("estimate_rates: need at least 3 levels");
  for (int l : levels)
    if (l < 0 || l >= ref_level || ref_level > hierarchy.max_level())
      throw std::invalid_argument("estimate_rates: levels must lie below the reference level");

  const int nl = static_cast<int>(levels.size());
  const TriMesh& ref = hierarchy.mesh(ref_level);
  const SparseOperator ref_mass = assemble_mass(ref);

  auto parts = run_chunks<PilotAcc>(pilot_M, opts.threads, [&]() {
    auto ref_solver =
        std::make_shared<PathwiseSolver>(ref, cfg.basis, cfg.ocp, cfg.coeff_quadrature);
    auto level_solvers = std::make_shared<std::vector<std::unique_ptr<PathwiseSolver>>>();
    level_solvers->reserve(nl);
    for (int l : levels)
      level_solvers->push_back(std::make_unique<PathwiseSolver>(hierarchy.mesh(l), cfg.basis,
                                                                cfg.ocp, cfg.coeff_quadrature));
    return [&, ref_solver, level_solvers](std::uint64_t begin, std::uint64_t end) {
      PilotAcc acc;
      acc.err_sum = Eigen::VectorXd::Zero(nl);
      acc.time_sum = Eigen::VectorXd::Zero(nl);
      for (std::uint64_t i = begin; i < end; ++i) {
        const auto sample = draw_sample(cfg.basis, master_seed, i);
        const PathwiseSolution sol_ref = ref_solver->solve(sample);
        for (int k = 0; k < nl; ++k) {
          const double t0 = now_seconds();
          const PathwiseSolution sol = (*level_solvers)[k]->solve(sample);
          acc.time_sum[k] += now_seconds() - t0;
          const Eigen::VectorXd diff =
              sol_ref.u.values - prolong(hierarchy, levels[k], ref_level, sol.u.values);
          acc.err_sum[k] += l2_norm(ref_mass, diff);
        }
        ++acc.n;
      }
      return acc;
    };
  });
  const PilotAcc total = pairwise_merge(std::move(parts));

  RatesReport rep;
  rep.rates = base;
  rep.levels.assign(levels.begin(), levels.end());
  for (int k = 0; k < nl; ++k) {
    rep.h.push_back(hierarchy.mesh(levels[k]).h);
    rep.err.push_back(total.err_sum[k] / static_cast<double>(total.n));
    rep.mean_cost_s.push_back(total.time_sum[k] / static_cast<double>(total.n));
  }

  std::vector<double> log_h, log_err;
  for (int k = 0; k < nl; ++k) {
    if (rep.err[k] > 0.0) {
      log_h.push_back(std::log(rep.h[k]));
      log_err.push_back(std::log(rep.err[k]));
    }
  }
  if (log_h.size() < 3) {
    rep.error_degenerate = true;
    rep.rates.s = std::numeric_limits<double>::quiet_NaN();
  } else {
    rep.error_fit = fit_line(log_h, log_err);
    rep.slope_2s = rep.error_fit.slope;
    rep.rates.s = 0.5 * rep.slope_2s;
    rep.theory_flag = !(rep.rates.s > 0.0 && rep.rates.s <= rep.rates.t);
  }

  // cost ~ N^{gamma/d} with the dyadic convention N = h^{-d}, d = 2
  const double d = 2.0;
  std::vector<double> log_n, log_cost;
  for (int k = 0; k < nl; ++k) {
    if (rep.mean_cost_s[k] > 0.0) {
      log_n.push_back(d * std::log(1.0 / rep.h[k]));
      log_cost.push_back(std::log(rep.mean_cost_s[k]));
    }
  }
  if (log_n.size() >= 3) {
    rep.cost_fit = fit_line(log_n, log_cost);
    rep.rates.gamma = d * rep.cost_fit.slope;
  }
  return rep;
}

double fit_cost_exponent(std::span<const double> h, std::span<const double> mean_costs,
                         double d) {
  if (h.size() != mean_costs.size()) throw std::invalid_argument("fit_cost_exponent: size mismatch");
  std::vector<double> log_n, log_cost;
  for (std::size_t k = 0; k < h.size(); ++k) {
    log_n.push_back(d * std::log(1.0 / h[k]));
    log_cost.push_back(std::log(mean_costs[k]));
  }
  return d * fit_line(log_n, log_cost).slope;
}

std::vector<std::pair<int, double>> variance_decay_probe(const MeshHierarchy& hierarchy,
                                                         const ProblemConfig& cfg, int M_probe,
                                                         std::span<const int> levels,
                                                         std::uint64_t master_seed,
                                                         const EstimatorOptions& opts) {
  if (M_probe < 2) throw std::invalid_argument("variance_decay_probe: M_probe must be >= 2");
  std::vector<std::pair<int, double>> out;
  for (int l : levels) {
    if (l < 1 || l > hierarchy.max_level())
      throw std::invalid_argument("variance_decay_probe: need coupled pairs (level >= 1)");
    const TriMesh& fine = hierarchy.mesh(l);
    auto parts = run_chunks<ChunkAcc>(M_probe, opts.threads, [&, l]() {
      auto fine_solver =
          std::make_shared<PathwiseSolver>(fine, cfg.basis, cfg.ocp, cfg.coeff_quadrature);
      auto coarse_solver = std::make_shared<PathwiseSolver>(hierarchy.mesh(l - 1), cfg.basis,
                                                            cfg.ocp, cfg.coeff_quadrature);
      return [&, l, fine_solver, coarse_solver](std::uint64_t begin, std::uint64_t end) {
        ChunkAcc acc;
        acc.field_sum = Eigen::VectorXd::Zero(fine.n_interior());
        for (std::uint64_t i = begin; i < end; ++i) {
          const auto sample = draw_sample(
              cfg.basis, master_seed, static_cast<std::uint64_t>(l) * kLevelStride + i);
          const PathwiseSolution sol_f = fine_solver->solve(sample);
          const PathwiseSolution sol_c = coarse_solver->solve(sample);
          const Eigen::VectorXd corr =
              sol_f.u.values - prolong(hierarchy, l - 1, l, sol_c.u.values);
          const double nn = l2_norm(fine_solver->mass(), corr);
          acc.norm_stats.add(nn * nn);
        }
        return acc;
      };
    });
    const ChunkAcc total = pairwise_merge(std::move(parts));
    out.emplace_back(l, total.norm_stats.mean);
  }
  return out;
}

std::vector<double> measure_level_costs(const MeshHierarchy& hierarchy, const ProblemConfig& cfg,
                                        std::span<const int> levels, int pilot_M,
                                        std::uint64_t master_seed, const EstimatorOptions& opts) {
  if (pilot_M < 1) throw std::invalid_argument("measure_level_costs: pilot_M must be >= 1");
  std::vector<double> medians;
  for (int l : levels) {
    const TriMesh& mesh = hierarchy.mesh(l);
    std::vector<double> times(pilot_M);
    // timing pilots are inherently serial per level; run them in order
    PathwiseSolver solver(mesh, cfg.basis, cfg.ocp, cfg.coeff_quadrature);
    (void)opts;
    for (int i = 0; i < pilot_M; ++i) {
      const auto sample =
          draw_sample(cfg.basis, master_seed, kCalibrationTag + static_cast<std::uint64_t>(i));
      const double t0 = now_seconds();
      (void)solver.solve(sample);
      times[i] = now_seconds() - t0;
    }
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size() / 2;
    medians.push_back(times.size() % 2 == 1 ? times[m] : 0.5 * (times[m - 1] + times[m]));
  }
  return medians;
}

}  // namespace mloc
