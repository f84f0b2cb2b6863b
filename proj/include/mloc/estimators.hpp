#pragma once

#include "mloc/ocp.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace mloc {

/// Exponents driving allocation and the acceptance checks: FE rate s,
/// coefficient smoothness t, per-sample cost growth gamma, and the
/// statistical-error safety factor c0 of the sample-allocation program.
struct RateParams {
  double s = 1.0;
  double t = 1.0;
  double gamma = 2.4;
  double c0 = 0.5;
};

/// Per-level sample budget. `level` is local to the run (0 = coarsest).
struct LevelPlan {
  int level = 0;
  double h = 0.0;
  std::uint64_t samples = 1;
  double samples_real = 1.0;  // pre-rounding KKT value
  double cost_per_sample = 0.0;
};

/// Everything a pathwise solve needs besides the mesh.
struct ProblemConfig {
  KLBasis basis = KLBasis::default_basis();
  OCPConfig ocp;
  CoeffQuadrature coeff_quadrature = CoeffQuadrature::centroid;
};

struct EstimatorOptions {
  int threads = 1;
  /// Diagnostic mode: reuse the same sample stream on every level so the
  /// level corrections telescope exactly to the finest-level average.
  bool couple_streams_across_levels = false;
};

struct MCResult {
  NodalFunction mean;
  double variance_scalar = 0.0;  // sample variance of the pathwise L2 norms
  double cost_seconds = 0.0;
  std::uint64_t samples = 0;
};

struct LevelStats {
  int level = 0;
  double h = 0.0;
  std::uint64_t samples = 0;
  double corr_mean_norm = 0.0;  // L2 norm of the averaged correction
  double corr_var = 0.0;        // sample variance of the correction norms
  double cost_seconds = 0.0;
};

struct MLMCResult {
  NodalFunction mean;  // on the finest level of the run
  std::vector<LevelStats> per_level;
  double total_cost = 0.0;
  std::uint64_t master_seed = 0;
  /// Max nodal distance of the mean outside [u_a, u_b]; reported, not
  /// clamped (multilevel means are generally not admissible).
  double box_violation = 0.0;
};

/// Classical single-level estimator: mean over M i.i.d. pathwise solutions
/// at the given hierarchy level. Deterministic for fixed master_seed
/// regardless of the worker count.
MCResult mc_estimate(const MeshHierarchy& hierarchy, int level, std::uint64_t M,
                     const ProblemConfig& cfg, std::uint64_t master_seed,
                     const EstimatorOptions& opts = {});

/// Coupled-telescoping multilevel estimator. Level l draws its own sample
/// stream, solves each realization on levels l and l-1, and averages the
/// prolonged differences; the final mean is the sum of the per-level
/// averages prolonged to the finest level of the run.
MLMCResult mlmc_estimate(const MeshHierarchy& hierarchy, const std::vector<LevelPlan>& plans,
                         const ProblemConfig& cfg, std::uint64_t master_seed,
                         const EstimatorOptions& opts = {});

/// Sample counts minimizing total cost subject to the statistical-error
/// budget sum_l M_l^{-1/2} h_l^{2s} <= c0 h_L^{2s}, by the KKT closed form
/// M_l = (lambda a_l / (2 C_l))^{2/3}, ceiled to integers (>= 1).
std::vector<LevelPlan> allocate_samples(int L, const RateParams& rates,
                                        std::span<const double> level_costs, double h0);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line through (x, y).
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Cost exponent gamma from per-level mean costs: fit of log(cost) against
/// log(N) with the dyadic convention N = h^{-d}, scaled back by d.
double fit_cost_exponent(std::span<const double> h, std::span<const double> mean_costs,
                         double d = 2.0);

struct RatesReport {
  RateParams rates;  // s and gamma filled; t and c0 passed through
  double slope_2s = 0.0;
  LineFit error_fit, cost_fit;
  bool error_degenerate = false;  // no usable error data (e.g. z == 0)
  bool theory_flag = false;       // fitted s outside (0, t]
  std::vector<int> levels;
  std::vector<double> h, err, mean_cost_s;
};

/// Empirical s from the decay of the coupled control error against a
/// reference level, and gamma from the growth of the mean cost per solve
/// (cost ~ N^{gamma/d} with the dyadic convention N_l = h_l^{-d}, d = 2).
RatesReport estimate_rates(const MeshHierarchy& hierarchy, const ProblemConfig& cfg, int pilot_M,
                           std::span<const int> levels, int ref_level, std::uint64_t master_seed,
                           const EstimatorOptions& opts = {}, const RateParams& base = {});

/// Mean squared L2 norm of the coupled corrections per level; decays like
/// h^{4s} and drives the multilevel variance reduction.
std::vector<std::pair<int, double>> variance_decay_probe(const MeshHierarchy& hierarchy,
                                                         const ProblemConfig& cfg, int M_probe,
                                                         std::span<const int> levels,
                                                         std::uint64_t master_seed,
                                                         const EstimatorOptions& opts = {});

/// Median wall-clock seconds of pilot pathwise solves per hierarchy level;
/// the measured cost model behind allocate_samples.
std::vector<double> measure_level_costs(const MeshHierarchy& hierarchy, const ProblemConfig& cfg,
                                        std::span<const int> levels, int pilot_M,
                                        std::uint64_t master_seed,
                                        const EstimatorOptions& opts = {});

}  // namespace mloc
