#pragma once

#include "mloc/mesh.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace mloc {

/// One separable trigonometric mode of the Gaussian exponent:
/// amplitude * trig1(freq1*x1) * trig2(freq2*x2).
struct KLMode {
  double amplitude = 0.0;
  bool cos1 = true;
  double freq1 = 0.0;
  bool cos2 = true;
  double freq2 = 0.0;

  double eval(Point p) const;
};

/// Truncated Karhunen-Loeve basis for the Gaussian exponent kappa.
struct KLBasis {
  std::vector<KLMode> modes;

  /// The 4-mode basis used throughout: amplitudes (0.84, 0.45, 0.45, 0.25)
  /// with the cos/sin pattern on the low/high frequency pair.
  static KLBasis default_basis();
  static KLBasis default_basis(const std::array<double, 4>& amplitudes, double freq_low,
                               double freq_high);

  std::size_t n_modes() const { return modes.size(); }
  double exponent(std::span<const double> y, Point p) const;
};

/// A draw of the KL normal variables plus the lognormal point evaluator
/// a(x) = exp(kappa(x)) > 0. Immutable value object.
struct CoefficientSample {
  std::vector<double> y;  // i.i.d. N(0,1)
  const KLBasis* basis = nullptr;
  std::uint64_t sample_id = 0;

  double operator()(Point p) const;
};

/// Counter-based draw: the map (master_seed, sample_id) -> y is pure, so
/// coupled levels and parallel workers can regenerate the same realization.
CoefficientSample draw_sample(const KLBasis& basis, std::uint64_t master_seed,
                              std::uint64_t sample_id);

std::vector<double> evaluate_coeff(const CoefficientSample& sample, std::span<const Point> points);

/// Min/max of the evaluator over a uniform (resolution+1)^2 probe grid on the
/// closed square. Diagnostic only; never used in solves.
std::pair<double, double> field_extrema(const CoefficientSample& sample, int grid_resolution);

}  // namespace mloc
