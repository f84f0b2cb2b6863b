#include "mloc/randfield.hpp"

#include "mloc/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mloc {

double KLMode::eval(Point p) const {
  const double t1 = cos1 ? std::cos(freq1 * p.x) : std::sin(freq1 * p.x);
  const double t2 = cos2 ? std::cos(freq2 * p.y) : std::sin(freq2 * p.y);
  return amplitude * t1 * t2;
}

KLBasis KLBasis::default_basis() {
  return default_basis({0.84, 0.45, 0.45, 0.25}, 0.42 * std::numbers::pi,
                       1.17 * std::numbers::pi);
}

KLBasis KLBasis::default_basis(const std::array<double, 4>& a, double freq_low,
                               double freq_high) {
  KLBasis b;
  b.modes = {
      {a[0], true, freq_low, true, freq_low},
      {a[1], true, freq_low, false, freq_high},
      {a[2], false, freq_high, true, freq_low},
      {a[3], false, freq_high, false, freq_high},
  };
  return b;
}

double KLBasis::exponent(std::span<const double> y, Point p) const {
  if (y.size() != modes.size()) throw std::invalid_argument("exponent: wrong number of variates");
  double k = 0.0;
  for (std::size_t m = 0; m < modes.size(); ++m) k += modes[m].eval(p) * y[m];
  return k;
}

double CoefficientSample::operator()(Point p) const {
  return std::exp(basis->exponent(y, p));
}

CoefficientSample draw_sample(const KLBasis& basis, std::uint64_t master_seed,
                              std::uint64_t sample_id) {
  CoefficientSample s;
  s.basis = &basis;
  s.sample_id = sample_id;
  s.y.resize(basis.n_modes());
  for (std::size_t m = 0; m < s.y.size(); ++m)
    s.y[m] = rng::standard_normal(master_seed, sample_id, m);
  return s;
}

std::vector<double> evaluate_coeff(const CoefficientSample& sample,
                                   std::span<const Point> points) {
  std::vector<double> out;
  out.reserve(points.size());
  for (const Point& p : points) out.push_back(sample(p));
  return out;
}

std::pair<double, double> field_extrema(const CoefficientSample& sample, int grid_resolution) {
  if (grid_resolution < 2) throw std::invalid_argument("field_extrema: resolution must be >= 2");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int i = 0; i <= grid_resolution; ++i) {
    for (int j = 0; j <= grid_resolution; ++j) {
      const Point p{-0.5 + static_cast<double>(i) / grid_resolution,
                    -0.5 + static_cast<double>(j) / grid_resolution};
      const double a = sample(p);
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  }
  return {lo, hi};
}

}  // namespace mloc
