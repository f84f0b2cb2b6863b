#pragma once

#include "mloc/fem.hpp"

#include <Eigen/SparseLU>

#include <cstdint>
#include <limits>
#include <vector>

namespace mloc {

enum class ControlIntegration { quadrature5, cutcell };

/// Data of the pathwise tracking problem: regularization, desired state and
/// control box. Both bounds infinite means the unconstrained case.
struct OCPConfig {
  double alpha = 1e-2;
  ScalarField z;
  double u_a = -std::numeric_limits<double>::infinity();
  double u_b = std::numeric_limits<double>::infinity();
  double newton_tol = 1e-10;
  int newton_maxit = 50;
  double solve_rtol = 1e-12;
  ControlIntegration control_integration = ControlIntegration::quadrature5;

  bool unconstrained() const {
    return !std::isfinite(u_a) && !std::isfinite(u_b);
  }
  double clamp(double v) const { return std::min(std::max(v, u_a), u_b); }
  void validate() const;
};

/// Control/state/adjoint triple for one realization on one level, with
/// solver diagnostics. The nodal u stores clamp(-p/alpha) at the vertices.
struct PathwiseSolution {
  NodalFunction u, y, p;
  int newton_iters = 0;
  double residual = 0.0;
  double cost_value = 0.0;
  double active_fraction = 0.0;
};

/// Per-(mesh, problem) solver reused across coefficient samples: caches the
/// mass matrix, the interpolated desired state, the element geometry and the
/// per-element KL mode table, plus the symbolic factorization of the coupled
/// optimality system.
class PathwiseSolver {
 public:
  PathwiseSolver(const TriMesh& mesh, const KLBasis& basis, const OCPConfig& cfg,
                 CoeffQuadrature quad = CoeffQuadrature::centroid);

  PathwiseSolution solve(const CoefficientSample& sample);

  /// Cost of an arbitrary nodal control (solves the state equation for it).
  double cost_of(const CoefficientSample& sample, const Eigen::VectorXd& u);

  const TriMesh& mesh() const { return *mesh_; }
  const SparseOperator& mass() const { return mass_; }
  const Eigen::VectorXd& z_h() const { return z_h_; }

  /// Stiffness for this sample via the cached mode table (identical values
  /// to assemble_stiffness on the same mesh).
  SparseOperator stiffness(const CoefficientSample& sample) const;

 private:
  void assemble_block(const CoefficientSample& sample, const std::vector<char>& active);
  Eigen::VectorXd coeff_per_element(const CoefficientSample& sample) const;

  const TriMesh* mesh_;
  const KLBasis* basis_;
  OCPConfig cfg_;
  CoeffQuadrature quad_;

  SparseOperator mass_;
  Eigen::VectorXd z_h_, load_z_;  // nodal interpolant of z and M z_h

  // element geometry: area-weighted gradient products, 9 per element
  std::vector<std::array<double, 9>> elem_k_;
  std::vector<std::array<int, 3>> elem_dofs_;
  // per-element KL mode values at the quadrature point(s)
  Eigen::MatrixXd mode_table_;

  Eigen::SparseMatrix<double> block_;  // 2N x 2N optimality system
  std::vector<Eigen::Triplet<double>> block_trips_;
  std::vector<std::size_t> k_top_slot_, k_bot_slot_, m_col_slot_;
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
  bool pattern_ready_ = false;
};

PathwiseSolution solve_unconstrained(const TriMesh& mesh, const CoefficientSample& sample,
                                     const OCPConfig& cfg);
PathwiseSolution solve_constrained(const TriMesh& mesh, const CoefficientSample& sample,
                                   const OCPConfig& cfg);
/// Dispatch on the bounds.
PathwiseSolution solve_pathwise(const TriMesh& mesh, const CoefficientSample& sample,
                                const OCPConfig& cfg);

double evaluate_cost(const TriMesh& mesh, const CoefficientSample& sample, const OCPConfig& cfg,
                     const NodalFunction& u);

}  // namespace mloc
