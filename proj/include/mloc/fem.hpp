#pragma once

#include "mloc/mesh.hpp"
#include "mloc/randfield.hpp"

#include <Eigen/SparseCholesky>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

namespace mloc {

/// Hard failure of a factorization or a pathwise solve. Carries enough
/// context (level, sample id) to reproduce the failing instance.
struct SolveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ScalarField = std::function<double(Point)>;

/// Symmetric operator on the interior dofs of one mesh level.
struct SparseOperator {
  Eigen::SparseMatrix<double> mat;
  int dimension = 0;
  int level = 0;
};

/// P1 function given by its interior nodal values; implicitly zero on the
/// boundary (homogeneous Dirichlet).
struct NodalFunction {
  int level = 0;
  Eigen::VectorXd values;
};

enum class CoeffQuadrature { centroid, vertex_avg };

/// Stiffness with the sampled coefficient, one coefficient evaluation per
/// element (centroid by default), Dirichlet rows/cols eliminated.
SparseOperator assemble_stiffness(const TriMesh& mesh, const CoefficientSample& sample,
                                  CoeffQuadrature quad = CoeffQuadrature::centroid);

/// Pre-elimination stiffness over all vertices (diagnostics and tests).
Eigen::SparseMatrix<double> assemble_stiffness_full(const TriMesh& mesh,
                                                    const CoefficientSample& sample,
                                                    CoeffQuadrature quad = CoeffQuadrature::centroid);

/// Exact P1 mass matrix on the interior dofs.
SparseOperator assemble_mass(const TriMesh& mesh);
Eigen::SparseMatrix<double> assemble_mass_full(const TriMesh& mesh);

/// Load vector (integral of f against each interior basis function) with the
/// 3-point edge-midpoint rule (exact for quadratic integrands).
Eigen::VectorXd assemble_load(const TriMesh& mesh, const ScalarField& f);

/// Interior nodal interpolant of a scalar field.
Eigen::VectorXd interpolate_interior(const TriMesh& mesh, const ScalarField& f);

/// Integral of f against each interior basis function with the 7-point
/// degree-5 rule; used for control right-hand sides where f may have kinks.
Eigen::VectorXd assemble_load_degree5(const TriMesh& mesh, const ScalarField& f);

/// Direct solve of K x = rhs for SPD K; relative residual is checked against
/// rtol and a SolveError is thrown on failure.
NodalFunction solve_dirichlet(const SparseOperator& K, const Eigen::VectorXd& rhs,
                              double rtol = 1e-12);

/// Reusable SPD factorization for repeated solves with one stiffness matrix.
class FactorizedSpd {
 public:
  explicit FactorizedSpd(const SparseOperator& K);
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  const SparseOperator& op() const { return *op_; }

 private:
  const SparseOperator* op_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
};

double l2_inner(const SparseOperator& mass, const Eigen::VectorXd& v, const Eigen::VectorXd& w);
double l2_norm(const SparseOperator& mass, const Eigen::VectorXd& v);

/// Convenience overloads that assemble the mass matrix on the fly.
double l2_inner(const TriMesh& mesh, const NodalFunction& v, const NodalFunction& w);
double l2_norm(const TriMesh& mesh, const NodalFunction& v);

}  // namespace mloc
