// Test-side reference implementations, kept independent of the solver paths
// they check: a dense 3-block KKT solve and a projected-gradient iteration.
#pragma once

#include "mloc/ocp.hpp"

#include <Eigen/Dense>

namespace mloc::oracles {

struct DenseKkt {
  Eigen::VectorXd u, y, p;
};

/// Dense LU solve of the full first-order system in (y, u, multiplier) form,
/// a different elimination order than the production 2x2 block system.
inline DenseKkt dense_kkt_oracle(const TriMesh& mesh, const CoefficientSample& sample,
                                 const OCPConfig& cfg) {
  const int n = mesh.n_interior();
  const Eigen::MatrixXd K = Eigen::MatrixXd(assemble_stiffness(mesh, sample).mat);
  const Eigen::MatrixXd M = Eigen::MatrixXd(assemble_mass(mesh).mat);
  const Eigen::VectorXd zh = interpolate_interior(mesh, cfg.z);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3 * n, 3 * n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(3 * n);
  // stationarity in y, stationarity in u, state constraint
  A.block(0, 0, n, n) = M;
  A.block(0, 2 * n, n, n) = K.transpose();
  A.block(n, n, n, n) = cfg.alpha * M;
  A.block(n, 2 * n, n, n) = -M.transpose();
  A.block(2 * n, 0, n, n) = K;
  A.block(2 * n, n, n, n) = -M;
  b.head(n) = M * zh;

  const Eigen::VectorXd x = A.lu().solve(b);
  DenseKkt out;
  out.y = x.segment(0, n);
  out.u = x.segment(n, n);
  out.p = -x.segment(2 * n, n);  // adjoint w.r.t. K p = M (y - z)
  return out;
}

/// Projected gradient with a fixed step on the nodal control variables,
/// run to stagnation. Fixed points satisfy the same nodal complementarity
/// as the active-set solver.
inline Eigen::VectorXd projected_gradient_oracle(const TriMesh& mesh,
                                                 const CoefficientSample& sample,
                                                 const OCPConfig& cfg, double tol = 1e-13,
                                                 int max_iters = 200000) {
  const int n = mesh.n_interior();
  const SparseOperator K = assemble_stiffness(mesh, sample);
  const SparseOperator M = assemble_mass(mesh);
  const Eigen::VectorXd zh = interpolate_interior(mesh, cfg.z);
  FactorizedSpd fac(K);

  auto adjoint_of = [&](const Eigen::VectorXd& u) {
    const Eigen::VectorXd y = fac.solve(M.mat * u);
    return fac.solve(M.mat * (y - zh)).eval();
  };

  // spectral bound of u -> S*S u by power iteration, for a safe step size
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
  double lambda = 0.0;
  for (int it = 0; it < 40; ++it) {
    const Eigen::VectorXd w = fac.solve(M.mat * fac.solve(M.mat * v));
    lambda = w.norm() / v.norm();
    v = w / w.norm();
  }
  const double tau = 1.0 / (cfg.alpha + 2.0 * lambda);

  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u[i] = cfg.clamp(0.0);
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd p = adjoint_of(u);
    Eigen::VectorXd next(n);
    for (int i = 0; i < n; ++i) next[i] = cfg.clamp(u[i] - tau * (cfg.alpha * u[i] + p[i]));
    const double step = (next - u).norm();
    u = next;
    if (step <= tol) break;
  }
  return u;
}

}  // namespace mloc::oracles
