#include "mloc/ocp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mloc {

namespace {

enum : char { kInactive = 0, kLower = 1, kUpper = 2 };

}  // namespace

void OCPConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("ocp: alpha must be positive");
  if (!(u_a <= u_b)) throw std::invalid_argument("ocp: u_a must not exceed u_b");
  if (!z) throw std::invalid_argument("ocp: desired state z is unset");
  if (control_integration == ControlIntegration::cutcell)
    throw std::invalid_argument("ocp: cutcell control integration is not implemented");
}

PathwiseSolver::PathwiseSolver(const TriMesh& mesh, const KLBasis& basis, const OCPConfig& cfg,
                               CoeffQuadrature quad)
    : mesh_(&mesh), basis_(&basis), cfg_(cfg), quad_(quad) {
  cfg_.validate();
  mass_ = assemble_mass(mesh);
  z_h_ = interpolate_interior(mesh, cfg_.z);
  load_z_ = mass_.mat * z_h_;

  const int nt = mesh.n_triangles();
  elem_k_.resize(nt);
  elem_dofs_.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const auto& tri = mesh.triangles[t];
    const Point& a = mesh.vertices[tri[0]];
    const Point& b = mesh.vertices[tri[1]];
    const Point& c = mesh.vertices[tri[2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    const double area = 0.5 * det;
    if (!(area > 1e-14))
      throw SolveError("degenerate element " + std::to_string(t) + " on level " +
                       std::to_string(mesh.level));
    const double gx[3] = {(b.y - c.y) / det, (c.y - a.y) / det, (a.y - b.y) / det};
    const double gy[3] = {(c.x - b.x) / det, (a.x - c.x) / det, (b.x - a.x) / det};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        elem_k_[t][3 * i + j] = area * (gx[i] * gx[j] + gy[i] * gy[j]);
    for (int i = 0; i < 3; ++i) elem_dofs_[t][i] = mesh.interior_index[tri[i]];
  }

  const int n_modes = static_cast<int>(basis.n_modes());
  const int rows = (quad_ == CoeffQuadrature::centroid) ? nt : 3 * nt;
  mode_table_.resize(rows, n_modes);
  for (int t = 0; t < nt; ++t) {
    if (quad_ == CoeffQuadrature::centroid) {
      const Point c = mesh.centroid(t);
      for (int m = 0; m < n_modes; ++m) mode_table_(t, m) = basis.modes[m].eval(c);
    } else {
      for (int k = 0; k < 3; ++k) {
        const Point& v = mesh.vertices[mesh.triangles[t][k]];
        for (int m = 0; m < n_modes; ++m) mode_table_(3 * t + k, m) = basis.modes[m].eval(v);
      }
    }
  }
}

Eigen::VectorXd PathwiseSolver::coeff_per_element(const CoefficientSample& sample) const {
  const int nt = mesh_->n_triangles();
  const int n_modes = static_cast<int>(basis_->n_modes());
  Eigen::VectorXd a(nt);
  if (quad_ == CoeffQuadrature::centroid) {
    for (int t = 0; t < nt; ++t) {
      double k = 0.0;
      for (int m = 0; m < n_modes; ++m) k += mode_table_(t, m) * sample.y[m];
      a[t] = std::exp(k);
    }
  } else {
    for (int t = 0; t < nt; ++t) {
      double s = 0.0;
      for (int v = 0; v < 3; ++v) {
        double k = 0.0;
        for (int m = 0; m < n_modes; ++m) k += mode_table_(3 * t + v, m) * sample.y[m];
        s += std::exp(k);
      }
      a[t] = s / 3.0;
    }
  }
  return a;
}

SparseOperator PathwiseSolver::stiffness(const CoefficientSample& sample) const {
  const Eigen::VectorXd a = coeff_per_element(sample);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh_->n_triangles() * 9);
  for (int t = 0; t < mesh_->n_triangles(); ++t) {
    for (int i = 0; i < 3; ++i) {
      const int di = elem_dofs_[t][i];
      if (di < 0) continue;
      for (int j = 0; j < 3; ++j) {
        const int dj = elem_dofs_[t][j];
        if (dj >= 0) trips.emplace_back(di, dj, a[t] * elem_k_[t][3 * i + j]);
      }
    }
  }
  SparseOperator K;
  K.dimension = mesh_->n_interior();
  K.level = mesh_->level;
  K.mat.resize(K.dimension, K.dimension);
  K.mat.setFromTriplets(trips.begin(), trips.end());
  K.mat.makeCompressed();
  return K;
}

// Builds the 2N x 2N coupled optimality system
//   [ M          K        ] [y]    [M z_h]
//   [ K   -(1/a) M D_I    ] [q] =  [M d_A]
// with q = -p and u = D_I q/alpha + d_A. The sparsity pattern is fixed once
// (inactive-set masking only rewrites stored values), so the symbolic LU is
// reused across samples and Newton iterations.
void PathwiseSolver::assemble_block(const CoefficientSample& sample,
                                    const std::vector<char>& active) {
  const int n = mass_.dimension;
  if (!pattern_ready_) {
    block_trips_.clear();
    for (int c = 0; c < mass_.mat.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(mass_.mat, c); it; ++it)
        block_trips_.emplace_back(static_cast<int>(it.row()), c, it.value());
    // K slots (values rewritten per sample), one per element entry
    for (int t = 0; t < mesh_->n_triangles(); ++t)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const int di = elem_dofs_[t][i], dj = elem_dofs_[t][j];
          if (di < 0 || dj < 0) continue;
          block_trips_.emplace_back(di, n + dj, 0.0);
          block_trips_.emplace_back(n + di, dj, 0.0);
        }
    for (int c = 0; c < mass_.mat.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(mass_.mat, c); it; ++it)
        block_trips_.emplace_back(n + static_cast<int>(it.row()), n + c, 0.0);

    block_.resize(2 * n, 2 * n);
    block_.setFromTriplets(block_trips_.begin(), block_trips_.end());
    block_.makeCompressed();

    // map the mutable slots to storage indices
    auto storage_index = [&](int r, int c) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(block_, c); it; ++it)
        if (it.row() == r) return static_cast<std::size_t>(&it.valueRef() - block_.valuePtr());
      throw std::logic_error("block pattern lookup failed");
    };
    k_top_slot_.clear();
    k_bot_slot_.clear();
    for (int t = 0; t < mesh_->n_triangles(); ++t)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const int di = elem_dofs_[t][i], dj = elem_dofs_[t][j];
          if (di < 0 || dj < 0) continue;
          k_top_slot_.push_back(storage_index(di, n + dj));
          k_bot_slot_.push_back(storage_index(n + di, dj));
        }
    m_col_slot_.clear();
    for (int c = 0; c < mass_.mat.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(mass_.mat, c); it; ++it)
        m_col_slot_.push_back(storage_index(n + static_cast<int>(it.row()), n + c));

    lu_.analyzePattern(block_);
    pattern_ready_ = true;
  }

  double* vals = block_.valuePtr();
  for (std::size_t s : k_top_slot_) vals[s] = 0.0;
  for (std::size_t s : k_bot_slot_) vals[s] = 0.0;

  const Eigen::VectorXd a = coeff_per_element(sample);
  std::size_t slot = 0;
  for (int t = 0; t < mesh_->n_triangles(); ++t)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const int di = elem_dofs_[t][i], dj = elem_dofs_[t][j];
        if (di < 0 || dj < 0) continue;
        const double v = a[t] * elem_k_[t][3 * i + j];
        vals[k_top_slot_[slot]] += v;
        vals[k_bot_slot_[slot]] += v;
        ++slot;
      }

  const double inv_alpha = 1.0 / cfg_.alpha;
  std::size_t ms = 0;
  for (int c = 0; c < mass_.mat.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(mass_.mat, c); it; ++it, ++ms)
      vals[m_col_slot_[ms]] = (active[c] == kInactive) ? -inv_alpha * it.value() : 0.0;
}

PathwiseSolution PathwiseSolver::solve(const CoefficientSample& sample) {
  const int n = mass_.dimension;
  const double alpha = cfg_.alpha;
  PathwiseSolution sol;
  sol.u.level = sol.y.level = sol.p.level = mesh_->level;

  std::vector<char> active(n, kInactive);
  Eigen::VectorXd bound_load = Eigen::VectorXd::Zero(n);

  auto classify = [&](const Eigen::VectorXd& q) {
    // q = -p; candidate control value is q_i / alpha. Ties go inactive.
    std::vector<char> sets(n, kInactive);
    for (int i = 0; i < n; ++i) {
      const double v = q[i] / alpha;
      if (v < cfg_.u_a)
        sets[i] = kLower;
      else if (v > cfg_.u_b)
        sets[i] = kUpper;
    }
    return sets;
  };

  const bool boxed = !cfg_.unconstrained();
  if (boxed) {
    // Initial guess u0 = clamp(0); active sets from its adjoint.
    const SparseOperator K = stiffness(sample);
    FactorizedSpd kfac(K);
    Eigen::VectorXd u0 = Eigen::VectorXd::Constant(n, cfg_.clamp(0.0));
    Eigen::VectorXd y0 = kfac.solve(mass_.mat * u0);
    Eigen::VectorXd q0 = -kfac.solve(mass_.mat * (y0 - z_h_));
    active = classify(q0);
  }

  Eigen::VectorXd y, q, u_lin;
  bool converged = false;
  double residual = 0.0;
  const int maxit = boxed ? cfg_.newton_maxit : 1;
  int iters = 0;
  for (int it = 0; it < maxit; ++it) {
    bound_load.setZero();
    for (int i = 0; i < n; ++i) {
      if (active[i] == kLower)
        bound_load[i] = cfg_.u_a;
      else if (active[i] == kUpper)
        bound_load[i] = cfg_.u_b;
    }
    assemble_block(sample, active);
    lu_.factorize(block_);
    if (lu_.info() != Eigen::Success)
      throw SolveError("optimality system factorization failed (level " +
                       std::to_string(mesh_->level) + ", sample " +
                       std::to_string(sample.sample_id) + ")");
    Eigen::VectorXd rhs(2 * n);
    rhs.head(n) = load_z_;
    rhs.tail(n) = mass_.mat * bound_load;
    Eigen::VectorXd x = lu_.solve(rhs);
    // normwise backward error with one refinement pass if needed
    const double scale = block_.norm() * x.norm() + rhs.norm();
    for (int pass = 0; pass < 2; ++pass) {
      const double eta = scale > 0.0 ? (block_ * x - rhs).norm() / scale : 0.0;
      if (eta <= cfg_.solve_rtol) break;
      if (pass == 1)
        throw SolveError("optimality system backward error above tolerance (level " +
                         std::to_string(mesh_->level) + ", sample " +
                         std::to_string(sample.sample_id) + ")");
      x += lu_.solve(rhs - block_ * x);
    }
    y = x.head(n);
    q = x.tail(n);
    ++iters;

    u_lin = bound_load;
    for (int i = 0; i < n; ++i)
      if (active[i] == kInactive) u_lin[i] = q[i] / alpha;

    if (!boxed) {
      converged = true;
      residual = 0.0;
      break;
    }
    const std::vector<char> next = classify(q);
    Eigen::VectorXd u_clamped(n);
    for (int i = 0; i < n; ++i) u_clamped[i] = cfg_.clamp(q[i] / alpha);
    residual = l2_norm(mass_, u_lin - u_clamped);
    if (next == active && residual <= cfg_.newton_tol) {
      converged = true;
      break;
    }
    active = next;
  }
  if (!converged)
    throw SolveError("semi-smooth Newton did not converge in " + std::to_string(maxit) +
                     " iterations (level " + std::to_string(mesh_->level) + ", sample " +
                     std::to_string(sample.sample_id) +
                     ", residual " + std::to_string(residual) + ")");

  sol.newton_iters = iters;
  sol.residual = residual;
  sol.y.values = y;
  sol.p.values = -q;
  sol.u.values.resize(n);
  for (int i = 0; i < n; ++i) sol.u.values[i] = cfg_.clamp(q[i] / alpha);
  int n_active = 0;
  for (int i = 0; i < n; ++i) n_active += (active[i] != kInactive);
  sol.active_fraction = n == 0 ? 0.0 : static_cast<double>(n_active) / n;

  const Eigen::VectorXd dev = y - z_h_;
  sol.cost_value = 0.5 * l2_inner(mass_, dev, dev) +
                   0.5 * alpha * l2_inner(mass_, sol.u.values, sol.u.values);
  return sol;
}

double PathwiseSolver::cost_of(const CoefficientSample& sample, const Eigen::VectorXd& u) {
  if (u.size() != mass_.dimension) throw std::invalid_argument("cost_of: size mismatch");
  const SparseOperator K = stiffness(sample);
  FactorizedSpd kfac(K);
  const Eigen::VectorXd y = kfac.solve(mass_.mat * u);
  const Eigen::VectorXd dev = y - z_h_;
  return 0.5 * l2_inner(mass_, dev, dev) + 0.5 * cfg_.alpha * l2_inner(mass_, u, u);
}

PathwiseSolution solve_unconstrained(const TriMesh& mesh, const CoefficientSample& sample,
                                     const OCPConfig& cfg) {
  if (!cfg.unconstrained())
    throw std::invalid_argument("solve_unconstrained requires infinite bounds");
  PathwiseSolver solver(mesh, *sample.basis, cfg);
  return solver.solve(sample);
}

PathwiseSolution solve_constrained(const TriMesh& mesh, const CoefficientSample& sample,
                                   const OCPConfig& cfg) {
  if (cfg.unconstrained())
    throw std::invalid_argument("solve_constrained requires at least one finite bound");
  PathwiseSolver solver(mesh, *sample.basis, cfg);
  return solver.solve(sample);
}

PathwiseSolution solve_pathwise(const TriMesh& mesh, const CoefficientSample& sample,
                                const OCPConfig& cfg) {
  PathwiseSolver solver(mesh, *sample.basis, cfg);
  return solver.solve(sample);
}

double evaluate_cost(const TriMesh& mesh, const CoefficientSample& sample, const OCPConfig& cfg,
                     const NodalFunction& u) {
  if (u.level != mesh.level) throw std::invalid_argument("evaluate_cost: level mismatch");
  PathwiseSolver solver(mesh, *sample.basis, cfg);
  return solver.cost_of(sample, u.values);
}

}  // namespace mloc
