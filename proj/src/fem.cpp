#include "mloc/fem.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

namespace mloc {

namespace {

constexpr double kDegenerateArea = 1e-14;

struct ElemGeom {
  double area;
  double gx[3];
  double gy[3];  // gradients of the three barycentric functions
};

ElemGeom elem_geom(const TriMesh& mesh, int t) {
  const auto& tri = mesh.triangles[t];
  const Point& a = mesh.vertices[tri[0]];
  const Point& b = mesh.vertices[tri[1]];
  const Point& c = mesh.vertices[tri[2]];
  const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
  const double area = 0.5 * det;
  if (!(area > kDegenerateArea))
    throw SolveError("degenerate element " + std::to_string(t) + " on level " +
                     std::to_string(mesh.level));
  ElemGeom g;
  g.area = area;
  g.gx[0] = (b.y - c.y) / det;
  g.gy[0] = (c.x - b.x) / det;
  g.gx[1] = (c.y - a.y) / det;
  g.gy[1] = (a.x - c.x) / det;
  g.gx[2] = (a.y - b.y) / det;
  g.gy[2] = (b.x - a.x) / det;
  return g;
}

double coeff_on_element(const TriMesh& mesh, int t, const CoefficientSample& sample,
                        CoeffQuadrature quad) {
  if (quad == CoeffQuadrature::centroid) return sample(mesh.centroid(t));
  const auto& tri = mesh.triangles[t];
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += sample(mesh.vertices[tri[k]]);
  return s / 3.0;
}

template <typename EntrySink>
void stiffness_entries(const TriMesh& mesh, const CoefficientSample& sample, CoeffQuadrature quad,
                       EntrySink&& sink) {
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const ElemGeom g = elem_geom(mesh, t);
    const double a = coeff_on_element(mesh, t, sample, quad);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        sink(mesh.triangles[t][i], mesh.triangles[t][j],
             a * (g.area * (g.gx[i] * g.gx[j] + g.gy[i] * g.gy[j])));
  }
}

template <typename EntrySink>
void mass_entries(const TriMesh& mesh, EntrySink&& sink) {
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const ElemGeom g = elem_geom(mesh, t);
    const double w = g.area / 12.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        sink(mesh.triangles[t][i], mesh.triangles[t][j], (i == j ? 2.0 : 1.0) * w);
  }
}

template <typename EntryGen>
SparseOperator assemble_interior(const TriMesh& mesh, EntryGen&& gen) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.n_triangles() * 9);
  gen([&](int vi, int vj, double val) {
    const int i = mesh.interior_index[vi];
    const int j = mesh.interior_index[vj];
    if (i >= 0 && j >= 0) trips.emplace_back(i, j, val);
  });
  SparseOperator op;
  op.dimension = mesh.n_interior();
  op.level = mesh.level;
  op.mat.resize(op.dimension, op.dimension);
  op.mat.setFromTriplets(trips.begin(), trips.end());
  op.mat.makeCompressed();
  return op;
}

template <typename EntryGen>
Eigen::SparseMatrix<double> assemble_full(const TriMesh& mesh, EntryGen&& gen) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.n_triangles() * 9);
  gen([&](int vi, int vj, double val) { trips.emplace_back(vi, vj, val); });
  Eigen::SparseMatrix<double> m(mesh.n_vertices(), mesh.n_vertices());
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

}  // namespace

SparseOperator assemble_stiffness(const TriMesh& mesh, const CoefficientSample& sample,
                                  CoeffQuadrature quad) {
  return assemble_interior(mesh, [&](auto&& sink) { stiffness_entries(mesh, sample, quad, sink); });
}

Eigen::SparseMatrix<double> assemble_stiffness_full(const TriMesh& mesh,
                                                    const CoefficientSample& sample,
                                                    CoeffQuadrature quad) {
  return assemble_full(mesh, [&](auto&& sink) { stiffness_entries(mesh, sample, quad, sink); });
}

SparseOperator assemble_mass(const TriMesh& mesh) {
  return assemble_interior(mesh, [&](auto&& sink) { mass_entries(mesh, sink); });
}

Eigen::SparseMatrix<double> assemble_mass_full(const TriMesh& mesh) {
  return assemble_full(mesh, [&](auto&& sink) { mass_entries(mesh, sink); });
}

Eigen::VectorXd assemble_load(const TriMesh& mesh, const ScalarField& f) {
  Eigen::VectorXd load = Eigen::VectorXd::Zero(mesh.n_interior());
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const ElemGeom g = elem_geom(mesh, t);
    const auto& tri = mesh.triangles[t];
    const Point* v[3] = {&mesh.vertices[tri[0]], &mesh.vertices[tri[1]], &mesh.vertices[tri[2]]};
    // Edge midpoints; basis function i is 1/2 on the two midpoints of the
    // edges containing vertex i and 0 on the opposite one.
    double fm[3];
    for (int e = 0; e < 3; ++e) {
      const Point m{0.5 * (v[(e + 1) % 3]->x + v[(e + 2) % 3]->x),
                    0.5 * (v[(e + 1) % 3]->y + v[(e + 2) % 3]->y)};
      fm[e] = f(m);  // midpoint opposite vertex e
    }
    const double w = g.area / 3.0;
    for (int i = 0; i < 3; ++i) {
      const int dof = mesh.interior_index[tri[i]];
      if (dof < 0) continue;
      load[dof] += w * 0.5 * (fm[(i + 1) % 3] + fm[(i + 2) % 3]);
    }
  }
  return load;
}

Eigen::VectorXd interpolate_interior(const TriMesh& mesh, const ScalarField& f) {
  Eigen::VectorXd v(mesh.n_interior());
  for (int i = 0; i < mesh.n_interior(); ++i) v[i] = f(mesh.vertices[mesh.interior_vertices[i]]);
  return v;
}

Eigen::VectorXd assemble_load_degree5(const TriMesh& mesh, const ScalarField& f) {
  const double s15 = std::sqrt(15.0);
  const double b1 = (6.0 + s15) / 21.0, a1 = 1.0 - 2.0 * b1, w1 = (155.0 + s15) / 1200.0;
  const double b2 = (6.0 - s15) / 21.0, a2 = 1.0 - 2.0 * b2, w2 = (155.0 - s15) / 1200.0;
  // (barycentric triple, weight), weights summing to 1
  const double pts[7][4] = {
      {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 9.0 / 40.0}, {a1, b1, b1, w1}, {b1, a1, b1, w1},
      {b1, b1, a1, w1},                              {a2, b2, b2, w2}, {b2, a2, b2, w2},
      {b2, b2, a2, w2}};

  Eigen::VectorXd load = Eigen::VectorXd::Zero(mesh.n_interior());
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const ElemGeom g = elem_geom(mesh, t);
    const auto& tri = mesh.triangles[t];
    const Point* v[3] = {&mesh.vertices[tri[0]], &mesh.vertices[tri[1]], &mesh.vertices[tri[2]]};
    for (const auto& q : pts) {
      const Point p{q[0] * v[0]->x + q[1] * v[1]->x + q[2] * v[2]->x,
                    q[0] * v[0]->y + q[1] * v[1]->y + q[2] * v[2]->y};
      const double fw = f(p) * q[3] * g.area;
      for (int i = 0; i < 3; ++i) {
        const int dof = mesh.interior_index[tri[i]];
        if (dof >= 0) load[dof] += fw * q[i];
      }
    }
  }
  return load;
}

NodalFunction solve_dirichlet(const SparseOperator& K, const Eigen::VectorXd& rhs, double rtol) {
  if (rhs.size() != K.dimension) throw std::invalid_argument("solve_dirichlet: size mismatch");
  NodalFunction out;
  out.level = K.level;
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) {
    out.values = Eigen::VectorXd::Zero(K.dimension);
    return out;
  }
  FactorizedSpd fac(K);
  out.values = fac.solve(rhs);
  // iterative refinement until the relative residual meets rtol
  double rel = (K.mat * out.values - rhs).norm() / rhs_norm;
  for (int pass = 0; pass < 3 && !(rel <= rtol); ++pass) {
    out.values += fac.solve(rhs - K.mat * out.values);
    rel = (K.mat * out.values - rhs).norm() / rhs_norm;
  }
  if (!(rel <= rtol)) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", rel);
    throw SolveError(std::string("solve_dirichlet: relative residual ") + buf + " on level " +
                     std::to_string(K.level));
  }
  return out;
}

FactorizedSpd::FactorizedSpd(const SparseOperator& K) : op_(&K) {
  ldlt_.compute(K.mat);
  if (ldlt_.info() != Eigen::Success)
    throw SolveError("SPD factorization failed on level " + std::to_string(K.level));
}

Eigen::VectorXd FactorizedSpd::solve(const Eigen::VectorXd& rhs) const {
  return ldlt_.solve(rhs);
}

double l2_inner(const SparseOperator& mass, const Eigen::VectorXd& v, const Eigen::VectorXd& w) {
  return v.dot(mass.mat * w);
}

double l2_norm(const SparseOperator& mass, const Eigen::VectorXd& v) {
  return std::sqrt(std::max(0.0, l2_inner(mass, v, v)));
}

double l2_inner(const TriMesh& mesh, const NodalFunction& v, const NodalFunction& w) {
  if (v.level != w.level || v.level != mesh.level)
    throw std::invalid_argument("l2_inner: level mismatch");
  return l2_inner(assemble_mass(mesh), v.values, w.values);
}

double l2_norm(const TriMesh& mesh, const NodalFunction& v) {
  return std::sqrt(std::max(0.0, l2_inner(mesh, v, v)));
}

}  // namespace mloc
