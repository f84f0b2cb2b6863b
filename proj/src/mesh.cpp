#include "mloc/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <stdexcept>

namespace mloc {

namespace {

constexpr double kHalf = 0.5;

bool on_boundary(const Point& p) {
  return std::abs(std::abs(p.x) - kHalf) < 1e-12 || std::abs(std::abs(p.y) - kHalf) < 1e-12;
}

void finalize_dofs(TriMesh& m) {
  m.interior_mask.resize(m.vertices.size());
  m.interior_index.assign(m.vertices.size(), -1);
  m.interior_vertices.clear();
  for (int v = 0; v < m.n_vertices(); ++v) {
    const bool interior = !on_boundary(m.vertices[v]);
    m.interior_mask[v] = interior ? 1 : 0;
    if (interior) {
      m.interior_index[v] = static_cast<int>(m.interior_vertices.size());
      m.interior_vertices.push_back(v);
    }
  }
}

double diameter(const TriMesh& m, int t) {
  const auto& tri = m.triangles[t];
  double d = 0.0;
  for (int e = 0; e < 3; ++e) {
    const Point& a = m.vertices[tri[e]];
    const Point& b = m.vertices[tri[(e + 1) % 3]];
    d = std::max(d, std::hypot(a.x - b.x, a.y - b.y));
  }
  return d;
}

}  // namespace

double TriMesh::signed_area(int t) const {
  const auto& tri = triangles[t];
  const Point& a = vertices[tri[0]];
  const Point& b = vertices[tri[1]];
  const Point& c = vertices[tri[2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

Point TriMesh::centroid(int t) const {
  const auto& tri = triangles[t];
  const Point& a = vertices[tri[0]];
  const Point& b = vertices[tri[1]];
  const Point& c = vertices[tri[2]];
  return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0};
}

TriMesh build_initial_mesh() {
  TriMesh m;
  m.vertices = {{-kHalf, -kHalf}, {kHalf, -kHalf}, {kHalf, kHalf}, {-kHalf, kHalf}, {0.0, 0.0}};
  m.triangles = {{0, 1, 4}, {1, 2, 4}, {2, 3, 4}, {3, 0, 4}};
  m.level = 0;
  finalize_dofs(m);
  double h = 0.0;
  for (int t = 0; t < m.n_triangles(); ++t) h = std::max(h, diameter(m, t));
  m.h = h;
  return m;
}

TriMesh refine_uniform(const TriMesh& mesh) {
  TriMesh fine;
  fine.vertices = mesh.vertices;  // parent vertices stay a prefix
  fine.triangles.reserve(mesh.triangles.size() * 4);
  fine.level = mesh.level + 1;
  fine.h = mesh.h * 0.5;

  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    const Point& pa = mesh.vertices[a];
    const Point& pb = mesh.vertices[b];
    const int id = static_cast<int>(fine.vertices.size());
    fine.vertices.push_back({0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)});
    midpoint.emplace(key, id);
    return id;
  };

  for (const auto& tri : mesh.triangles) {
    const int v0 = tri[0], v1 = tri[1], v2 = tri[2];
    const int m01 = mid(v0, v1), m12 = mid(v1, v2), m20 = mid(v2, v0);
    fine.triangles.push_back({v0, m01, m20});
    fine.triangles.push_back({v1, m12, m01});
    fine.triangles.push_back({v2, m20, m12});
    fine.triangles.push_back({m01, m12, m20});
  }
  finalize_dofs(fine);
  return fine;
}

void write_text(const TriMesh& mesh, std::ostream& os) {
  for (int v = 0; v < mesh.n_vertices(); ++v) {
    os << "v " << mesh.vertices[v].x << ' ' << mesh.vertices[v].y << ' '
       << int(mesh.interior_mask[v]) << '\n';
  }
  for (const auto& tri : mesh.triangles) {
    os << "t " << tri[0] << ' ' << tri[1] << ' ' << tri[2] << '\n';
  }
}

namespace {

// Interpolation from coarse interior dofs to fine interior dofs. Coarse
// vertices keep their value, edge midpoints average the edge endpoints;
// boundary endpoints contribute zero. Midpoint vertex ids are recovered by
// replaying refine_uniform's deterministic edge walk.
Eigen::SparseMatrix<double> build_prolongation(const TriMesh& coarse, const TriMesh& fine) {
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(fine.n_interior() * 2);

  for (int v = 0; v < coarse.n_vertices(); ++v) {
    if (!fine.interior_mask[v]) continue;
    trips.emplace_back(fine.interior_index[v], coarse.interior_index[v], 1.0);
  }

  std::map<std::pair<int, int>, int> midpoint;
  int next_id = coarse.n_vertices();
  auto visit_edge = [&](int a, int b) {
    const auto key = std::minmax(a, b);
    if (!midpoint.emplace(key, next_id).second) return;
    const int vm = next_id++;
    if (!fine.interior_mask[vm]) return;
    const int row = fine.interior_index[vm];
    if (coarse.interior_mask[a]) trips.emplace_back(row, coarse.interior_index[a], 0.5);
    if (coarse.interior_mask[b]) trips.emplace_back(row, coarse.interior_index[b], 0.5);
  };
  for (const auto& tri : coarse.triangles) {
    visit_edge(tri[0], tri[1]);
    visit_edge(tri[1], tri[2]);
    visit_edge(tri[2], tri[0]);
  }
  if (next_id != fine.n_vertices()) throw std::logic_error("hierarchy levels are not nested");

  Eigen::SparseMatrix<double> P(fine.n_interior(), coarse.n_interior());
  P.setFromTriplets(trips.begin(), trips.end());
  P.makeCompressed();
  return P;
}

}  // namespace

MeshHierarchy MeshHierarchy::build(int max_level) {
  if (max_level < 0) throw std::invalid_argument("max_level must be >= 0");
  MeshHierarchy hy;
  hy.levels.push_back(build_initial_mesh());
  for (int l = 0; l < max_level; ++l) {
    hy.levels.push_back(refine_uniform(hy.levels.back()));
    hy.prolongations.push_back(build_prolongation(hy.levels[l], hy.levels[l + 1]));
  }
  return hy;
}

Eigen::VectorXd prolong(const MeshHierarchy& hierarchy, int from_level, int to_level,
                        const Eigen::VectorXd& coeffs) {
  if (from_level < 0 || to_level > hierarchy.max_level() || from_level > to_level)
    throw std::out_of_range("prolong: level out of range");
  if (coeffs.size() != hierarchy.mesh(from_level).n_interior())
    throw std::invalid_argument("prolong: coefficient length mismatch");
  Eigen::VectorXd v = coeffs;
  for (int l = from_level; l < to_level; ++l) v = hierarchy.prolongations[l] * v;
  return v;
}

double eval_p1(const TriMesh& mesh, const Eigen::VectorXd& interior_values, Point p) {
  if (interior_values.size() != mesh.n_interior())
    throw std::invalid_argument("eval_p1: value length mismatch");
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Point& a = mesh.vertices[tri[0]];
    const Point& b = mesh.vertices[tri[1]];
    const Point& c = mesh.vertices[tri[2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    const double l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
    const double l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
    const double l0 = 1.0 - l1 - l2;
    const double eps = 1e-12;
    if (l0 < -eps || l1 < -eps || l2 < -eps) continue;
    const double bary[3] = {l0, l1, l2};
    double value = 0.0;
    for (int k = 0; k < 3; ++k) {
      const int dof = mesh.interior_index[tri[k]];
      if (dof >= 0) value += bary[k] * interior_values[dof];
    }
    return value;
  }
  throw std::domain_error("eval_p1: point outside the mesh");
}

}  // namespace mloc
