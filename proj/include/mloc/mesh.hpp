#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <array>
#include <iosfwd>
#include <vector>

namespace mloc {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Conforming triangulation of the square D = (-0.5,0.5)^2.
///
/// Level l is obtained from level l-1 by uniform (red) refinement, so
/// h = 2^-level * h0 exactly and the vertex set of a mesh is a prefix of the
/// vertex set of its refinement. Interior vertices carry the degrees of
/// freedom; boundary vertices are the homogeneous Dirichlet nodes.
struct TriMesh {
  std::vector<Point> vertices;
  std::vector<std::array<int, 3>> triangles;  // CCW vertex indices
  std::vector<char> interior_mask;            // 1 = interior dof
  std::vector<int> interior_index;            // vertex -> dof id, -1 on boundary
  std::vector<int> interior_vertices;         // dof id -> vertex
  int level = 0;
  double h = 0.0;  // dyadic: 2^-level * h0

  int n_vertices() const { return static_cast<int>(vertices.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }
  int n_interior() const { return static_cast<int>(interior_vertices.size()); }

  /// Signed area of triangle t (positive for CCW orientation).
  double signed_area(int t) const;
  Point centroid(int t) const;
};

/// The 4-triangle crossed mesh of the unit square: 4 corners plus the center,
/// one interior dof. h0 is the computed maximum element diameter.
TriMesh build_initial_mesh();

/// Red refinement: each triangle split into 4 congruent children via edge
/// midpoints. Parent vertices keep their indices as a prefix of the child's.
TriMesh refine_uniform(const TriMesh& mesh);

/// Plain-text dump: `v x y interior_flag` per vertex, `t i j k` per triangle.
void write_text(const TriMesh& mesh, std::ostream& os);

/// Nested meshes from level 0 to max_level with exact P1 prolongation
/// matrices (interior dofs) between consecutive levels.
struct MeshHierarchy {
  std::vector<TriMesh> levels;
  std::vector<Eigen::SparseMatrix<double>> prolongations;  // [l]: level l -> l+1

  static MeshHierarchy build(int max_level);

  const TriMesh& mesh(int level) const { return levels.at(level); }
  int max_level() const { return static_cast<int>(levels.size()) - 1; }
};

/// Exact nodal representation of a coarse P1 function on a finer level.
/// from_level == to_level is the identity.
Eigen::VectorXd prolong(const MeshHierarchy& hierarchy, int from_level, int to_level,
                        const Eigen::VectorXd& coeffs);

/// Point evaluation of the P1 function with the given interior nodal values
/// (zero on the boundary). p must lie in the closed square.
double eval_p1(const TriMesh& mesh, const Eigen::VectorXd& interior_values, Point p);

}  // namespace mloc
