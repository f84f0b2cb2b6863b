#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mloc/mesh.hpp"
#include "mloc/rng.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

using namespace mloc;

TEST_CASE("initial mesh: four triangles, one interior dof") {
  const TriMesh m = build_initial_mesh();
  CHECK(m.n_vertices() == 5);
  CHECK(m.n_triangles() == 4);
  CHECK(m.n_interior() == 1);
  CHECK(m.level == 0);

  double area = 0.0;
  for (int t = 0; t < m.n_triangles(); ++t) {
    CHECK(m.signed_area(t) > 0.0);
    CHECK(m.signed_area(t) == doctest::Approx(0.25).epsilon(1e-14));
    area += m.signed_area(t);
  }
  CHECK(area == doctest::Approx(1.0).epsilon(1e-15));

  // the single interior dof is the center vertex
  const int v = m.interior_vertices[0];
  CHECK(m.vertices[v].x == 0.0);
  CHECK(m.vertices[v].y == 0.0);
}

TEST_CASE("refinement counts and dyadic h") {
  const TriMesh m0 = build_initial_mesh();
  const TriMesh m1 = refine_uniform(m0);
  CHECK(m1.n_triangles() == 16);
  CHECK(m1.n_vertices() == 13);
  CHECK(m1.n_interior() == 5);
  CHECK(m1.level == 1);
  CHECK(m1.h == m0.h * 0.5);

  const TriMesh m2 = refine_uniform(m1);
  CHECK(m2.n_triangles() == 4 * m1.n_triangles());
  CHECK(m2.h == m0.h / 4.0);

  // parent vertices are a prefix of the child's
  for (int v = 0; v < m1.n_vertices(); ++v) {
    CHECK(m2.vertices[v].x == m1.vertices[v].x);
    CHECK(m2.vertices[v].y == m1.vertices[v].y);
  }
}

TEST_CASE("interior dof growth is Theta(4^l) and areas always sum to 1") {
  TriMesh m = build_initial_mesh();
  int prev = m.n_interior();
  for (int l = 1; l <= 4; ++l) {
    m = refine_uniform(m);
    CHECK(m.n_interior() > prev);
    // exact count for the crossed pattern: ((2^{l+1}-1)^2 + 1) / 2
    const int n = (1 << (l + 1)) - 1;
    CHECK(m.n_interior() == (n * n + 1) / 2);
    CHECK(4 * prev > m.n_interior() / 2);  // Theta(4^l): ratio in (2,8)
    prev = m.n_interior();

    double area = 0.0;
    for (int t = 0; t < m.n_triangles(); ++t) area += m.signed_area(t);
    CHECK(area == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("conformity: every edge in at most two triangles, no hanging vertices") {
  TriMesh m = build_initial_mesh();
  for (int l = 0; l < 3; ++l) m = refine_uniform(m);

  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& tri : m.triangles)
    for (int e = 0; e < 3; ++e) {
      auto key = std::minmax(tri[e], tri[(e + 1) % 3]);
      edge_count[key]++;
    }
  for (const auto& [edge, count] : edge_count) {
    CHECK(count >= 1);
    CHECK(count <= 2);
    // no vertex strictly inside this edge
    const Point& a = m.vertices[edge.first];
    const Point& b = m.vertices[edge.second];
    for (int v = 0; v < m.n_vertices(); ++v) {
      if (v == edge.first || v == edge.second) continue;
      const Point& p = m.vertices[v];
      const double cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
      if (std::abs(cross) > 1e-14) continue;
      const double dot = (p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y);
      const double len2 = (b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y);
      CHECK((dot <= 1e-14 || dot >= len2 - 1e-14));
    }
  }
}

TEST_CASE("boundary mask matches |x|=0.5 or |y|=0.5") {
  TriMesh m = refine_uniform(refine_uniform(build_initial_mesh()));
  for (int v = 0; v < m.n_vertices(); ++v) {
    const bool on_bnd =
        std::abs(std::abs(m.vertices[v].x) - 0.5) < 1e-12 ||
        std::abs(std::abs(m.vertices[v].y) - 0.5) < 1e-12;
    CHECK(int(m.interior_mask[v]) == int(!on_bnd));
  }
}

TEST_CASE("prolongation reproduces coarse P1 functions exactly") {
  const MeshHierarchy hy = MeshHierarchy::build(3);

  SUBCASE("identity at equal levels") {
    Eigen::VectorXd v = Eigen::VectorXd::Random(hy.mesh(2).n_interior());
    const Eigen::VectorXd w = prolong(hy, 2, 2, v);
    CHECK((w - v).norm() == 0.0);
  }

  SUBCASE("constant-1 interior data") {
    const TriMesh& coarse = hy.mesh(1);
    const TriMesh& fine = hy.mesh(2);
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(coarse.n_interior());
    const Eigen::VectorXd w = prolong(hy, 1, 2, ones);
    // coarse interior vertices keep the value 1
    for (int i = 0; i < coarse.n_interior(); ++i) {
      const int v = coarse.interior_vertices[i];
      CHECK(w[fine.interior_index[v]] == 1.0);
    }
  }

  SUBCASE("pointwise equality at random points") {
    for (int from = 0; from <= 2; ++from) {
      const TriMesh& coarse = hy.mesh(from);
      Eigen::VectorXd v(coarse.n_interior());
      for (int i = 0; i < v.size(); ++i)
        v[i] = 2.0 * rng::uniform_open(rng::hash3(7, from, i)) - 1.0;
      const Eigen::VectorXd w = prolong(hy, from, 3, v);
      for (int k = 0; k < 50; ++k) {
        const Point p{rng::uniform_open(rng::hash3(1, from, k)) - 0.5,
                      rng::uniform_open(rng::hash3(2, from, k)) - 0.5};
        CHECK(eval_p1(hy.mesh(3), w, p) ==
              doctest::Approx(eval_p1(coarse, v, p)).epsilon(1e-14));
      }
    }
  }

  SUBCASE("coarse vertices keep their nodal value") {
    const TriMesh& coarse = hy.mesh(0);
    Eigen::VectorXd v = Eigen::VectorXd::Constant(coarse.n_interior(), 0.7);
    const Eigen::VectorXd w = prolong(hy, 0, 1, v);
    CHECK(w[hy.mesh(1).interior_index[coarse.interior_vertices[0]]] == 0.7);
  }
}

TEST_CASE("prolong rejects bad arguments") {
  const MeshHierarchy hy = MeshHierarchy::build(2);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(hy.mesh(1).n_interior());
  CHECK_THROWS(prolong(hy, 1, 5, v));
  CHECK_THROWS(prolong(hy, 2, 1, v));
  CHECK_THROWS(prolong(hy, 0, 1, v));  // wrong length for level 0
}

TEST_CASE("mesh text dump format") {
  const TriMesh m = build_initial_mesh();
  std::ostringstream os;
  write_text(m, os);
  std::istringstream in(os.str());
  std::string tag;
  int nv = 0, nt = 0;
  while (in >> tag) {
    if (tag == "v") {
      double x, y;
      int flag;
      REQUIRE(static_cast<bool>(in >> x >> y >> flag));
      CHECK((flag == 0 || flag == 1));
      ++nv;
    } else {
      REQUIRE(tag == "t");
      int i, j, k;
      REQUIRE(static_cast<bool>(in >> i >> j >> k));
      ++nt;
    }
  }
  CHECK(nv == 5);
  CHECK(nt == 4);
}
