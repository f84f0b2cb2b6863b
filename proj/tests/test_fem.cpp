#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mloc/estimators.hpp"
#include "mloc/fem.hpp"
#include "mloc/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace mloc;

namespace {

CoefficientSample unit_sample(const KLBasis& basis) {
  CoefficientSample s;
  s.basis = &basis;
  s.y.assign(basis.n_modes(), 0.0);  // a == 1
  return s;
}

// Test-side dense assembler: barycentric gradients via a 2x2 inverse instead
// of the cofactor formulas used by the library.
Eigen::MatrixXd dense_stiffness_oracle(const TriMesh& mesh, const CoefficientSample& a) {
  const int n = mesh.n_vertices();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Point& p0 = mesh.vertices[tri[0]];
    const Point& p1 = mesh.vertices[tri[1]];
    const Point& p2 = mesh.vertices[tri[2]];
    Eigen::Matrix2d J;
    J << p1.x - p0.x, p2.x - p0.x, p1.y - p0.y, p2.y - p0.y;
    const double area = 0.5 * J.determinant();
    const Eigen::Matrix2d Jit = J.inverse().transpose();
    Eigen::Matrix<double, 2, 3> G;
    G.col(1) = Jit.col(0);
    G.col(2) = Jit.col(1);
    G.col(0) = -G.col(1) - G.col(2);
    const double coeff = a(mesh.centroid(t));
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        K(tri[i], tri[j]) += coeff * area * G.col(i).dot(G.col(j));
  }
  return K;
}

Eigen::MatrixXd interior_dense(const TriMesh& mesh, const Eigen::MatrixXd& full) {
  const int n = mesh.n_interior();
  Eigen::MatrixXd out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out(i, j) = full(mesh.interior_vertices[i], mesh.interior_vertices[j]);
  return out;
}

}  // namespace

TEST_CASE("level-1 stiffness with a == 1 matches the exact hand-computed matrix") {
  const TriMesh mesh = refine_uniform(build_initial_mesh());
  const KLBasis basis = KLBasis::default_basis();
  const auto K = assemble_stiffness(mesh, unit_sample(basis));
  REQUIRE(K.dimension == 5);
  const Eigen::MatrixXd dense = Eigen::MatrixXd(K.mat);

  // exact entries by vertex coordinates: center diag 4, spokes diag 4,
  // center-spoke -1, spoke-spoke 0
  for (int i = 0; i < 5; ++i) {
    const Point& pi = mesh.vertices[mesh.interior_vertices[i]];
    const bool i_center = (pi.x == 0.0 && pi.y == 0.0);
    for (int j = 0; j < 5; ++j) {
      const Point& pj = mesh.vertices[mesh.interior_vertices[j]];
      const bool j_center = (pj.x == 0.0 && pj.y == 0.0);
      double expected;
      if (i == j)
        expected = 4.0;
      else if (i_center || j_center)
        expected = -1.0;
      else
        expected = 0.0;
      CHECK(dense(i, j) == doctest::Approx(expected).epsilon(1e-14));
    }
  }

  // exact eigenvalues {2, 4, 4, 4, 6}
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  const auto ev = es.eigenvalues();
  CHECK(ev[0] == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(ev[1] == doctest::Approx(4.0).epsilon(1e-13));
  CHECK(ev[3] == doctest::Approx(4.0).epsilon(1e-13));
  CHECK(ev[4] == doctest::Approx(6.0).epsilon(1e-13));
}

TEST_CASE("stiffness matches the dense oracle for random lognormal samples") {
  const KLBasis basis = KLBasis::default_basis();
  TriMesh mesh = refine_uniform(build_initial_mesh());
  for (int level = 1; level <= 2; ++level) {
    for (std::uint64_t id = 0; id < 3; ++id) {
      const auto sample = draw_sample(basis, 99, id);
      const auto K = assemble_stiffness(mesh, sample);
      const Eigen::MatrixXd oracle = interior_dense(mesh, dense_stiffness_oracle(mesh, sample));
      const Eigen::MatrixXd got = Eigen::MatrixXd(K.mat);
      CHECK((got - oracle).cwiseAbs().maxCoeff() < 1e-13 * oracle.cwiseAbs().maxCoeff());
    }
    mesh = refine_uniform(mesh);
  }
}

TEST_CASE("full pre-elimination stiffness has zero row sums") {
  const KLBasis basis = KLBasis::default_basis();
  TriMesh mesh = refine_uniform(build_initial_mesh());
  mesh = refine_uniform(mesh);
  const auto sample = draw_sample(basis, 7, 3);
  const Eigen::SparseMatrix<double> K = assemble_stiffness_full(mesh, sample);
  const Eigen::VectorXd row_sums = K * Eigen::VectorXd::Ones(mesh.n_vertices());
  CHECK(row_sums.cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("stiffness is linear in the coefficient") {
  // append a constant mode with amplitude log(c): multiplies a pointwise by c
  const double c = 3.5;
  KLBasis basis = KLBasis::default_basis();
  KLBasis scaled = basis;
  scaled.modes.push_back({std::log(c), true, 0.0, true, 0.0});

  const TriMesh mesh = refine_uniform(refine_uniform(build_initial_mesh()));
  auto s1 = draw_sample(basis, 1, 4);
  CoefficientSample s2;
  s2.basis = &scaled;
  s2.y = s1.y;
  s2.y.push_back(1.0);

  const auto K1 = assemble_stiffness(mesh, s1);
  const auto K2 = assemble_stiffness(mesh, s2);
  const Eigen::MatrixXd d1 = Eigen::MatrixXd(K1.mat) * c;
  const Eigen::MatrixXd d2 = Eigen::MatrixXd(K2.mat);
  CHECK((d2 - d1).cwiseAbs().maxCoeff() < 1e-13 * d1.cwiseAbs().maxCoeff());
}

TEST_CASE("level-1 mass matrix matches the exact values and is positive definite") {
  const TriMesh mesh = refine_uniform(build_initial_mesh());
  const auto M = assemble_mass(mesh);
  const Eigen::MatrixXd dense = Eigen::MatrixXd(M.mat);
  for (int i = 0; i < 5; ++i) {
    const Point& pi = mesh.vertices[mesh.interior_vertices[i]];
    const bool i_center = (pi.x == 0.0 && pi.y == 0.0);
    for (int j = 0; j < 5; ++j) {
      const Point& pj = mesh.vertices[mesh.interior_vertices[j]];
      const bool j_center = (pj.x == 0.0 && pj.y == 0.0);
      double expected;
      if (i == j) {
        expected = i_center ? 1.0 / 24.0 : 1.0 / 16.0;
      } else if (i_center || j_center) {
        expected = 1.0 / 96.0;
      } else {
        // spokes at (+-1/4, +-1/4): opposite pairs don't share a triangle
        const bool opposite = (pi.x == -pj.x) && (pi.y == -pj.y);
        expected = opposite ? 0.0 : 1.0 / 96.0;
      }
      CHECK(dense(i, j) == doctest::Approx(expected).epsilon(1e-14));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("mass entries over all vertices sum to the domain area") {
  TriMesh mesh = build_initial_mesh();
  for (int l = 0; l < 3; ++l) {
    const Eigen::SparseMatrix<double> M = assemble_mass_full(mesh);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(mesh.n_vertices());
    CHECK(ones.dot(M * ones) == doctest::Approx(1.0).epsilon(1e-14));
    mesh = refine_uniform(mesh);
  }
}

TEST_CASE("load vector") {
  const TriMesh mesh = refine_uniform(refine_uniform(build_initial_mesh()));

  SUBCASE("f == 0 gives the zero vector") {
    const Eigen::VectorXd load = assemble_load(mesh, [](Point) { return 0.0; });
    CHECK(load.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("f == 1 equals the full mass matrix applied to all-ones") {
    const Eigen::VectorXd load = assemble_load(mesh, [](Point) { return 1.0; });
    const Eigen::SparseMatrix<double> Mfull = assemble_mass_full(mesh);
    const Eigen::VectorXd full = Mfull * Eigen::VectorXd::Ones(mesh.n_vertices());
    for (int i = 0; i < mesh.n_interior(); ++i)
      CHECK(load[i] == doctest::Approx(full[mesh.interior_vertices[i]]).epsilon(1e-12));
  }

  SUBCASE("degree-5 rule agrees with the midpoint rule where both are exact") {
    const ScalarField g = [](Point p) { return 2.0 - 3.0 * p.y + p.x; };
    const Eigen::VectorXd m3 = assemble_load(mesh, g);
    const Eigen::VectorXd q7 = assemble_load_degree5(mesh, g);
    CHECK((m3 - q7).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("load self-convergence is at least O(h^2)") {
  const ScalarField z = [](Point p) {
    return std::sin(2.0 * std::numbers::pi * p.x) * std::cos(std::numbers::pi * p.y);
  };
  const MeshHierarchy hy = MeshHierarchy::build(7);

  SUBCASE("L2 projection through the load converges at rate 2") {
    const SparseOperator ref_mass = assemble_mass(hy.mesh(7));
    auto project = [&](int level) {
      const SparseOperator M = assemble_mass(hy.mesh(level));
      return solve_dirichlet(M, assemble_load(hy.mesh(level), z)).values;
    };
    const Eigen::VectorXd ref = project(7);
    std::vector<double> log_h, log_err;
    for (int l = 3; l <= 5; ++l) {
      const double err = l2_norm(ref_mass, ref - prolong(hy, l, 7, project(l)));
      REQUIRE(err > 0.0);
      log_h.push_back(std::log(hy.mesh(l).h));
      log_err.push_back(std::log(err));
    }
    const LineFit fitp = fit_line(log_h, log_err);
    CHECK(fitp.slope == doctest::Approx(2.0).epsilon(0.1));
  }

  SUBCASE("quadrature error of a fixed functional decays no slower than h^2") {
    // fixed P1 test function from level 3; the symmetric mesh family cancels
    // the odd-order terms, so the observed rate can exceed 2
    Eigen::VectorXd v(hy.mesh(3).n_interior());
    for (int i = 0; i < v.size(); ++i) v[i] = 2.0 * rng::uniform_open(rng::hash3(21, 0, i)) - 1.0;
    auto functional = [&](int level) {
      const Eigen::VectorXd vl = prolong(hy, 3, level, v);
      return assemble_load(hy.mesh(level), z).dot(vl);
    };
    const double ref = functional(7);
    std::vector<double> log_h, log_err;
    for (int l = 3; l <= 5; ++l) {
      const double err = std::abs(functional(l) - ref);
      REQUIRE(err > 0.0);
      log_h.push_back(std::log(hy.mesh(l).h));
      log_err.push_back(std::log(err));
    }
    CHECK(fit_line(log_h, log_err).slope >= 1.8);
  }
}

TEST_CASE("solve_dirichlet") {
  const KLBasis basis = KLBasis::default_basis();
  const TriMesh mesh = refine_uniform(build_initial_mesh());
  const auto K = assemble_stiffness(mesh, unit_sample(basis));

  SUBCASE("zero rhs gives zero solution") {
    const NodalFunction u = solve_dirichlet(K, Eigen::VectorXd::Zero(5));
    CHECK(u.values.cwiseAbs().maxCoeff() == 0.0);
    CHECK(u.level == 1);
  }

  SUBCASE("matches a dense solve on the 5-dof mesh") {
    const Eigen::VectorXd rhs = assemble_load(mesh, [](Point p) { return 1.0 + p.x; });
    const NodalFunction u = solve_dirichlet(K, rhs);
    const Eigen::VectorXd dense = Eigen::MatrixXd(K.mat).lu().solve(rhs);
    CHECK((u.values - dense).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((K.mat * u.values - rhs).norm() <= 1e-12 * rhs.norm());
  }

  SUBCASE("size mismatch is rejected") {
    CHECK_THROWS(solve_dirichlet(K, Eigen::VectorXd::Zero(4)));
  }
}

TEST_CASE("Poisson self-convergence at rate 2") {
  const KLBasis basis = KLBasis::default_basis();
  const MeshHierarchy hy = MeshHierarchy::build(7);
  const auto f_one = [](Point) { return 1.0; };
  const auto sample = unit_sample(basis);

  auto solve_level = [&](int l) {
    return solve_dirichlet(assemble_stiffness(hy.mesh(l), sample),
                           assemble_load(hy.mesh(l), f_one));
  };
  const NodalFunction ref = solve_level(7);
  const SparseOperator ref_mass = assemble_mass(hy.mesh(7));

  std::vector<double> log_h, log_err;
  for (int l = 2; l <= 5; ++l) {
    const NodalFunction u = solve_level(l);
    const double err = l2_norm(ref_mass, ref.values - prolong(hy, l, 7, u.values));
    log_h.push_back(std::log(hy.mesh(l).h));
    log_err.push_back(std::log(err));
  }
  const LineFit fitp = fit_line(log_h, log_err);
  CHECK(std::abs(fitp.slope - 2.0) <= 0.1);
}

TEST_CASE("l2 norm and inner product") {
  const TriMesh mesh = refine_uniform(refine_uniform(build_initial_mesh()));
  const auto M = assemble_mass(mesh);

  SUBCASE("zero vector has zero norm") {
    CHECK(l2_norm(M, Eigen::VectorXd::Zero(M.dimension)) == 0.0);
  }

  SUBCASE("interior indicator norm approaches |D| = 1 from below") {
    TriMesh m = build_initial_mesh();
    double prev = 0.0;
    for (int l = 1; l <= 4; ++l) {
      m = refine_uniform(m);
      const double nrm = l2_norm(assemble_mass(m), Eigen::VectorXd::Ones(m.n_interior()));
      CHECK(nrm <= 1.0);
      CHECK(nrm > prev);
      prev = nrm;
    }
    CHECK(prev > 0.85);
  }

  SUBCASE("norm squared equals self inner product") {
    Eigen::VectorXd v(M.dimension);
    for (int i = 0; i < v.size(); ++i) v[i] = rng::uniform_open(rng::hash3(5, 5, i)) - 0.5;
    const double n = l2_norm(M, v);
    CHECK(n * n == doctest::Approx(l2_inner(M, v, v)).epsilon(1e-14));
  }

  SUBCASE("level mismatch is rejected") {
    NodalFunction a{1, Eigen::VectorXd::Zero(5)};
    NodalFunction b{2, Eigen::VectorXd::Zero(25)};
    CHECK_THROWS(l2_inner(mesh, a, b));
  }
}

TEST_CASE("larger coefficient raises the Rayleigh quotient") {
  KLBasis basis = KLBasis::default_basis();
  const TriMesh mesh = refine_uniform(refine_uniform(build_initial_mesh()));
  CoefficientSample weak, strong;
  weak.basis = strong.basis = &basis;
  weak.y = {1.0, 0.0, 0.0, 0.0};    // a = exp(0.84 cos cos) >= 1 on D
  strong.y = {2.0, 0.0, 0.0, 0.0};  // pointwise larger coefficient
  const auto K1 = assemble_stiffness(mesh, weak);
  const auto K2 = assemble_stiffness(mesh, strong);
  for (int k = 0; k < 10; ++k) {
    Eigen::VectorXd x(K1.dimension);
    for (int i = 0; i < x.size(); ++i) x[i] = rng::uniform_open(rng::hash3(6, k, i)) - 0.5;
    CHECK(x.dot(K2.mat * x) >= x.dot(K1.mat * x));
  }
}

TEST_CASE("assembly is deterministic") {
  const KLBasis basis = KLBasis::default_basis();
  const TriMesh mesh = refine_uniform(refine_uniform(build_initial_mesh()));
  const auto sample = draw_sample(basis, 123, 456);
  const auto K1 = assemble_stiffness(mesh, sample);
  const auto K2 = assemble_stiffness(mesh, sample);
  REQUIRE(K1.mat.nonZeros() == K2.mat.nonZeros());
  for (int k = 0; k < K1.mat.nonZeros(); ++k)
    CHECK(K1.mat.valuePtr()[k] == K2.mat.valuePtr()[k]);
}

TEST_CASE("energy product of the prolonged coarse solve against its fine residual (pinned)") {
  const KLBasis basis = KLBasis::default_basis();
  const MeshHierarchy hy = MeshHierarchy::build(2);
  const auto sample = draw_sample(basis, 2024, 1);
  const auto f_one = [](Point) { return 1.0; };

  const NodalFunction yc = solve_dirichlet(assemble_stiffness(hy.mesh(1), sample),
                                           assemble_load(hy.mesh(1), f_one));
  const Eigen::VectorXd yp = prolong(hy, 1, 2, yc.values);
  const auto Kf = assemble_stiffness(hy.mesh(2), sample);
  const Eigen::VectorXd r = assemble_load(hy.mesh(2), f_one) - Kf.mat * yp;
  const double value = yp.dot(r);
  CHECK(value == doctest::Approx(-0.0001911698918330327).epsilon(1e-10));
}
