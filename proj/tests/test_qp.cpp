#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "otshape/ot_core.hpp"
#include "otshape/qp.hpp"
#include "oracles.hpp"

using namespace otshape;

namespace {

Eigen::MatrixXd random_psd(Eigen::Index n, unsigned seed, double spread = 3.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = g(rng);
  }
  Eigen::MatrixXd s = a * a.transpose() / static_cast<double>(n);
  s.diagonal().array() += 1.0 / spread;
  return s;
}

Eigen::VectorXd random_vec(Eigen::Index n, unsigned seed, double scale = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

// Strictly concave g on a mesh, interior to the rho > 0 cone.
Eigen::VectorXd concave_g(const Mesh& mesh) {
  return (-mesh.points.col(0).array().square()).matrix();
}

}  // namespace

TEST_CASE("pseudoinverse_psd spectral behaviour") {
  SECTION("projector onto the complement of the dropped direction") {
    const Eigen::Index n = 3;
    // Rotate diag(0, 1, 2) so the null direction is 1/sqrt(n).
    Eigen::MatrixXd basis(n, n);
    basis.col(0) = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(3.0));
    basis.col(1) << 1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0), 0.0;
    basis.col(2) << 1.0 / std::sqrt(6.0), 1.0 / std::sqrt(6.0), -2.0 / std::sqrt(6.0);
    Eigen::VectorXd lam(n);
    lam << 0.0, 1.0, 2.0;
    const Eigen::MatrixXd S = basis * lam.asDiagonal() * basis.transpose();
    const Eigen::MatrixXd Sp = pseudoinverse_psd(S);
    const Eigen::MatrixXd proj =
        Eigen::MatrixXd::Identity(n, n) - basis.col(0) * basis.col(0).transpose();
    CHECK((Sp * S - proj).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((Sp - Sp.transpose()).cwiseAbs().maxCoeff() < 1e-13);
  }

  SECTION("coupling curvature matrix annihilates the ones vector") {
    const Mesh mesh = make_mesh_1d(-1.0, 1.0, 9);
    const KernelMatrix k = build_cost_kernel(mesh, 0.4);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0.3, 1.7);
    Eigen::VectorXd a(9), b(9);
    for (Eigen::Index i = 0; i < 9; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
    }
    const DiscreteDensity mu0 = floor_and_normalize(a);
    const DiscreteDensity mu1 = floor_and_normalize(b);
    const ScalingPair pair = ipfp(k, mu0, mu1, {1e-13, 20000});
    REQUIRE(pair.converged);
    const Eigen::MatrixXd psi = assemble_coupling(pair, k);
    const Eigen::MatrixXd S =
        Eigen::MatrixXd(mu0.values.asDiagonal()) -
        psi * mu1.values.cwiseInverse().asDiagonal() * psi.transpose();
    CHECK((S * Eigen::VectorXd::Ones(9)).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::VectorXd dropped;
    (void)pseudoinverse_psd(S, 1e-10, &dropped);
    const double cosine = std::abs(dropped.dot(Eigen::VectorXd::Constant(9, 1.0 / 3.0)));
    CHECK(cosine >= 1.0 - 1e-8);
  }

  SECTION("matches an SVD pseudoinverse on a seeded rank-deficient matrix") {
    const Eigen::Index n = 12;
    Eigen::MatrixXd S = random_psd(n, 41);
    // Push the ones vector into the nullspace.
    const Eigen::VectorXd ones = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(12.0));
    const Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(n, n) - ones * ones.transpose();
    S = proj * S * proj;
    const Eigen::MatrixXd mine = pseudoinverse_psd(S);
    const Eigen::MatrixXd ref = oracles::svd_pinv(S);
    CHECK((mine - ref).cwiseAbs().maxCoeff() < 1e-8);
  }

  SECTION("rank deficiency beyond one is an error") {
    Eigen::VectorXd lam(4);
    lam << 0.0, 1e-14, 1.0, 2.0;
    const Eigen::MatrixXd S = lam.asDiagonal();
    CHECK_THROWS_AS(pseudoinverse_psd(S), NumericalError);
  }
}

TEST_CASE("qp_subproblem basics") {
  const Mesh mesh = make_mesh_1d(-2.0, 2.0, 10);
  const LinearConstraintSet rows =
      concavity_rows(mesh, 1.0, LinearConstraintSet::Form::SecondDifference);
  const Eigen::VectorXd g = concave_g(mesh);

  SECTION("zero gradient gives the zero step") {
    const Eigen::MatrixXd H = random_psd(10, 7);
    const QpResult res = qp_subproblem(H, Eigen::VectorXd::Zero(10), g, rows, 1.0);
    CHECK(res.step.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(res.model_decrease == Catch::Approx(0.0).margin(1e-14));
  }

  SECTION("identity Hessian with interior Newton step returns -r") {
    const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(10, 10);
    // Small gradient keeps g - r strictly inside the cone.
    const Eigen::VectorXd r = 0.01 * random_vec(10, 8);
    REQUIRE(rows.max_violation(g - r) < 0.0);
    const QpResult res = qp_subproblem(H, r, g, rows, 100.0);
    CHECK((res.step + r).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(res.kkt_residual < 1e-7);
  }

  SECTION("ball-only problem matches the Cauchy direction") {
    LinearConstraintSet none;
    none.n_var = 6;
    none.rows.resize(0, 6);
    none.rhs.resize(0);
    const Eigen::MatrixXd H = Eigen::MatrixXd::Identity(6, 6);
    Eigen::VectorXd r = random_vec(6, 9);
    const double radius = 0.25 * r.norm();  // forces the boundary
    const QpResult res = qp_subproblem(H, r, Eigen::VectorXd::Zero(6), none, radius);
    CHECK(res.step.norm() == Catch::Approx(radius).epsilon(1e-9));
    const Eigen::VectorXd expect = -r / r.norm() * radius;
    CHECK((res.step - expect).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(res.ball_multiplier > 0.0);
  }
}

TEST_CASE("qp_subproblem matches a projected-gradient oracle") {
  const Eigen::Index m = 20;
  const Mesh mesh = make_mesh_1d(-2.0, 2.0, m);
  const LinearConstraintSet rows =
      concavity_rows(mesh, 1.0, LinearConstraintSet::Form::SecondDifference);
  const Eigen::VectorXd g = concave_g(mesh);
  const Eigen::MatrixXd L = Eigen::MatrixXd(rows.rows);
  const Eigen::VectorXd shifted_rhs = rows.rhs - L * g;

  for (unsigned seed : {101u, 102u, 103u}) {
    const Eigen::MatrixXd H = random_psd(m, seed);
    const Eigen::VectorXd r = random_vec(m, seed + 10, 2.0);
    for (double radius : {0.05, 0.5, 5.0}) {
      const QpResult res = qp_subproblem(H, r, g, rows, radius);
      REQUIRE_FALSE(res.stalled);
      CHECK(res.kkt_residual < 1e-7);
      CHECK(res.step.norm() <= radius * (1.0 + 1e-9));
      CHECK(rows.max_violation(g + res.step) <= 1e-9);
      const Eigen::VectorXd ref =
          oracles::projected_gradient_qp(H, r, L, shifted_rhs, radius);
      const double mine = 0.5 * res.step.dot(H * res.step) + r.dot(res.step);
      const double theirs = 0.5 * ref.dot(H * ref) + r.dot(ref);
      CHECK(mine <= theirs + 1e-6);
      CHECK(std::abs(mine - theirs) < 1e-6 * std::max(1.0, std::abs(theirs)));
    }
  }
}

TEST_CASE("qp_subproblem model decrease is nonnegative and honored") {
  const Eigen::Index m = 15;
  const Mesh mesh = make_mesh_1d(0.0, 3.0, m);
  const LinearConstraintSet rows =
      concavity_rows(mesh, -0.5, LinearConstraintSet::Form::SecondDifference);
  // rho < 0: sgn flips, g must be convex.
  const Eigen::VectorXd g = mesh.points.col(0).array().square().matrix();
  REQUIRE(rows.max_violation(g) <= 1e-12);
  const Eigen::MatrixXd H = random_psd(m, 77);
  const Eigen::VectorXd r = random_vec(m, 78);
  const QpResult res = qp_subproblem(H, r, g, rows, 1.0);
  CHECK(res.model_decrease >= 0.0);
  const double q = 0.5 * res.step.dot(H * res.step) + r.dot(res.step);
  CHECK(res.model_decrease == Catch::Approx(-q).margin(1e-10));
}
