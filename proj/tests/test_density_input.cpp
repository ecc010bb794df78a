#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "otshape/density_input.hpp"
#include "otshape/ot_core.hpp"
#include "oracles.hpp"

using namespace otshape;

namespace {

Eigen::MatrixXd gaussian_column(Eigen::Index n, unsigned seed, double mean = 0.0,
                                double sd = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(mean, sd);
  Eigen::MatrixXd z(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) z(i, 0) = g(rng);
  return z;
}

}  // namespace

TEST_CASE("standardize divides by min(IQR/1.349, sd)") {
  SECTION("unit-scale input keeps factors near one") {
    const SampleSet s = standardize(make_samples(gaussian_column(4000, 1)));
    CHECK(s.scale_factors[0] == Catch::Approx(1.0).margin(0.08));
  }

  SECTION("scaling a column scales its factor") {
    const Eigen::MatrixXd z = gaussian_column(500, 2);
    const SampleSet base = standardize(make_samples(z));
    const SampleSet scaled = standardize(make_samples(10.0 * z));
    CHECK(scaled.scale_factors[0] == Catch::Approx(10.0 * base.scale_factors[0]).epsilon(1e-12));
  }

  SECTION("factor agrees with an order-statistics oracle") {
    const Eigen::MatrixXd z = gaussian_column(1000, 3);
    const SampleSet s = standardize(make_samples(z));
    std::vector<double> data(z.data(), z.data() + z.size());
    const double iqr =
        oracles::quantile_type7(data, 0.75) - oracles::quantile_type7(data, 0.25);
    const double mean = z.col(0).mean();
    const double sd = std::sqrt((z.col(0).array() - mean).square().sum() / (z.rows() - 1.0));
    CHECK(s.scale_factors[0] == Catch::Approx(std::min(iqr / 1.349, sd)).epsilon(1e-12));
  }

  SECTION("zero dispersion is an input error") {
    Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(10, 1, 3.0);
    CHECK_THROWS_AS(standardize(make_samples(flat)), InputError);
  }
}

TEST_CASE("bandwidth_rule pins the gamma/sigma^2 = 8 split") {
  SECTION("N = 1e5, d = 1 reproduces the published magnitudes") {
    const SmoothingPlan plan = bandwidth_rule(100000, 1);
    CHECK(plan.sigma == Catch::Approx(0.1 / 3.0).epsilon(1e-12));
    CHECK(plan.gamma / (plan.sigma * plan.sigma) == Catch::Approx(8.0).epsilon(1e-9));
    // The rounded closed form gamma ~ N^(-2/5) * 4/5 lands within ~11%.
    CHECK(plan.gamma == Catch::Approx(0.008).epsilon(0.12));
  }

  SECTION("degenerate N = 1 still evaluates") {
    CHECK(bandwidth_rule(1, 1).sigma == Catch::Approx(1.0 / 3.0));
  }

  SECTION("ratio rule tracks the paper rounded gamma within about 11 percent") {
    for (double n : {1e2, 1e3, 1e4, 1e5, 1e6}) {
      const SmoothingPlan plan = bandwidth_rule(static_cast<Eigen::Index>(n), 1);
      const double rounded = std::pow(n, -2.0 / 5.0) * 4.0 / 5.0;
      CHECK(std::abs(plan.gamma - rounded) / rounded <= 0.115);
    }
  }

  SECTION("total obeys the definition") {
    const SmoothingPlan plan = bandwidth_rule(2000, 1);
    CHECK(plan.total() * plan.total() ==
          Catch::Approx(plan.sigma * plan.sigma + plan.gamma / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("mesh_rule") {
  SECTION("tiny instances clamp up to 16") {
    CHECK(mesh_rule(1, 1, 2.0) == 16);
  }
  SECTION("N = 1e5 with the published gamma gives 159") {
    CHECK(mesh_rule(100000, 1, 0.008) == 159);
  }
  SECTION("doubling d doubles the pre-clamp count") {
    CHECK(mesh_rule(100000, 2, 0.5) == 2 * mesh_rule(100000, 1, 0.5));
  }
  SECTION("hard cap at the dense-kernel limit") {
    CHECK(mesh_rule(100000000, 1, 1e-6) == 2000);
    CHECK(mesh_rule(100000000, 2, 1e-6) == 44);
  }
}

TEST_CASE("build_mesh enlarges the span by three total bandwidths") {
  SmoothingPlan plan;
  plan.sigma = 0.1 / std::sqrt(5.0);
  plan.gamma = 8.0 * plan.sigma * plan.sigma;
  plan.m = 101;
  REQUIRE(plan.total() == Catch::Approx(0.1).epsilon(1e-12));

  Eigen::MatrixXd z(2, 1);
  z << 0.0, 1.0;
  const Mesh mesh = build_mesh(make_samples(z), plan);
  CHECK(mesh.points(0, 0) == Catch::Approx(-0.3).margin(1e-12));
  CHECK(mesh.points(100, 0) == Catch::Approx(1.3).margin(1e-12));
  CHECK(mesh.spacing[0] == Catch::Approx(1.6 / 100.0).epsilon(1e-12));

  SECTION("identical samples span six total bandwidths") {
    Eigen::MatrixXd same(3, 1);
    same << 2.0, 2.0, 2.0;
    const Mesh degenerate = build_mesh(make_samples(same), plan);
    CHECK(degenerate.points(0, 0) == Catch::Approx(1.7).margin(1e-12));
    CHECK(degenerate.points(100, 0) == Catch::Approx(2.3).margin(1e-12));
  }
}

TEST_CASE("kde_on_mesh") {
  SECTION("single repeated sample peaks at the center symmetrically") {
    Eigen::MatrixXd z(2, 1);
    z << 0.0, 0.0;  // N >= 2 with both points at the mesh center
    const Mesh mesh = make_mesh_1d(-1.0, 1.0, 21);
    const DiscreteDensity mu = kde_on_mesh(make_samples(z), 0.25, mesh);
    Eigen::Index argmax = 0;
    mu.values.maxCoeff(&argmax);
    CHECK(argmax == 10);
    for (Eigen::Index i = 0; i < 21; ++i) {
      CHECK(mu.values[i] == Catch::Approx(mu.values[20 - i]).margin(1e-12));
    }
  }

  SECTION("normalization to sum m") {
    const Mesh mesh = make_mesh_1d(-3.0, 3.0, 33);
    const DiscreteDensity mu = kde_on_mesh(make_samples(gaussian_column(50, 9)), 0.3, mesh);
    CHECK(mu.values.sum() == Catch::Approx(33.0).epsilon(1e-12));
    CHECK(mu.values.minCoeff() > 0.0);
  }

  SECTION("matches a brute-force double loop") {
    const Eigen::MatrixXd z = gaussian_column(100, 4);
    const Mesh mesh = make_mesh_1d(-4.0, 4.0, 40);
    const double sigma = 0.4;
    const DiscreteDensity mu = kde_on_mesh(make_samples(z), sigma, mesh);
    Eigen::VectorXd raw(40);
    for (Eigen::Index i = 0; i < 40; ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < 100; ++j) {
        const double d = mesh.points(i, 0) - z(j, 0);
        acc += std::exp(-d * d / (2.0 * sigma * sigma));
      }
      raw[i] = std::max(acc, 1e-12);
    }
    raw *= 40.0 / raw.sum();
    CHECK((mu.values - raw).cwiseAbs().maxCoeff() < 1e-12);
  }

  SECTION("sigma must be positive") {
    const Mesh mesh = make_mesh_1d(0.0, 1.0, 16);
    CHECK_THROWS_AS(kde_on_mesh(make_samples(gaussian_column(10, 5)), 0.0, mesh),
                    ParameterError);
  }

  SECTION("product kernel for d = 2") {
    std::mt19937 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd z(60, 2);
    for (Eigen::Index i = 0; i < 60; ++i) {
      z(i, 0) = g(rng);
      z(i, 1) = g(rng);
    }
    const Mesh mesh = make_mesh_2d(-3.0, 3.0, -3.0, 3.0, 10);
    const DiscreteDensity mu = kde_on_mesh(make_samples(z), 0.5, mesh);
    CHECK(mu.values.sum() == Catch::Approx(100.0).epsilon(1e-12));
  }
}

TEST_CASE("kde location equivariance under affine sample maps") {
  const Eigen::MatrixXd z = gaussian_column(800, 21, 1.0, 2.0);
  const auto destd_argmax = [](const Eigen::MatrixXd& raw) {
    const SampleSet s = standardize(make_samples(raw));
    SmoothingPlan plan = bandwidth_rule(raw.rows(), 1);
    plan.m = mesh_rule(raw.rows(), 1, plan.gamma);
    const Mesh mesh = build_mesh(s, plan);
    const DiscreteDensity mu = kde_on_mesh(s, plan.sigma, mesh);
    Eigen::Index arg = 0;
    mu.values.maxCoeff(&arg);
    return std::pair<double, double>(mesh.points(arg, 0) * s.scale_factors[0],
                                     mesh.spacing[0] * s.scale_factors[0]);
  };
  const auto [loc, cell] = destd_argmax(z);
  const auto [loc_scaled, cell_scaled] = destd_argmax(5.0 * z.array() - 3.0);
  CHECK(std::abs(loc_scaled - (5.0 * loc - 3.0)) <= 5.0 * cell + cell_scaled);
}

TEST_CASE("f_unc integrated squared error improves with sample size") {
  // Average ISE against the true standard normal over 20 replications.
  const auto avg_ise = [](Eigen::Index n) {
    double total_err = 0.0;
    for (unsigned rep = 0; rep < 20; ++rep) {
      const Eigen::MatrixXd z = gaussian_column(n, 1000 + rep * 7 + static_cast<unsigned>(n));
      const SampleSet s = standardize(make_samples(z));
      SmoothingPlan plan = bandwidth_rule(n, 1);
      plan.m = mesh_rule(n, 1, plan.gamma);
      const Mesh mesh = build_mesh(s, plan);
      const DiscreteDensity mu = kde_on_mesh(s, plan.sigma, mesh);
      const KernelMatrix kernel = build_cost_kernel(mesh, plan.gamma);
      const DiscreteDensity f_unc = unconstrained_minimizer(kernel, mu);
      const Eigen::VectorXd dens = to_unit_integral(f_unc, mesh);
      const double scale = s.scale_factors[0];
      double ise = 0.0;
      for (Eigen::Index i = 0; i < mesh.size(); ++i) {
        const double x = mesh.points(i, 0) * scale;
        const double truth = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        const double est = dens[i] / scale;
        ise += (est - truth) * (est - truth) * mesh.spacing[0] * scale;
      }
      total_err += ise;
    }
    return total_err / 20.0;
  };
  const double e500 = avg_ise(500);
  const double e2000 = avg_ise(2000);
  const double e8000 = avg_ise(8000);
  CHECK(e2000 <= e500);
  CHECK(e8000 <= e2000);
}

TEST_CASE("csv ingestion") {
  const std::string path = "test_density_input_tmp.csv";

  SECTION("optional header and one column") {
    std::ofstream out(path);
    out << "value\n1.5\n2.5\n-0.5\n";
    out.close();
    const SampleSet s = read_sample_csv(path);
    CHECK(s.count() == 3);
    CHECK(s.dim() == 1);
    CHECK(s.rows(2, 0) == -0.5);
  }

  SECTION("two numeric columns without header") {
    std::ofstream out(path);
    out << "1.0,2.0\n3.0,4.0\n";
    out.close();
    const SampleSet s = read_sample_csv(path);
    CHECK(s.count() == 2);
    CHECK(s.dim() == 2);
    CHECK(s.rows(1, 1) == 4.0);
  }

  SECTION("non-finite rows are rejected with their numbers") {
    std::ofstream out(path);
    out << "x\n1.0\nnan\n2.0\ninf\n";
    out.close();
    try {
      read_sample_csv(path);
      FAIL("expected InputError");
    } catch (const InputError& err) {
      const std::string msg = err.what();
      CHECK(msg.find("3") != std::string::npos);
      CHECK(msg.find("5") != std::string::npos);
    }
  }

  std::remove(path.c_str());
}
