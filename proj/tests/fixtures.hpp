// Shared seeded fixtures for solver/inference tests.
#ifndef OTSHAPE_TESTS_FIXTURES_HPP_
#define OTSHAPE_TESTS_FIXTURES_HPP_

#include <random>

#include <Eigen/Core>

#include "otshape/density_input.hpp"
#include "otshape/ot_core.hpp"

namespace fixtures {

inline Eigen::MatrixXd draw_gaussian(Eigen::Index n, unsigned seed, double mean = 0.0,
                                     double sd = 1.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(mean, sd);
  Eigen::MatrixXd z(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) z(i, 0) = g(rng);
  return z;
}

// Equal-weight two-component mixture, centers +-sep/2, unit sd.
inline Eigen::MatrixXd draw_mixture2(Eigen::Index n, unsigned seed, double sep = 6.0) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::bernoulli_distribution side(0.5);
  Eigen::MatrixXd z(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    z(i, 0) = g(rng) + (side(rng) ? sep / 2.0 : -sep / 2.0);
  }
  return z;
}

struct Pipeline1D {
  otshape::SampleSet samples;
  otshape::SmoothingPlan plan;
  otshape::Mesh mesh;
  otshape::DiscreteDensity mu;
  otshape::KernelMatrix kernel;
};

// Standardize, apply the default rules, and build mesh/KDE/kernel.
inline Pipeline1D make_pipeline(const Eigen::MatrixXd& raw) {
  using namespace otshape;
  Pipeline1D p{standardize(make_samples(raw)), {}, {}, {}, {}};
  p.plan = bandwidth_rule(raw.rows(), static_cast<int>(raw.cols()));
  p.plan.m = mesh_rule(raw.rows(), static_cast<int>(raw.cols()), p.plan.gamma);
  p.mesh = build_mesh(p.samples, p.plan);
  p.mu = kde_on_mesh(p.samples, p.plan.sigma, p.mesh);
  p.kernel = build_cost_kernel(p.mesh, p.plan.gamma);
  return p;
}

// Exactly discretized standard normal on a fixed mesh (no sampling noise).
inline Pipeline1D make_exact_gaussian(Eigen::Index m = 41, double gamma = 0.1) {
  using namespace otshape;
  Pipeline1D p;
  p.mesh = make_mesh_1d(-4.0, 4.0, m);
  Eigen::VectorXd raw = (-0.5 * p.mesh.points.col(0).array().square()).exp().matrix();
  p.mu = floor_and_normalize(raw);
  p.kernel = build_cost_kernel(p.mesh, gamma);
  p.plan.sigma = std::sqrt(gamma / 8.0);
  p.plan.gamma = gamma;
  p.plan.m = m;
  return p;
}

}  // namespace fixtures

#endif  // OTSHAPE_TESTS_FIXTURES_HPP_
