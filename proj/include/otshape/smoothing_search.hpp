#ifndef OTSHAPE_SMOOTHING_SEARCH_HPP_
#define OTSHAPE_SMOOTHING_SEARCH_HPP_

#include <cmath>

#include "otshape/density_input.hpp"
#include "otshape/ot_core.hpp"
#include "otshape/solver.hpp"

namespace otshape {

struct SmoothingSearchResult {
  double total = 0.0;          // lower bound on sqrt(sigma^2 + gamma/2)
  bool fell_back = false;      // no candidate converged, rule-of-thumb returned
  int probes = 0;
};

// Derive the (sigma, gamma) split of a given total smoothing under the
// gamma/sigma^2 = 8 rule: total^2 = 5 sigma^2.
inline SmoothingPlan plan_from_total(double total, Eigen::Index n, int d) {
  SmoothingPlan plan;
  plan.sigma = total / std::sqrt(5.0);
  plan.gamma = 8.0 * plan.sigma * plan.sigma;
  plan.m = mesh_rule(n, d, plan.gamma);
  return plan;
}

namespace detail {

// One stability probe: build the plan at this total, approximate the
// constrained density by MABP, and see whether a fixed IPFP budget reaches
// the tolerance between that approximation and the KDE.
inline bool smoothing_probe(const SampleSet& samples, const ShapeConstraint& constraint,
                            double total, int budget, double tol) {
  const SmoothingPlan plan = plan_from_total(total, samples.count(), samples.dim());
  const Mesh mesh = build_mesh(samples, plan);
  const DiscreteDensity mu = kde_on_mesh(samples, plan.sigma, mesh);
  const KernelMatrix kernel = build_cost_kernel(mesh, plan.gamma);
  const ShapeConstraint probe_constraint =
      constraint.kind() == ShapeConstraint::Kind::Generalized
          ? ShapeConstraint::rho_concave(-0.4)  // rho > -1/2 implies Myerson regularity
          : constraint;
  const MabpResult warm = mabp_warmstart(mu, kernel, probe_constraint, mesh, 10);
  IpfpOptions opts;
  opts.tol = tol;
  opts.max_iter = budget;
  try {
    return ipfp(kernel, warm.f0, mu, opts, warm.w).converged;
  } catch (const NumericalError&) {
    return false;
  } catch (const ParameterError&) {
    return false;  // plan needs a mesh beyond the dense-kernel limit
  }
}

}  // namespace detail

// Smallest total smoothing sqrt(sigma^2 + gamma/2) whose plan still lets a
// fixed IPFP budget converge, found by bisection below the rule-of-thumb
// value. The caller is expected to inflate gamma by one fourth before the
// main solve.
// The default tolerance is half a unit of cell mass: the probe starts from
// the MABP fit, whose marginals differ from the KDE by O(1) wherever the
// constraint binds, so "converged" means the budgeted run worked most of
// that distance off.
inline SmoothingSearchResult min_smoothing_search(const SampleSet& samples,
                                                  const ShapeConstraint& constraint,
                                                  int budget = 100, double tol = 0.5) {
  samples.validate();
  const SmoothingPlan rule = bandwidth_rule(samples.count(), samples.dim());
  SmoothingSearchResult res;

  double hi = rule.total();
  if (!detail::smoothing_probe(samples, constraint, hi, budget, tol)) {
    res.total = hi;
    res.fell_back = true;
    res.probes = 1;
    return res;
  }
  ++res.probes;

  double lo = hi / 16.0;
  if (detail::smoothing_probe(samples, constraint, lo, budget, tol)) {
    ++res.probes;
    res.total = lo;  // already stable at the bracket floor
    return res;
  }
  ++res.probes;

  for (int it = 0; it < 20 && hi - lo > 1e-3 * rule.total(); ++it) {
    const double mid = 0.5 * (lo + hi);
    ++res.probes;
    if (detail::smoothing_probe(samples, constraint, mid, budget, tol)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  res.total = hi;
  return res;
}

}  // namespace otshape

#endif  // OTSHAPE_SMOOTHING_SEARCH_HPP_
