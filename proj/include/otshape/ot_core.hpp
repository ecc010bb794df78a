#ifndef OTSHAPE_OT_CORE_HPP_
#define OTSHAPE_OT_CORE_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Core>

#include "otshape/errors.hpp"
#include "otshape/mesh.hpp"

namespace otshape {

// Gibbs kernel K_ij = exp(-||a_i - a_j||^2 / gamma) with the squared-cost
// matrix kept alongside. Dense storage; refuse meshes past kMaxDenseMesh.
struct KernelMatrix {
  Eigen::MatrixXd K;
  Eigen::MatrixXd M;  // M_ij = ||a_i - a_j||^2
  double gamma = 0.0;

  Eigen::Index size() const { return K.rows(); }
};

inline constexpr Eigen::Index kMaxDenseMesh = 2000;

inline KernelMatrix build_cost_kernel(const Mesh& mesh, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  mesh.validate();
  const Eigen::Index m = mesh.size();
  if (m > kMaxDenseMesh) {
    throw ParameterError("mesh size " + std::to_string(m) + " exceeds the dense-kernel limit of " +
                         std::to_string(kMaxDenseMesh));
  }
  KernelMatrix out;
  out.gamma = gamma;
  out.M.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.M(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double d2 = mesh.squared_distance(i, j);
      if (d2 <= 0.0) throw InputError("mesh contains duplicate points");
      out.M(i, j) = d2;
      out.M(j, i) = d2;
    }
  }
  // Scalar exp: Eigen's packet exp clamps near 1e-308 instead of
  // underflowing, which would leave phantom mass on forbidden cells.
  out.K = (-out.M / gamma).unaryExpr([](double t) { return std::exp(t); });
  return out;
}

// IPFP scalings. The potentials x = gamma*log(w), y = gamma*log(v) are the
// authoritative representation; w and v are materialized from them and may
// flush to 0/inf when a run needed log-domain stabilization.
struct ScalingPair {
  Eigen::VectorXd w, v;
  Eigen::VectorXd x, y;
  bool converged = false;
  bool log_domain = false;
  int iterations = 0;
  double residual = std::numeric_limits<double>::quiet_NaN();
};

// Dual potentials of the entropic problem, unique up to (x - c, y + c).
struct DualPotentials {
  Eigen::VectorXd x, y;
  double gauge = 0.0;  // constant already moved from x into y

  // Pin x[k] = 0; y absorbs the shift.
  void shift_gauge(Eigen::Index k) {
    const double c = x[k];
    x.array() -= c;
    y.array() += c;
    gauge += c;
  }
};

inline DualPotentials to_potentials(const ScalingPair& pair) {
  return DualPotentials{pair.x, pair.y, 0.0};
}

struct IpfpOptions {
  double tol = 1e-9;
  int max_iter = 1000;
  // Multiplicative updates switch to log-sum-exp once any scaling leaves
  // this range.
  double stab_lo = 1e-300;
  double stab_hi = 1e300;
};

namespace detail {

// y_j = gamma*log(mu_j) - gamma*LSE_i((x_i - M_ij)/gamma), column-wise.
inline Eigen::VectorXd lse_update(const Eigen::MatrixXd& M, double gamma,
                                  const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
  const Eigen::Index m = M.rows();
  Eigen::VectorXd out(m);
  Eigen::VectorXd e(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    e = (x - M.col(j)) / gamma;
    const double hi = e.maxCoeff();
    const double s = (e.array() - hi).exp().sum();
    out[j] = gamma * (std::log(mu[j]) - hi - std::log(s));
  }
  return out;
}

inline double marginal_residual(const Eigen::MatrixXd& K, const Eigen::VectorXd& w,
                                const Eigen::VectorXd& v, const Eigen::VectorXd& mu0,
                                const Eigen::VectorXd& mu1) {
  const double r0 = (w.cwiseProduct(K * v) - mu0).cwiseAbs().maxCoeff();
  const double r1 = (v.cwiseProduct(K * w) - mu1).cwiseAbs().maxCoeff();
  return std::max(r0, r1);
}

inline double marginal_residual_log(const Eigen::MatrixXd& M, double gamma,
                                    const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                    const Eigen::VectorXd& mu0, const Eigen::VectorXd& mu1) {
  const Eigen::Index m = M.rows();
  double worst = 0.0;
  Eigen::VectorXd row(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    row = ((x[i] + y.array() - M.row(i).transpose().array()) / gamma).exp();
    worst = std::max(worst, std::abs(row.sum() - mu0[i]));
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    row = ((y[j] + x.array() - M.col(j).array()) / gamma).exp();
    worst = std::max(worst, std::abs(row.sum() - mu1[j]));
  }
  return worst;
}

}  // namespace detail

// Alternating scaling v <- mu1 ./ (K w), w <- mu0 ./ (K v) until the max-norm
// marginal violation drops below tol. Non-convergence is reported in the
// result, not thrown.
inline ScalingPair ipfp(const KernelMatrix& kernel, const DiscreteDensity& mu0,
                        const DiscreteDensity& mu1, const IpfpOptions& opts = {},
                        const std::optional<Eigen::VectorXd>& w_start = std::nullopt) {
  const Eigen::Index m = kernel.size();
  if (mu0.size() != m || mu1.size() != m) throw InputError("ipfp: dimension mismatch");
  if ((mu0.values.array() <= 0.0).any() || (mu1.values.array() <= 0.0).any()) {
    throw InputError("ipfp: marginals must be strictly positive (apply the density floor)");
  }
  if (std::abs(mu0.values.sum() - mu1.values.sum()) > 1e-8 * mu0.values.sum()) {
    throw InputError("ipfp: marginals must carry equal mass");
  }
  const double gamma = kernel.gamma;
  const Eigen::MatrixXd& K = kernel.K;

  ScalingPair out;
  out.w = w_start.value_or(Eigen::VectorXd::Ones(m));
  out.v = Eigen::VectorXd::Ones(m);
  bool log_mode = false;
  Eigen::VectorXd x, y;

  for (int it = 0; it < opts.max_iter; ++it) {
    if (!log_mode) {
      out.v = mu1.values.array() / (K * out.w).array();
      out.w = mu0.values.array() / (K * out.v).array();
      const bool unstable = !out.w.allFinite() || !out.v.allFinite() ||
                            out.w.minCoeff() < opts.stab_lo || out.w.maxCoeff() > opts.stab_hi ||
                            out.v.minCoeff() < opts.stab_lo || out.v.maxCoeff() > opts.stab_hi;
      if (unstable) {
        // Carry the last finite iterate into the potential domain.
        x = gamma * out.w.cwiseMax(opts.stab_lo).array().log();
        y = gamma * out.v.cwiseMax(opts.stab_lo).array().log();
        if (!x.allFinite() || !y.allFinite()) {
          throw NumericalError(
              "ipfp: scalings overflowed; increase gamma or loosen the smoothing plan");
        }
        log_mode = true;
      } else {
        out.iterations = it + 1;
        out.residual = detail::marginal_residual(K, out.w, out.v, mu0.values, mu1.values);
        if (out.residual <= opts.tol) {
          out.converged = true;
          break;
        }
      }
    }
    if (log_mode) {
      y = detail::lse_update(kernel.M, gamma, x, mu1.values);
      x = detail::lse_update(kernel.M, gamma, y, mu0.values);  // M symmetric
      out.iterations = it + 1;
      out.residual = detail::marginal_residual_log(kernel.M, gamma, x, y, mu0.values, mu1.values);
      if (out.residual <= opts.tol) {
        out.converged = true;
        break;
      }
    }
  }

  if (log_mode) {
    out.log_domain = true;
    out.x = x;
    out.y = y;
    out.w = (x / gamma).array().exp();
    out.v = (y / gamma).array().exp();
  } else {
    out.x = gamma * out.w.array().log();
    out.y = gamma * out.v.array().log();
  }
  return out;
}

// psi = D_w K D_v, evaluated through the potentials so stabilized runs stay
// finite: psi_ij = exp((x_i + y_j - M_ij)/gamma).
inline Eigen::MatrixXd assemble_coupling(const ScalingPair& pair, const KernelMatrix& kernel) {
  const Eigen::Index m = kernel.size();
  if (pair.x.size() != m || pair.y.size() != m) {
    throw InputError("assemble_coupling: dimension mismatch");
  }
  Eigen::MatrixXd psi(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    psi.col(j) = ((pair.x.array() + pair.y[j] - kernel.M.col(j).array()) / kernel.gamma).exp();
  }
  return psi;
}

// Dual objective x'mu0 + y'mu1 - gamma * sum exp((x_i + y_j - M_ij)/gamma).
inline double dual_objective(const DualPotentials& pot, const DiscreteDensity& mu0,
                             const DiscreteDensity& mu1, const KernelMatrix& kernel) {
  const Eigen::Index m = kernel.size();
  if (pot.x.size() != m || pot.y.size() != m || mu0.size() != m || mu1.size() != m) {
    throw InputError("dual_objective: dimension mismatch");
  }
  if (!pot.x.allFinite() || !pot.y.allFinite()) {
    throw NumericalError("dual_objective: potentials not finite; re-gauge before evaluating");
  }
  double penalty = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::ArrayXd e = (pot.x.array() + pot.y[j] - kernel.M.col(j).array()) / kernel.gamma;
    if (e.maxCoeff() > 700.0) {
      throw NumericalError("dual_objective: exponential overflow; re-gauge the potentials");
    }
    penalty += e.exp().sum();
  }
  return pot.x.dot(mu0.values) + pot.y.dot(mu1.values) - kernel.gamma * penalty;
}

struct WassersteinResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  ScalingPair pair;
};

// Transport-cost part sum psi_ij M_ij of the regularized objective. This is
// the quantity that converges to the unregularized optimum as gamma -> 0;
// the full objective keeps an O(gamma) entropy offset.
inline double transport_cost(const ScalingPair& pair, const KernelMatrix& kernel) {
  const Eigen::Index m = kernel.size();
  double cost = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    cost += (((pair.x.array() + pair.y[j] - kernel.M.col(j).array()) / kernel.gamma).exp() *
             kernel.M.col(j).array())
                .sum();
  }
  return cost;
}

inline WassersteinResult wasserstein_gamma(const DiscreteDensity& mu0, const DiscreteDensity& mu1,
                                           const KernelMatrix& kernel,
                                           const IpfpOptions& opts = {},
                                           const std::optional<Eigen::VectorXd>& w_start =
                                               std::nullopt) {
  WassersteinResult res;
  res.pair = ipfp(kernel, mu0, mu1, opts, w_start);
  res.value = dual_objective(to_potentials(res.pair), mu0, mu1, kernel);
  return res;
}

inline double wasserstein_gamma(const DiscreteDensity& mu0, const DiscreteDensity& mu1,
                                const Mesh& mesh, double gamma, const IpfpOptions& opts = {}) {
  return wasserstein_gamma(mu0, mu1, build_cost_kernel(mesh, gamma), opts).value;
}

// Unconstrained minimizer of f -> W_gamma(f, mu): the other marginal of the
// one-sided coupling, f = K (mu ./ K1), renormalized against discretization
// drift.
inline DiscreteDensity unconstrained_minimizer(const KernelMatrix& kernel,
                                               const DiscreteDensity& mu) {
  if (mu.size() != kernel.size()) throw InputError("unconstrained_minimizer: dimension mismatch");
  const Eigen::VectorXd kappa = kernel.K * Eigen::VectorXd::Ones(kernel.size());
  Eigen::VectorXd f = kernel.K * (mu.values.array() / kappa.array()).matrix();
  f *= static_cast<double>(f.size()) / f.sum();
  return DiscreteDensity{std::move(f)};
}

}  // namespace otshape

#endif  // OTSHAPE_OT_CORE_HPP_
