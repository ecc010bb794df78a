#ifndef OTSHAPE_SOLVER_HPP_
#define OTSHAPE_SOLVER_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "otshape/constraints.hpp"
#include "otshape/errors.hpp"
#include "otshape/mesh.hpp"
#include "otshape/ot_core.hpp"
#include "otshape/qp.hpp"

namespace otshape {

enum class KSelectMode { BoundaryMin, GlobalMin };

// Omitted-index rule. BoundaryMin keeps the backfilled element on the mesh
// boundary so the constraint holds on the interior; GlobalMin is the
// argmin-x choice that guarantees a convex subproblem. Ties break low.
inline Eigen::Index select_k(const Eigen::VectorXd& x, const Mesh& mesh, KSelectMode mode) {
  if (!x.allFinite()) throw InputError("select_k: potentials must be finite");
  if (mode == KSelectMode::GlobalMin) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < x.size(); ++i) {
      if (x[i] < x[best]) best = i;
    }
    return best;
  }
  const std::vector<Eigen::Index> boundary = mesh.boundary_indices();
  Eigen::Index best = boundary.front();
  for (Eigen::Index i : boundary) {
    if (x[i] < x[best]) best = i;
  }
  return best;
}

struct SolverOptions {
  int max_outer = 200;
  double model_tol = 1e-10;
  double initial_radius = 1.0;
  double min_radius = 1e-12;
  // Flag-and-project threshold for indefinite Hessians (generalized
  // constraints away from f_unc).
  double nonconvex_eig_tol = 1e-6;
  KSelectMode k_mode = KSelectMode::BoundaryMin;
  // The op-level IPFP default budget is 1000; the solver asks for more
  // headroom since cold starts on well-separated mixtures need it.
  IpfpOptions ipfp{1e-9, 20000};
};

// Gradient, Hessian, and supporting pieces of g -> W_gamma(mu, f(g)) at one
// iterate, from Theorem-style envelope differentiation: r = Jf' (x - x_k),
// H = A B A' + C with B = gamma (D_f - psi D_{1/mu} psi')^+.
struct CurvatureBundle {
  Eigen::VectorXd r;
  Eigen::MatrixXd H;
  Eigen::MatrixXd B;
  Eigen::VectorXd x;       // dual potentials, gauged so x[k] = 0
  double objective = 0.0;
  ScalingPair pair;
  double min_hessian_eig = 0.0;
  double hessian_norm = 0.0;
  bool psd_projected = false;
  Eigen::Index suggested_k = 0;
};

namespace detail {

// J_f' as a dense (m-1) x m matrix: columns are mesh indices, the k-th
// column carries the mass-backfill derivative -Jalpha' 1.
inline Eigen::MatrixXd lift_jacobian(const Eigen::SparseMatrix<double>& jalpha,
                                     Eigen::Index m, Eigen::Index k) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(m - 1, m);
  for (Eigen::Index outer = 0; outer < jalpha.outerSize(); ++outer) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(jalpha, outer); it; ++it) {
      // row = component of f_{-k}, col = component of g
      const Eigen::Index mesh_row = it.row() < k ? it.row() : it.row() + 1;
      A(it.col(), mesh_row) += it.value();
      A(it.col(), k) -= it.value();
    }
  }
  return A;
}

inline Eigen::SparseMatrix<double> diagonal_jacobian(const Eigen::VectorXd& d) {
  Eigen::SparseMatrix<double> j(d.size(), d.size());
  j.reserve(Eigen::VectorXi::Constant(static_cast<int>(d.size()), 1));
  for (Eigen::Index i = 0; i < d.size(); ++i) j.insert(i, i) = d[i];
  j.makeCompressed();
  return j;
}

}  // namespace detail

inline CurvatureBundle gradient_hessian(
    const Eigen::VectorXd& g, Eigen::Index k, const DiscreteDensity& mu,
    const KernelMatrix& kernel, const ShapeConstraint& constraint, const Mesh& mesh,
    const SolverOptions& opts = {},
    const std::optional<Eigen::VectorXd>& w_start = std::nullopt) {
  const Eigen::Index m = kernel.size();
  if (g.size() != m - 1) throw InputError("gradient_hessian: g must have length m-1");

  const FromG fg = from_g(g, constraint);
  if (!fg.mass_feasible) {
    throw InputError("gradient_hessian: from_g(g) must be strictly positive");
  }
  const DiscreteDensity f{assemble_full_density(fg.f_minus_k, fg.f_k, k)};

  CurvatureBundle out;
  out.pair = ipfp(kernel, f, mu, opts.ipfp, w_start);
  if (!out.pair.converged) {
    throw NumericalError(
        "gradient_hessian: IPFP did not converge; increase gamma or the iteration budget");
  }
  out.objective = dual_objective(to_potentials(out.pair), f, mu, kernel);
  out.x = out.pair.x.array() - out.pair.x[k];
  out.suggested_k = select_k(out.pair.x, mesh, opts.k_mode);

  const Eigen::MatrixXd psi = assemble_coupling(out.pair, kernel);
  Eigen::MatrixXd S = Eigen::MatrixXd(f.values.asDiagonal()) -
                      psi * mu.values.cwiseInverse().asDiagonal() * psi.transpose();
  S = 0.5 * (S + S.transpose());
  out.B = kernel.gamma * gauge_pseudoinverse_psd(S);

  // Constraint-specific pieces: Jacobian of alpha and the curvature term C.
  Eigen::SparseMatrix<double> jalpha;
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(m - 1, m - 1);
  const Eigen::VectorXd xt_minus = drop_index(out.x, k);
  switch (constraint.kind()) {
    case ShapeConstraint::Kind::RhoConcave: {
      const double rho = constraint.rho();
      const Eigen::VectorXd u = g.array().pow(1.0 / rho - 1.0) / rho;
      jalpha = detail::diagonal_jacobian(u);
      const Eigen::VectorXd cdiag = ((1.0 - rho) / (rho * rho)) *
                                    g.array().pow(1.0 / rho - 2.0) * xt_minus.array();
      C = cdiag.asDiagonal();
      break;
    }
    case ShapeConstraint::Kind::LogConcave: {
      const Eigen::VectorXd u = g.array().exp();
      jalpha = detail::diagonal_jacobian(u);
      C = (u.array() * xt_minus.array()).matrix().asDiagonal();
      break;
    }
    case ShapeConstraint::Kind::Generalized: {
      jalpha = constraint.gen().alpha_jacobian(g);
      C = constraint.gen().weighted_alpha_hessian(g, xt_minus);
      break;
    }
  }

  const Eigen::MatrixXd A = detail::lift_jacobian(jalpha, m, k);
  out.r = A * out.x;
  out.H = A * out.B * A.transpose() + C;
  out.H = 0.5 * (out.H + out.H.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.H);
  out.min_hessian_eig = eig.eigenvalues().minCoeff();
  out.hessian_norm = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (out.min_hessian_eig < -opts.nonconvex_eig_tol * std::max(out.hessian_norm, 1e-30)) {
    // Theorem 7(4) only guarantees convexity near f_unc for generalized
    // constraints; project to the PSD part and flag the iterate.
    out.psd_projected = true;
    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    out.H = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
  }
  return out;
}

// Least concave majorant of (x_i, y_i) on a 1-d mesh, by monotone-chain
// upper hull. Used to clean numerical dust off warm starts.
inline Eigen::VectorXd concave_envelope_1d(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.size();
  std::vector<Eigen::Index> hull;
  const auto cross = [&](Eigen::Index a, Eigen::Index b, Eigen::Index c) {
    return (x[b] - x[a]) * (y[c] - y[a]) - (x[c] - x[a]) * (y[b] - y[a]);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), i) >= 0.0) {
      hull.pop_back();
    }
    hull.push_back(i);
  }
  Eigen::VectorXd env(n);
  for (std::size_t s = 0; s + 1 < hull.size(); ++s) {
    const Eigen::Index a = hull[s], b = hull[s + 1];
    for (Eigen::Index i = a; i <= b; ++i) {
      const double t = (x[i] - x[a]) / (x[b] - x[a]);
      env[i] = (1.0 - t) * y[a] + t * y[b];
    }
  }
  if (hull.size() == 1) env.setConstant(y[hull[0]]);
  return env;
}

namespace detail {

// Snap g onto its cone for d = 1 families (tiny violations only).
inline Eigen::VectorXd envelope_repair(const Eigen::VectorXd& g, const ShapeConstraint& c,
                                       const Mesh& mesh, std::optional<Eigen::Index> omit_k) {
  if (mesh.dim != 1) return g;
  if (c.kind() == ShapeConstraint::Kind::Generalized) {
    // Convex envelope of the anchored sequence (g_0 = 1 prepended).
    const Eigen::Index m = mesh.size();
    Eigen::VectorXd full(m);
    full[0] = 1.0;
    full.tail(m - 1) = g;
    const Eigen::VectorXd env = -concave_envelope_1d(mesh.points.col(0), -full);
    return env.tail(m - 1);
  }
  // Coordinates of the retained mesh points.
  const Eigen::Index m = mesh.size();
  Eigen::VectorXd coords(g.size());
  Eigen::Index pos = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    if (omit_k && i == *omit_k) continue;
    coords[pos++] = mesh.points(i, 0);
  }
  if (c.row_sign() > 0.0) return concave_envelope_1d(coords, g);
  return -concave_envelope_1d(coords, -g);
}

}  // namespace detail

struct IterationRecord {
  int iteration = 0;
  double objective = 0.0;
  double radius = 0.0;
  double step_norm = 0.0;
  double min_hessian_eig = 0.0;
  double max_violation = 0.0;
  bool accepted = false;
};

namespace detail {

// Rows controlling the backfilled element f_k = mass - sum alpha(g): it must
// stay positive, and because W_gamma depends on f_k through log-scale
// potentials, one step may move it by at most a factor of e in either
// direction (the quadratic model cannot see that wall once f_k is floored).
// Two linearized rows, appended last so warm active sets stay valid.
inline LinearConstraintSet augment_mass_rows(const LinearConstraintSet& rows,
                                             const ShapeConstraint& constraint,
                                             const Eigen::VectorXd& g, double mass,
                                             double floor_eps = 1e-12) {
  Eigen::VectorXd grad_sum(g.size());
  double f_sum = 0.0;
  switch (constraint.kind()) {
    case ShapeConstraint::Kind::RhoConcave: {
      const double rho = constraint.rho();
      grad_sum = g.array().pow(1.0 / rho - 1.0) / rho;
      f_sum = g.array().pow(1.0 / rho).sum();
      break;
    }
    case ShapeConstraint::Kind::LogConcave: {
      grad_sum = g.array().exp();
      f_sum = grad_sum.sum();
      break;
    }
    case ShapeConstraint::Kind::Generalized: {
      const Eigen::SparseMatrix<double> j = constraint.gen().alpha_jacobian(g);
      grad_sum = Eigen::VectorXd(Eigen::RowVectorXd::Ones(j.rows()) * j);
      f_sum = constraint.gen().alpha(g).sum();
      break;
    }
  }
  const double f_k = mass - f_sum;
  const double band = 2.718281828459045;
  const double lo = std::max(f_k / band, floor_eps);
  const double hi = f_k * band;

  LinearConstraintSet out = rows;
  const Eigen::Index r = rows.count();
  out.rows.conservativeResize(r + 2, rows.rows.cols());
  for (Eigen::Index c = 0; c < g.size(); ++c) {
    if (grad_sum[c] != 0.0) {
      out.rows.coeffRef(r, c) = grad_sum[c];        // sum alpha may rise: f_k >= lo
      out.rows.coeffRef(r + 1, c) = -grad_sum[c];   // sum alpha may fall: f_k <= hi
    }
  }
  out.rows.makeCompressed();
  out.rhs.conservativeResize(r + 2);
  out.rhs[r] = grad_sum.dot(g) + (mass - lo - f_sum);
  out.rhs[r + 1] = -grad_sum.dot(g) + (f_sum - (mass - hi));
  return out;
}

}  // namespace detail

struct SolveResult {
  DiscreteDensity f_hat;
  Eigen::VectorXd g;
  Eigen::Index k = 0;
  double objective = 0.0;
  bool converged = false;
  bool radius_collapsed = false;
  bool nonconvex_flagged = false;
  int outer_iterations = 0;
  ScalingPair pair;
  std::vector<IterationRecord> trace;
};

// Trust-region outer loop (accept on actual decrease, Fan-Yuan radius
// updates c <- c/4 + eta/8 and c <- 3c/2) over the QP subproblem with the
// shape rows linearized exactly.
inline SolveResult trust_region_estimate(const DiscreteDensity& mu,
                                         const ShapeConstraint& constraint,
                                         const DiscreteDensity& f0, const KernelMatrix& kernel,
                                         const Mesh& mesh, const SolverOptions& opts = {}) {
  const Eigen::Index m = kernel.size();
  if (mu.size() != m || f0.size() != m) throw InputError("trust_region_estimate: size mismatch");
  if ((f0.values.array() <= 0.0).any()) {
    throw InputError("trust_region_estimate: warm start must be strictly positive");
  }

  SolveResult res;

  // Omitted index: pinned for generalized constraints, otherwise from the
  // potentials of the warm start.
  Eigen::Index k;
  std::optional<Eigen::VectorXd> warm_w;
  if (constraint.has_fixed_k()) {
    k = constraint.fixed_k();
  } else {
    const ScalingPair probe = ipfp(kernel, f0, mu, opts.ipfp);
    if (!probe.converged) {
      throw NumericalError("trust_region_estimate: IPFP failed on the warm start");
    }
    k = select_k(probe.x, mesh, opts.k_mode);
    warm_w = probe.w;
  }

  // Shape rows plus, for the power family, the domain bounds g_i >= floor
  // (the QP otherwise happily pushes floored tail cells negative).
  const auto build_rows = [&](Eigen::Index omit) {
    LinearConstraintSet out = shape_rows(constraint, mesh, omit);
    if (constraint.kind() == ShapeConstraint::Kind::RhoConcave) {
      const Eigen::Index base = out.count();
      const Eigen::Index nv = out.n_var;
      out.rows.conservativeResize(base + nv, out.rows.cols());
      out.rhs.conservativeResize(base + nv);
      for (Eigen::Index i = 0; i < nv; ++i) {
        out.rows.coeffRef(base + i, i) = -1.0;
        out.rhs[base + i] = -1e-12;
      }
      out.rows.makeCompressed();
    }
    return out;
  };

  Eigen::VectorXd g = to_g(drop_index(f0.values, k), constraint);
  LinearConstraintSet rows = build_rows(k);

  // Afriat auxiliaries (d = 2): subgradient estimates ride along in z.
  const bool has_aux = rows.n_aux > 0;
  Eigen::VectorXd aux;
  if (has_aux) {
    Eigen::VectorXd g_full = to_g(f0.values, constraint);
    const Eigen::VectorXd beta_full = detail::heuristic_beta(g_full, mesh);
    aux.resize(rows.n_aux);
    Eigen::Index p = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == k) continue;
      for (int axis = 0; axis < mesh.dim; ++axis) aux[p++] = beta_full[j * mesh.dim + axis];
    }
  }
  const auto pack = [&](const Eigen::VectorXd& gv) {
    if (!has_aux) return gv;
    Eigen::VectorXd z(gv.size() + aux.size());
    z << gv, aux;
    return z;
  };

  // Clean warm-start dust; larger violations are a caller bug.
  {
    const double viol = rows.max_violation(pack(g));
    if (viol > 1e-12) {
      if (mesh.dim == 1) g = detail::envelope_repair(g, constraint, mesh, k);
      if (rows.max_violation(pack(g)) > 1e-7) {
        throw InputError("trust_region_estimate: warm start violates the shape constraint");
      }
    }
  }

  CurvatureBundle bundle =
      gradient_hessian(g, k, mu, kernel, constraint, mesh, opts, warm_w);
  double radius = opts.initial_radius;
  double eta = 1.0;
  std::vector<Eigen::Index> warm_active;

  const Eigen::Index n_g = m - 1;
  const auto extend = [&](const Eigen::MatrixXd& H, const Eigen::VectorXd& r) {
    if (!has_aux) return std::pair<Eigen::MatrixXd, Eigen::VectorXd>(H, r);
    const Eigen::Index n = n_g + rows.n_aux;
    Eigen::MatrixXd He = Eigen::MatrixXd::Zero(n, n);
    He.topLeftCorner(n_g, n_g) = H;
    Eigen::VectorXd re = Eigen::VectorXd::Zero(n);
    re.head(n_g) = r;
    return std::pair<Eigen::MatrixXd, Eigen::VectorXd>(He, re);
  };

  int outer = 0;
  for (; outer < opts.max_outer; ++outer) {
    res.nonconvex_flagged = res.nonconvex_flagged || bundle.psd_projected;
    const auto [He, re] = extend(bundle.H, bundle.r);
    const Eigen::VectorXd z = pack(g);
    const LinearConstraintSet qp_rows =
        detail::augment_mass_rows(rows, constraint, g, static_cast<double>(m));
    const QpResult qp = qp_subproblem(He, re, z, qp_rows, radius, {}, warm_active);
    warm_active = qp.active;

    if (qp.model_decrease <= opts.model_tol * (1.0 + std::abs(bundle.objective))) {
      res.converged = true;
      break;
    }

    const Eigen::VectorXd g_trial = g + qp.step.head(n_g);
    if (has_aux) aux += qp.step.tail(rows.n_aux);

    double w_trial = std::numeric_limits<double>::infinity();
    std::optional<ScalingPair> trial_pair;
    FromG fg_trial;
    bool domain_ok = true;
    try {
      fg_trial = from_g(g_trial, constraint);
    } catch (const InputError&) {
      domain_ok = false;
    }
    if (domain_ok && fg_trial.mass_feasible) {
      const DiscreteDensity f_trial{
          assemble_full_density(fg_trial.f_minus_k, fg_trial.f_k, k)};
      const ScalingPair p = ipfp(kernel, f_trial, mu, opts.ipfp, bundle.pair.w);
      if (p.converged) {
        w_trial = dual_objective(to_potentials(p), f_trial, mu, kernel);
        trial_pair = p;
      }
    }

    const double w_cur = bundle.objective;
    const bool accepted = w_trial < w_cur;
    const double ratio = (w_cur - w_trial) / qp.model_decrease;

    if (accepted) {
      g = g_trial;
      // Re-select the omitted index from the fresh potentials; keep the old
      // one if the remapped iterate would leave the (newly enforced) rows.
      if (!constraint.has_fixed_k() && !has_aux) {
        const Eigen::Index k_new = select_k(trial_pair->x, mesh, opts.k_mode);
        if (k_new != k) {
          const Eigen::VectorXd f_full =
              assemble_full_density(fg_trial.f_minus_k, fg_trial.f_k, k);
          Eigen::VectorXd g_new = to_g(drop_index(f_full, k_new), constraint);
          LinearConstraintSet rows_new = build_rows(k_new);
          g_new = detail::envelope_repair(g_new, constraint, mesh, k_new);
          // Adopt the new index only if the remapped iterate is usable: the
          // rows previously exempted through the old k now apply.
          bool usable = rows_new.max_violation(g_new) <= 1e-12;
          if (usable) {
            try {
              usable = from_g(g_new, constraint).mass_feasible;
            } catch (const InputError&) {
              usable = false;
            }
          }
          if (usable) {
            k = k_new;
            g = g_new;
            rows = std::move(rows_new);
            warm_active.clear();
          }
        }
      }
      bundle = gradient_hessian(g, k, mu, kernel, constraint, mesh, opts,
                                trial_pair ? std::optional<Eigen::VectorXd>(trial_pair->w)
                                           : std::nullopt);
    } else if (has_aux) {
      aux -= qp.step.tail(rows.n_aux);  // roll back the auxiliary move
    }

    if (ratio < 0.25) {
      radius = radius / 4.0 + eta / 8.0;
    } else {
      radius = 1.5 * radius;
    }
    eta = qp.step.norm();

    IterationRecord rec;
    rec.iteration = outer + 1;
    rec.objective = bundle.objective;
    rec.radius = radius;
    rec.step_norm = eta;
    rec.min_hessian_eig = bundle.min_hessian_eig;
    rec.max_violation = rows.max_violation(pack(g));
    rec.accepted = accepted;
    res.trace.push_back(rec);

    if (radius < opts.min_radius) {
      res.radius_collapsed = true;
      res.converged = true;
      break;
    }
  }
  if (outer == opts.max_outer) res.converged = false;

  const FromG fg = from_g(g, constraint);
  res.f_hat = DiscreteDensity{assemble_full_density(fg.f_minus_k, fg.f_k, k)};
  res.g = g;
  res.k = k;
  res.objective = bundle.objective;
  res.pair = bundle.pair;
  res.outer_iterations = outer;
  return res;
}

// ---------------------------------------------------------------------------
// MABP warm start (alternating Bregman projections).

struct BregmanProjection {
  Eigen::VectorXd g;
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();
  enum class Status { Ok, RescaleNeeded, Approximate } status = Status::Ok;
  std::vector<Eigen::Index> active;
};

namespace detail {

struct BregmanObjective {
  // t = g^(1/rho) (rho != 0) or exp(g) (log case, rho == 0).
  double rho = 1.0;
  bool log_case = false;
  Eigen::VectorXd vbar;

  Eigen::VectorXd t_of(const Eigen::VectorXd& g) const {
    if (log_case) return g.array().exp();
    return g.array().pow(1.0 / rho);
  }
  double value(const Eigen::VectorXd& g) const {
    const Eigen::ArrayXd t = t_of(g).array();
    return (t * ((t / vbar.array()).log() - 1.0)).sum();
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& g) const {
    const Eigen::ArrayXd t = t_of(g).array();
    const Eigen::ArrayXd L = (t / vbar.array()).log();
    if (log_case) return (t * L).matrix();
    return (g.array().pow(1.0 / rho - 1.0) / rho * L).matrix();
  }
  Eigen::VectorXd hess_diag(const Eigen::VectorXd& g) const {
    const Eigen::ArrayXd t = t_of(g).array();
    const Eigen::ArrayXd L = (t / vbar.array()).log();
    if (log_case) return (t * (1.0 + L)).matrix();
    return (g.array().pow(1.0 / rho - 2.0) / (rho * rho) * (1.0 + (1.0 - rho) * L)).matrix();
  }
  bool domain_ok(const Eigen::VectorXd& g) const {
    return log_case ? g.allFinite() : (g.array() > 0.0).all() && g.allFinite();
  }
};

}  // namespace detail

// Bregman projection of the free marginal onto the shape cone:
//   argmin_g sum t_i log(t_i / (e vbar_i))  s.t. shape rows,
// by damped Newton over the diagonal objective with the QP machinery. The
// caller maintains the (rho-1) log(t/vbar) <= 1 convexity window by
// rescaling; losing it mid-iteration is reported, not fatal.
inline BregmanProjection bregman_shape_projection(
    const Eigen::VectorXd& vbar, const ShapeConstraint& constraint,
    const LinearConstraintSet& rows, const Mesh& mesh,
    const std::optional<Eigen::VectorXd>& g_init = std::nullopt,
    const std::vector<Eigen::Index>& warm_active = {}) {
  const Eigen::Index n = vbar.size();
  detail::BregmanObjective obj;
  obj.log_case = constraint.kind() == ShapeConstraint::Kind::LogConcave;
  obj.rho = obj.log_case ? 0.0 : constraint.rho();
  obj.vbar = vbar;

  BregmanProjection out;
  const bool has_aux = rows.n_aux > 0;

  // Start from the supplied iterate when it is feasible, otherwise from the
  // affine fit to the unconstrained optimum t = vbar (feasible for either
  // concavity orientation, with the slope as Afriat subgradient).
  Eigen::VectorXd target;
  if (obj.log_case) {
    target = vbar.array().log();
  } else {
    target = vbar.array().pow(obj.rho);
  }
  Eigen::VectorXd g;
  Eigen::VectorXd aux = Eigen::VectorXd::Zero(rows.n_aux);
  const auto pack = [&](const Eigen::VectorXd& gv) {
    if (!has_aux) return gv;
    Eigen::VectorXd z(gv.size() + aux.size());
    z << gv, aux;
    return z;
  };
  bool need_affine = true;
  if (g_init && obj.domain_ok(*g_init) && rows.max_violation(pack(*g_init)) <= 0.0) {
    g = *g_init;
    need_affine = false;
  }
  if (need_affine) {
    Eigen::MatrixXd X(n, 1 + mesh.dim);
    X.col(0).setOnes();
    X.rightCols(mesh.dim) = mesh.points;
    const Eigen::VectorXd coef = X.colPivHouseholderQr().solve(target);
    g = X * coef;
    if (!obj.domain_ok(g)) {
      // Positive domain needed: flat fallback at the mean of the target.
      g.setConstant(std::max(target.mean(), 1e-8));
    }
    for (Eigen::Index j = 0; has_aux && j < n; ++j) {
      for (int axis = 0; axis < mesh.dim; ++axis) aux[j * mesh.dim + axis] = coef[1 + axis];
    }
    // Generalized rows can carry a nonzero rhs (anchors); repair if needed.
    if (rows.max_violation(pack(g)) > 0.0 && mesh.dim == 1) {
      g = detail::envelope_repair(g, constraint, mesh, std::nullopt);
      g = g.cwiseMax(1e-10);
    }
  }

  std::vector<Eigen::Index> active = warm_active;
  double fval = obj.value(g);
  for (int newton = 0; newton < 80; ++newton) {
    const Eigen::VectorXd grad = obj.grad(g);
    Eigen::VectorXd hdiag = obj.hess_diag(g);
    const double hmax = hdiag.cwiseAbs().maxCoeff();
    if (hdiag.minCoeff() < -1e-10 * std::max(hmax, 1.0)) {
      out.status = BregmanProjection::Status::RescaleNeeded;
      out.g = g;
      return out;
    }
    hdiag = hdiag.cwiseMax(1e-12 * std::max(hmax, 1.0));

    const Eigen::Index nz = n + rows.n_aux;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nz, nz);
    H.topLeftCorner(n, n) = Eigen::MatrixXd(hdiag.asDiagonal());
    Eigen::VectorXd r = Eigen::VectorXd::Zero(nz);
    r.head(n) = grad;

    const double big_radius = 1e3 * (1.0 + pack(g).norm());
    const QpResult qp = qp_subproblem(H, r, pack(g), rows, big_radius, {}, active);
    active = qp.active;

    // KKT residual of the projection at the current point.
    Eigen::VectorXd stat = r;
    for (std::size_t c = 0; c < qp.active.size(); ++c) {
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows.rows,
                                                                          qp.active[c]);
           it; ++it) {
        stat[it.col()] += qp.lambda[static_cast<Eigen::Index>(c)] * it.value();
      }
    }
    out.kkt_residual = stat.cwiseAbs().maxCoeff();
    if (qp.model_decrease <= 1e-16 * (1.0 + std::abs(fval)) || out.kkt_residual <= 1e-9) {
      break;
    }

    // Fraction to the domain boundary, then Armijo.
    const Eigen::VectorXd dg = qp.step.head(n);
    double alpha = 1.0;
    if (!obj.log_case) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (dg[i] < 0.0) alpha = std::min(alpha, -0.995 * g[i] / dg[i]);
      }
    }
    bool moved = false;
    for (int ls = 0; ls < 50; ++ls) {
      const Eigen::VectorXd g_trial = g + alpha * dg;
      if (obj.domain_ok(g_trial)) {
        const double f_trial = obj.value(g_trial);
        if (f_trial <= fval + 1e-4 * alpha * grad.dot(dg)) {
          g = g_trial;
          if (has_aux) aux += alpha * qp.step.tail(rows.n_aux);
          fval = f_trial;
          moved = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!moved) {
      out.status = BregmanProjection::Status::Approximate;
      break;
    }
  }
  if (out.kkt_residual > 1e-7 && out.status == BregmanProjection::Status::Ok) {
    out.status = BregmanProjection::Status::Approximate;
  }
  out.g = g;
  out.active = active;
  return out;
}

struct MabpResult {
  DiscreteDensity f0;
  Eigen::VectorXd w;  // final scaling, a warm start for IPFP against mu
  bool approximate = false;
  int rescales = 0;
};

namespace detail {

// Restore the convexity window max (rho-1) log(f/vbar) <= 3/4 by moving a
// constant between v and w (the coupling D_w K D_v is unchanged). The
// restoring direction shrinks v for rho < 1 and grows it for rho > 1; the
// printed 2^sgn(rho) choice moves the wrong way for rho < 0.
inline int restore_convexity_window(const Eigen::VectorXd& f, Eigen::VectorXd& vbar,
                                    Eigen::VectorXd& v, Eigen::VectorXd& w, double rho_eff) {
  if (rho_eff == 1.0) return 0;
  const double c = rho_eff < 1.0 ? 2.0 : 0.5;
  int shifts = 0;
  while (((rho_eff - 1.0) * (f.array() / vbar.array()).log()).maxCoeff() > 0.75 &&
         shifts < 512) {
    v /= c;
    w *= c;
    vbar /= c;
    ++shifts;
  }
  return shifts;
}

}  // namespace detail

// Algorithm-3-style warm start: alternate the marginal scaling with the
// Bregman projection of the free marginal onto the shape cone. The
// convexity guard (rho-1) log(f/vbar) <= 3/4 is restored by halving or
// doubling v (the product coupling is unchanged); the restoring direction
// is v-shrinking for rho < 1 and v-growing for rho > 1.
inline MabpResult mabp_warmstart(const DiscreteDensity& mu, const KernelMatrix& kernel,
                                 const ShapeConstraint& constraint, const Mesh& mesh,
                                 int iters = 30) {
  if (constraint.kind() == ShapeConstraint::Kind::Generalized) {
    throw ParameterError("mabp_warmstart supports the rho and log families only");
  }
  const Eigen::Index m = kernel.size();
  const double rho_eff =
      constraint.kind() == ShapeConstraint::Kind::LogConcave ? 0.0 : constraint.rho();
  const double c = rho_eff < 1.0 ? 2.0 : 0.5;

  const auto form = mesh.dim == 1 ? LinearConstraintSet::Form::SecondDifference
                                  : LinearConstraintSet::Form::Afriat;
  const LinearConstraintSet rows = concavity_rows(
      mesh, constraint.kind() == ShapeConstraint::Kind::RhoConcave ? constraint.rho() : 0.0,
      form, std::nullopt);

  MabpResult out;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd f = mu.values;
  std::optional<Eigen::VectorXd> g_warm;
  std::vector<Eigen::Index> active;

  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd v = mu.values.array() / (kernel.K * w).array();
    Eigen::VectorXd vbar = kernel.K * v;

    out.rescales += detail::restore_convexity_window(f, vbar, v, w, rho_eff);

    BregmanProjection proj =
        bregman_shape_projection(vbar, constraint, rows, mesh, g_warm, active);
    if (proj.status == BregmanProjection::Status::RescaleNeeded) {
      v /= c;
      w *= c;
      vbar /= c;
      ++out.rescales;
      proj = bregman_shape_projection(vbar, constraint, rows, mesh, g_warm, active);
    }
    if (proj.status != BregmanProjection::Status::Ok) out.approximate = true;

    g_warm = proj.g;
    active = proj.active;
    if (constraint.kind() == ShapeConstraint::Kind::LogConcave) {
      f = proj.g.array().exp();
    } else {
      f = proj.g.array().pow(1.0 / constraint.rho());
    }
    w = f.array() / (kernel.K * v).array();
  }

  out.w = w * (static_cast<double>(m) / f.sum());
  out.f0 = floor_and_normalize(f);  // IPFP consumers need strictly positive input
  return out;
}

}  // namespace otshape

#endif  // OTSHAPE_SOLVER_HPP_
