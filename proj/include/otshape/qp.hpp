#ifndef OTSHAPE_QP_HPP_
#define OTSHAPE_QP_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SparseLU>

#include "otshape/constraints.hpp"
#include "otshape/errors.hpp"

namespace otshape {

// Eigendecomposition-based pseudoinverse for symmetric matrices of known
// rank n-1 (nullspace ~ span{1} for the coupling curvature matrices). The
// single smallest-magnitude eigenvalue is dropped; finding a second
// near-zero one means the input lost rank.
inline Eigen::MatrixXd pseudoinverse_psd(const Eigen::MatrixXd& S,
                                         double rel_threshold = 1e-10,
                                         Eigen::VectorXd* dropped_vector = nullptr) {
  if (S.rows() != S.cols()) throw InputError("pseudoinverse_psd: matrix must be square");
  const Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("pseudoinverse_psd: eigensolver failed");
  const Eigen::VectorXd& lam = eig.eigenvalues();
  const Eigen::Index n = lam.size();
  const double max_abs = lam.cwiseAbs().maxCoeff();
  Eigen::Index smallest = 0;
  int near_zero = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(lam[i]) < std::abs(lam[smallest])) smallest = i;
    if (std::abs(lam[i]) < rel_threshold * max_abs) ++near_zero;
  }
  if (near_zero > 1) {
    throw NumericalError("pseudoinverse_psd: more than one near-zero eigenvalue (rank < n-1)");
  }
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i != smallest) inv[i] = 1.0 / lam[i];
  }
  if (dropped_vector) *dropped_vector = eig.eigenvectors().col(smallest);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

// Curvature variant for the solver: floored tails can push additional
// eigenvalues of D_f - psi D_{1/mu} psi' toward zero (dead cells decouple),
// so the strict rank-(m-1) contract cannot hold there. All eigenvalues below
// the relative threshold are dropped; the trial-step evaluation polices the
// directions the model then underestimates.
inline Eigen::MatrixXd gauge_pseudoinverse_psd(const Eigen::MatrixXd& S,
                                               double rel_threshold = 1e-10) {
  const Eigen::MatrixXd sym = 0.5 * (S + S.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("gauge_pseudoinverse_psd: eigensolver failed");
  }
  const Eigen::Index n = eig.eigenvalues().size();
  const double cut = rel_threshold * eig.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(eig.eigenvalues()[i]) > cut) inv[i] = 1.0 / eig.eigenvalues()[i];
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

namespace detail {

// Exact trust-region subproblem min 1/2 u'Bu + q'u, ||u|| <= delta, for PSD B
// via the spectral secular equation. Returns the step and the ball
// multiplier tau >= 0.
struct TrBallSolution {
  Eigen::VectorXd u;
  double tau = 0.0;
  bool on_boundary = false;
};

inline TrBallSolution tr_ball(const Eigen::MatrixXd& B, const Eigen::VectorXd& q, double delta) {
  TrBallSolution sol;
  const Eigen::Index n = q.size();
  sol.u = Eigen::VectorXd::Zero(n);
  if (n == 0 || delta <= 0.0) {
    sol.on_boundary = delta <= 0.0;
    return sol;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(B);
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::VectorXd qt = eig.eigenvectors().transpose() * q;
  const double lam_max = lam.maxCoeff();
  const double zero_tol = std::max(1e-14, 1e-12 * lam_max);

  // Interior candidate: pseudo-solve B u = -q; valid only when q has no
  // component in the nullspace of B.
  bool interior_ok = true;
  Eigen::VectorXd ut(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lam[i] > zero_tol) {
      ut[i] = -qt[i] / lam[i];
    } else if (std::abs(qt[i]) <= 1e-13 * std::max(1.0, q.norm())) {
      ut[i] = 0.0;
    } else {
      interior_ok = false;
      break;
    }
  }
  if (interior_ok && ut.norm() <= delta) {
    sol.u = eig.eigenvectors() * ut;
    return sol;
  }

  // Boundary solution: ||u(tau)||^2 = sum qt_i^2/(lam_i+tau)^2 = delta^2 is
  // monotone decreasing in tau, so bisection is safe.
  const auto norm2_at = [&](double tau) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = lam[i] + tau;
      s += (qt[i] * qt[i]) / (d * d);
    }
    return s;
  };
  double lo = 0.0;
  double hi = std::max(qt.norm() / delta, 1e-30);
  while (norm2_at(hi) > delta * delta) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (norm2_at(mid) > delta * delta) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  sol.tau = hi;
  for (Eigen::Index i = 0; i < n; ++i) ut[i] = -qt[i] / (lam[i] + sol.tau);
  sol.u = eig.eigenvectors() * ut;
  sol.on_boundary = true;
  return sol;
}

}  // namespace detail

struct QpOptions {
  double mult_tol = 1e-9;        // drop working-set rows with lambda below -mult_tol
  double feas_tol = 1e-11;       // slack threshold when adding rows
  int max_iterations = 0;        // 0 = automatic from problem size
  double ridge = 1e-10;          // PSD safety regularization, scaled by ||H||
};

struct QpResult {
  Eigen::VectorXd step;
  double model_decrease = 0.0;   // q(0) - q(step) >= 0
  double kkt_residual = std::numeric_limits<double>::quiet_NaN();
  bool stalled = false;
  double ball_multiplier = 0.0;
  std::vector<Eigen::Index> active;   // final working set (row indices)
  Eigen::VectorXd lambda;             // multipliers for `active`
};

// Trust-region quadratic program
//     min 1/2 d'Hd + r'd   s.t.  L (z0 + d) <= rhs,  ||d|| <= radius,
// solved by a primal active-set method: tight rows are held as equalities,
// the equality-constrained ball problem is solved exactly in the nullspace,
// blocking rows are added along the way and wrong-signed multipliers release
// rows. z0 must be feasible, so d = 0 always is.
inline QpResult qp_subproblem(const Eigen::MatrixXd& H, const Eigen::VectorXd& r,
                              const Eigen::VectorXd& z0, const LinearConstraintSet& cons,
                              double radius, const QpOptions& opts = {},
                              const std::vector<Eigen::Index>& warm_active = {}) {
  const Eigen::Index n = r.size();
  const Eigen::Index n_rows = cons.count();
  if (H.rows() != n || H.cols() != n) throw InputError("qp_subproblem: H dimension mismatch");
  if (cons.rows.cols() != 0 && cons.rows.cols() != n) {
    throw InputError("qp_subproblem: constraint dimension mismatch");
  }
  if (!(radius > 0.0)) throw ParameterError("qp_subproblem: radius must be positive");

  // Slack of each row at z0; clip the tiny negative dust a feasible iterate
  // can carry.
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_rows);
  if (n_rows > 0) b = (cons.rhs - cons.rows * z0).cwiseMax(0.0);

  const double h_scale = std::max(1.0, H.cwiseAbs().maxCoeff());
  Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  Hs.diagonal().array() += opts.ridge * h_scale;

  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Index> work;
  std::vector<bool> in_work(static_cast<std::size_t>(n_rows), false);
  const auto row_value = [&](Eigen::Index j, const Eigen::VectorXd& vec) {
    double s = 0.0;
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(cons.rows, j); it; ++it) {
      s += it.value() * vec[it.col()];
    }
    return s;
  };
  for (Eigen::Index j : warm_active) {
    if (j >= 0 && j < n_rows && b[j] <= opts.feas_tol && !in_work[j]) {
      work.push_back(j);
      in_work[j] = true;
    }
  }

  QpResult res;
  res.step = d;
  const int max_it = opts.max_iterations > 0
                         ? opts.max_iterations
                         : static_cast<int>(3 * (n + std::min<Eigen::Index>(n_rows, 4 * n)) + 64);

  // Diagonal Hessians with sparse rows (the Bregman projections) admit a
  // sparse equality-KKT solve that skips the dense nullspace machinery
  // whenever the ball stays slack.
  bool h_diagonal = true;
  for (Eigen::Index i = 0; h_diagonal && i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && Hs(i, j) != 0.0) {
        h_diagonal = false;
        break;
      }
    }
  }

  double tau = 0.0;
  Eigen::MatrixXd At;  // n x |W|
  for (int it = 0; it < max_it; ++it) {
    const Eigen::Index nw = static_cast<Eigen::Index>(work.size());
    Eigen::VectorXd d_new = d;
    tau = 0.0;
    bool solved = false;

    if (h_diagonal) {
      // KKT system [H A'; A 0] [d; lambda] = [-r; b_W].
      std::vector<Eigen::Triplet<double>> trips;
      trips.reserve(static_cast<std::size_t>(n) + 6 * static_cast<std::size_t>(nw));
      for (Eigen::Index i = 0; i < n; ++i) trips.emplace_back(i, i, Hs(i, i));
      for (Eigen::Index c = 0; c < nw; ++c) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator itr(cons.rows, work[c]);
             itr; ++itr) {
          trips.emplace_back(itr.col(), n + c, itr.value());
          trips.emplace_back(n + c, itr.col(), itr.value());
        }
      }
      Eigen::SparseMatrix<double> kkt(n + nw, n + nw);
      kkt.setFromTriplets(trips.begin(), trips.end());
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(kkt);
      if (lu.info() == Eigen::Success) {
        Eigen::VectorXd rhs(n + nw);
        rhs.head(n) = -r;
        for (Eigen::Index c = 0; c < nw; ++c) rhs[n + c] = b[work[c]];
        const Eigen::VectorXd sol = lu.solve(rhs);
        if (sol.allFinite() && sol.head(n).norm() <= radius) {
          d_new = sol.head(n);
          solved = true;
        }
      }
    }

    if (!solved) {
      // Dense path: nullspace basis of the working rows, then the exact
      // ball-constrained reduced problem around the current d.
      Eigen::MatrixXd Z;
      if (nw == 0) {
        Z = Eigen::MatrixXd::Identity(n, n);
      } else {
        At.resize(n, nw);
        At.setZero();
        for (Eigen::Index c = 0; c < nw; ++c) {
          for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator itr(cons.rows,
                                                                               work[c]);
               itr; ++itr) {
            At(itr.col(), c) = itr.value();
          }
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(At);
        const Eigen::Index rank = qr.rank();
        Eigen::MatrixXd Q = qr.householderQ();
        Z = Q.rightCols(n - rank);
      }

      const Eigen::VectorXd grad = Hs * d + r;
      if (Z.cols() > 0) {
        const Eigen::VectorXd p = Z.transpose() * d;
        const double rad2 = radius * radius - d.squaredNorm() + p.squaredNorm();
        const double delta = std::sqrt(std::max(rad2, 0.0));
        const Eigen::MatrixXd Hred = Z.transpose() * Hs * Z;
        const Eigen::VectorXd qred = Z.transpose() * grad - Hred * p;
        const detail::TrBallSolution ball = detail::tr_ball(Hred, qred, delta);
        d_new = d + Z * (ball.u - p);
        tau = ball.tau;
      }
    }

    // Longest feasible prefix of the move; the ball is convex so only the
    // linear rows can block.
    const Eigen::VectorXd move = d_new - d;
    if (move.norm() > 1e-16 * std::max(1.0, radius)) {
      double alpha = 1.0;
      Eigen::Index blocker = -1;
      for (Eigen::Index j = 0; j < n_rows; ++j) {
        if (in_work[j]) continue;
        const double dir = row_value(j, move);
        if (dir <= 1e-14) continue;
        const double slack = b[j] - row_value(j, d);
        const double a = slack / dir;
        if (a < alpha - 1e-15) {
          alpha = std::max(a, 0.0);
          blocker = j;
        }
      }
      d += alpha * move;
      if (blocker >= 0) {
        work.push_back(blocker);
        in_work[blocker] = true;
        continue;
      }
    }

    // Full step taken: examine multipliers of the working rows.
    const Eigen::VectorXd stat = Hs * d + r + tau * d;
    Eigen::VectorXd lambda;
    if (!work.empty()) {
      At.resize(n, static_cast<Eigen::Index>(work.size()));
      At.setZero();
      for (std::size_t c = 0; c < work.size(); ++c) {
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator itr(cons.rows, work[c]);
             itr; ++itr) {
          At(itr.col(), static_cast<Eigen::Index>(c)) = itr.value();
        }
      }
      lambda = At.colPivHouseholderQr().solve(-stat);
      Eigen::Index worst = -1;
      double worst_val = -opts.mult_tol * std::max(1.0, stat.norm());
      for (Eigen::Index c = 0; c < lambda.size(); ++c) {
        if (lambda[c] < worst_val) {
          worst_val = lambda[c];
          worst = c;
        }
      }
      if (worst >= 0) {
        in_work[work[static_cast<std::size_t>(worst)]] = false;
        work.erase(work.begin() + worst);
        continue;
      }
    }

    // KKT point.
    res.step = d;
    res.active = work;
    res.lambda = lambda;
    res.ball_multiplier = tau;
    Eigen::VectorXd resid = stat;
    if (!work.empty()) resid += At * lambda;
    res.kkt_residual = resid.cwiseAbs().maxCoeff();
    res.model_decrease = -(0.5 * d.dot(Hs * d) + r.dot(d));
    if (res.model_decrease < 0.0) {
      // The zero step is always feasible; never report an ascent step.
      res.step.setZero();
      res.model_decrease = 0.0;
    }
    return res;
  }

  res.step = d;
  res.active = work;
  res.stalled = true;
  res.model_decrease = std::max(0.0, -(0.5 * d.dot(Hs * d) + r.dot(d)));
  if (res.model_decrease == 0.0) res.step.setZero();
  return res;
}

}  // namespace otshape

#endif  // OTSHAPE_QP_HPP_
