#ifndef OTSHAPE_CONSTRAINTS_HPP_
#define OTSHAPE_CONSTRAINTS_HPP_

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Sparse>

#include "otshape/errors.hpp"
#include "otshape/mesh.hpp"

namespace otshape {

// Sparse inequality system L z <= rhs over z = (g [, beta]) where beta are
// Afriat subgradient variables appended after the g block.
struct LinearConstraintSet {
  enum class Form { SecondDifference, Afriat };

  Eigen::SparseMatrix<double, Eigen::RowMajor> rows;
  Eigen::VectorXd rhs;
  Form form = Form::SecondDifference;
  Eigen::Index n_var = 0;  // g variables
  Eigen::Index n_aux = 0;  // beta variables
  std::vector<Eigen::Index> center;  // mesh index a second-difference row is centered at

  Eigen::Index count() const { return rows.rows(); }

  // Worst signed value of L z - rhs (negative = slack everywhere).
  double max_violation(const Eigen::VectorXd& z) const {
    if (count() == 0) return 0.0;
    return (rows * z - rhs).maxCoeff();
  }
};

// Position of mesh index i in a vector with index k removed.
inline Eigen::Index omitted_pos(Eigen::Index i, Eigen::Index k) {
  return i < k ? i : i - 1;
}

inline int sign_of(double x) { return x >= 0.0 ? 1 : -1; }

// Linear inequalities encoding concavity of sgn(rho) * g over the mesh
// interior. Rows referencing the omitted index k are dropped; pass nullopt
// to constrain a full-length g (warm-start projections do).
//
// d = 1 uses local second differences. Afriat's supporting-hyperplane form
// (required for d = 2, where local differences do not characterize
// concavity) keeps one subgradient beta_j per point after eliminating the
// intercepts via g_j = alpha_j + beta_j' a_j.
inline LinearConstraintSet concavity_rows(const Mesh& mesh, double rho,
                                          LinearConstraintSet::Form form,
                                          std::optional<Eigen::Index> omit_k = std::nullopt) {
  mesh.validate();
  const Eigen::Index m = mesh.size();
  const double sgn = static_cast<double>(sign_of(rho));
  const Eigen::Index k = omit_k.value_or(-1);
  const Eigen::Index n_var = omit_k ? m - 1 : m;
  const auto pos = [&](Eigen::Index i) { return omit_k ? omitted_pos(i, k) : i; };

  LinearConstraintSet out;
  out.form = form;
  out.n_var = n_var;

  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> rhs;

  if (form == LinearConstraintSet::Form::SecondDifference) {
    if (mesh.dim != 1) throw ParameterError("second-difference rows require d = 1");
    for (Eigen::Index c = 1; c + 1 < m; ++c) {
      if (omit_k && (c - 1 == k || c == k || c + 1 == k)) continue;
      const Eigen::Index r = static_cast<Eigen::Index>(rhs.size());
      trips.emplace_back(r, pos(c - 1), sgn * 1.0);
      trips.emplace_back(r, pos(c), sgn * -2.0);
      trips.emplace_back(r, pos(c + 1), sgn * 1.0);
      rhs.push_back(0.0);
      out.center.push_back(c);
    }
  } else {
    if (mesh.dim < 1 || mesh.dim > 2) throw ParameterError("Afriat rows require d = 1 or 2");
    const int d = mesh.dim;
    out.n_aux = n_var * d;
    const auto beta_col = [&](Eigen::Index j, int axis) { return n_var + pos(j) * d + axis; };
    for (Eigen::Index j = 0; j < m; ++j) {
      if (omit_k && j == k) continue;
      for (Eigen::Index i = 0; i < m; ++i) {
        if (i == j || (omit_k && i == k)) continue;
        const Eigen::Index r = static_cast<Eigen::Index>(rhs.size());
        trips.emplace_back(r, pos(i), sgn * 1.0);
        trips.emplace_back(r, pos(j), sgn * -1.0);
        for (int axis = 0; axis < d; ++axis) {
          const double coef = mesh.points(j, axis) - mesh.points(i, axis);
          if (coef != 0.0) trips.emplace_back(r, beta_col(j, axis), sgn * coef);
        }
        rhs.push_back(0.0);
      }
    }
  }

  out.rows.resize(static_cast<Eigen::Index>(rhs.size()), n_var + out.n_aux);
  out.rows.setFromTriplets(trips.begin(), trips.end());
  out.rhs = Eigen::Map<const Eigen::VectorXd>(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
  return out;
}

// Generalized constraint interface: alpha maps g to f_{-k}, beta rows bound
// the feasible cone, both with analytic derivatives. The omitted index is
// pinned by the construction rather than selected per iterate.
struct GeneralizedConstraint {
  std::string name;
  Eigen::Index mesh_size = 0;
  Eigen::Index fixed_k = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> alpha;
  std::function<Eigen::SparseMatrix<double>(const Eigen::VectorXd&)> alpha_jacobian;
  // Sum of weight_j * Hess(alpha_j) at g.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>
      weighted_alpha_hessian;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> alpha_inverse;
  std::function<LinearConstraintSet()> shape_rows;
};

class ShapeConstraint {
 public:
  enum class Kind { RhoConcave, LogConcave, Generalized };

  static ShapeConstraint rho_concave(double rho) {
    if (rho == 0.0) {
      throw ParameterError("rho = 0 is the log-concave case; use log_concave()");
    }
    ShapeConstraint c;
    c.kind_ = Kind::RhoConcave;
    c.rho_ = rho;
    return c;
  }

  static ShapeConstraint log_concave() {
    ShapeConstraint c;
    c.kind_ = Kind::LogConcave;
    return c;
  }

  static ShapeConstraint generalized(GeneralizedConstraint gen) {
    ShapeConstraint c;
    c.kind_ = Kind::Generalized;
    c.gen_ = std::move(gen);
    return c;
  }

  Kind kind() const { return kind_; }
  double rho() const { return rho_; }
  const GeneralizedConstraint& gen() const { return *gen_; }
  bool has_fixed_k() const { return kind_ == Kind::Generalized; }
  Eigen::Index fixed_k() const { return gen_->fixed_k; }

  // Sign convention for concavity rows: sgn(rho) with the log case as the
  // rho -> 0+ limit.
  double row_sign() const { return kind_ == Kind::RhoConcave ? sign_of(rho_) : 1.0; }

  std::string describe() const {
    switch (kind_) {
      case Kind::RhoConcave:
        return "rho:" + std::to_string(rho_);
      case Kind::LogConcave:
        return "logconcave";
      case Kind::Generalized:
        return gen_->name;
    }
    return "?";
  }

 private:
  Kind kind_ = Kind::LogConcave;
  double rho_ = 0.0;
  std::optional<GeneralizedConstraint> gen_;
};

// g := f^rho, log f, or the numeric inverse of alpha.
inline Eigen::VectorXd to_g(const Eigen::VectorXd& f_minus_k, const ShapeConstraint& c) {
  if ((f_minus_k.array() <= 0.0).any()) {
    throw InputError("to_g: density values must be strictly positive");
  }
  switch (c.kind()) {
    case ShapeConstraint::Kind::RhoConcave:
      return f_minus_k.array().pow(c.rho());
    case ShapeConstraint::Kind::LogConcave:
      return f_minus_k.array().log();
    case ShapeConstraint::Kind::Generalized:
      return c.gen().alpha_inverse(f_minus_k);
  }
  throw ParameterError("unknown constraint kind");
}

struct FromG {
  Eigen::VectorXd f_minus_k;
  double f_k = 0.0;
  // f_k > 0; a violation is a line-search signal, not an error.
  bool mass_feasible = false;
};

// f_{-k} = g^(1/rho) (or exp(g), alpha(g)); f_k mops up the remaining mass.
inline FromG from_g(const Eigen::VectorXd& g, const ShapeConstraint& c,
                    double total_mass = -1.0) {
  FromG out;
  switch (c.kind()) {
    case ShapeConstraint::Kind::RhoConcave:
      if ((g.array() <= 0.0).any()) throw InputError("from_g: g must stay positive");
      out.f_minus_k = g.array().pow(1.0 / c.rho());
      break;
    case ShapeConstraint::Kind::LogConcave:
      out.f_minus_k = g.array().exp();
      break;
    case ShapeConstraint::Kind::Generalized:
      out.f_minus_k = c.gen().alpha(g);
      break;
  }
  const double mass = total_mass > 0.0 ? total_mass : static_cast<double>(g.size() + 1);
  out.f_k = mass - out.f_minus_k.sum();
  out.mass_feasible = out.f_k > 0.0 && out.f_minus_k.allFinite() &&
                      (out.f_minus_k.array() > 0.0).all();
  return out;
}

inline Eigen::VectorXd assemble_full_density(const Eigen::VectorXd& f_minus_k, double f_k,
                                             Eigen::Index k) {
  Eigen::VectorXd f(f_minus_k.size() + 1);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (i == k) {
      f[i] = f_k;
    } else {
      f[i] = f_minus_k[omitted_pos(i, k)];
    }
  }
  return f;
}

inline Eigen::VectorXd drop_index(const Eigen::VectorXd& f, Eigen::Index k) {
  Eigen::VectorXd out(f.size() - 1);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    if (i != k) out[omitted_pos(i, k)] = f[i];
  }
  return out;
}

// Myerson regularity: the virtual valuation x - (1 - F(x))/f(x) is monotone
// iff g(x) = 1/(1 - F(x)) is convex. Discretized with g anchored at
// g_0 = 1 (F = 0 at the left mesh edge) and forward differences
//   f_j = m (g_{j+1} - g_j) / g_j^2,
// the factor m absorbing the mesh spacing so the sum-to-m convention is
// reachable. The free variables are g_1..g_{m-1}; the omitted density index
// is pinned to the last mesh point. The forward-difference orientation keeps
// densities nonnegative for increasing g.
inline ShapeConstraint myerson_constraint(const Mesh& mesh) {
  mesh.validate();
  if (mesh.dim != 1) throw ParameterError("myerson constraint requires d = 1");
  const Eigen::Index m = mesh.size();
  const double scale = static_cast<double>(m);

  GeneralizedConstraint gen;
  gen.name = "myerson";
  gen.mesh_size = m;
  gen.fixed_k = m - 1;

  const auto g_at = [](const Eigen::VectorXd& z, Eigen::Index mesh_idx) {
    return mesh_idx == 0 ? 1.0 : z[mesh_idx - 1];
  };

  gen.alpha = [m, scale, g_at](const Eigen::VectorXd& z) {
    if (z.size() != m - 1) throw InputError("myerson alpha: bad length");
    Eigen::VectorXd f(m - 1);
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
      const double p = g_at(z, j);
      const double q = g_at(z, j + 1);
      if (p <= 0.0) throw InputError("myerson alpha: g must stay positive");
      f[j] = scale * (q - p) / (p * p);
    }
    return f;
  };

  gen.alpha_jacobian = [m, scale, g_at](const Eigen::VectorXd& z) {
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
      const double p = g_at(z, j);
      const double q = g_at(z, j + 1);
      // d f_j / d g_{j+1} and d f_j / d g_j; g_0 is pinned.
      trips.emplace_back(j, j, scale / (p * p));
      if (j >= 1) trips.emplace_back(j, j - 1, scale * (p - 2.0 * q) / (p * p * p));
    }
    Eigen::SparseMatrix<double> jac(m - 1, m - 1);
    jac.setFromTriplets(trips.begin(), trips.end());
    return jac;
  };

  gen.weighted_alpha_hessian = [m, scale, g_at](const Eigen::VectorXd& z,
                                                const Eigen::VectorXd& weights) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m - 1, m - 1);
    for (Eigen::Index j = 1; j + 1 < m; ++j) {  // j = 0 has a constant base point
      const double p = g_at(z, j);
      const double q = g_at(z, j + 1);
      const double w = weights[j];
      const double p3 = p * p * p;
      h(j - 1, j - 1) += w * scale * (6.0 * q - 2.0 * p) / (p3 * p);
      h(j - 1, j) += w * scale * (-2.0) / p3;
      h(j, j - 1) += w * scale * (-2.0) / p3;
    }
    return h;
  };

  gen.alpha_inverse = [m, scale](const Eigen::VectorXd& f) {
    if (f.size() != m - 1) throw InputError("myerson inverse: bad length");
    Eigen::VectorXd z(m - 1);
    double g = 1.0;
    for (Eigen::Index j = 0; j + 1 < m; ++j) {
      g += f[j] * g * g / scale;
      if (!(g > 0.0) || !std::isfinite(g)) {
        throw NumericalError("myerson inverse: g left its domain");
      }
      z[j] = g;
    }
    return z;
  };

  gen.shape_rows = [m]() {
    // Convexity of g at interior points plus the anchor g_1 >= g_0 = 1,
    // which keeps g (and hence f) nondecreasing.
    std::vector<Eigen::Triplet<double>> trips;
    std::vector<double> rhs;
    LinearConstraintSet out;
    out.form = LinearConstraintSet::Form::SecondDifference;
    out.n_var = m - 1;
    for (Eigen::Index c = 1; c + 1 < m; ++c) {
      const Eigen::Index r = static_cast<Eigen::Index>(rhs.size());
      // -(g_{c-1} - 2 g_c + g_{c+1}) <= 0 in the z = g_1.. variables
      if (c == 1) {
        trips.emplace_back(r, 0, 2.0);
        trips.emplace_back(r, 1, -1.0);
        rhs.push_back(1.0);  // g_0 = 1 moves to the right-hand side
      } else {
        trips.emplace_back(r, c - 2, -1.0);
        trips.emplace_back(r, c - 1, 2.0);
        trips.emplace_back(r, c, -1.0);
        rhs.push_back(0.0);
      }
      out.center.push_back(c);
    }
    {
      const Eigen::Index r = static_cast<Eigen::Index>(rhs.size());
      trips.emplace_back(r, 0, -1.0);
      rhs.push_back(-1.0);
    }
    out.rows.resize(static_cast<Eigen::Index>(rhs.size()), m - 1);
    out.rows.setFromTriplets(trips.begin(), trips.end());
    out.rhs = Eigen::Map<const Eigen::VectorXd>(rhs.data(),
                                                static_cast<Eigen::Index>(rhs.size()));
    return out;
  };

  return ShapeConstraint::generalized(std::move(gen));
}

// Rows for the solver: k-omitted variables for the builtin kinds, the
// constraint's own system for generalized ones.
inline LinearConstraintSet shape_rows(const ShapeConstraint& c, const Mesh& mesh,
                                      Eigen::Index k) {
  if (c.kind() == ShapeConstraint::Kind::Generalized) return c.gen().shape_rows();
  const auto form = mesh.dim == 1 ? LinearConstraintSet::Form::SecondDifference
                                  : LinearConstraintSet::Form::Afriat;
  return concavity_rows(mesh, c.kind() == ShapeConstraint::Kind::RhoConcave ? c.rho() : 0.0,
                        form, k);
}

struct FeasibilityReport {
  bool feasible = false;
  double max_violation = 0.0;
};

namespace detail {

// Least-squares local slopes used as Afriat subgradients when no beta is
// available (d = 2 standalone checks). Sufficient in practice; a row failure
// under these slopes is treated as infeasible.
inline Eigen::VectorXd heuristic_beta(const Eigen::VectorXd& g, const Mesh& mesh) {
  const Eigen::Index m = mesh.size();
  const int d = mesh.dim;
  Eigen::VectorXd beta(m * d);
  const Eigen::Index n1 = d == 2 ? mesh.axes[1].size() : 1;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (int axis = 0; axis < d; ++axis) {
      const Eigen::Index stride = (axis == 0 && d == 2) ? n1 : 1;
      const Eigen::Index axis_len = d == 2 ? mesh.axes[axis].size() : m;
      const Eigen::Index coord =
          d == 2 ? (axis == 0 ? j / n1 : j % n1) : j;
      const double h = mesh.spacing[axis];
      double slope;
      if (coord == 0) {
        slope = (g[j + stride] - g[j]) / h;
      } else if (coord == axis_len - 1) {
        slope = (g[j] - g[j - stride]) / h;
      } else {
        slope = (g[j + stride] - g[j - stride]) / (2.0 * h);
      }
      beta[j * d + axis] = slope;
    }
  }
  return beta;
}

}  // namespace detail

// Evaluate the constraint rows at to_g(f); the worst signed row value is
// reported. Rows touching omit_k are skipped when a k is supplied.
inline FeasibilityReport check_feasibility(const DiscreteDensity& f, const ShapeConstraint& c,
                                           const Mesh& mesh, double tol,
                                           std::optional<Eigen::Index> omit_k = std::nullopt) {
  FeasibilityReport report;
  if (c.kind() == ShapeConstraint::Kind::Generalized) {
    const Eigen::Index k = c.fixed_k();
    const Eigen::VectorXd z = to_g(drop_index(f.values, k), c);
    const LinearConstraintSet rows = c.gen().shape_rows();
    report.max_violation = rows.max_violation(z);
  } else {
    const Eigen::VectorXd g = to_g(f.values, c);  // transform on the full mesh
    const auto form = mesh.dim == 1 ? LinearConstraintSet::Form::SecondDifference
                                    : LinearConstraintSet::Form::Afriat;
    LinearConstraintSet rows =
        concavity_rows(mesh, c.kind() == ShapeConstraint::Kind::RhoConcave ? c.rho() : 0.0,
                       form, std::nullopt);
    Eigen::VectorXd z = g;
    if (form == LinearConstraintSet::Form::Afriat) {
      Eigen::VectorXd beta = detail::heuristic_beta(g, mesh);
      z.conservativeResize(g.size() + beta.size());
      z.tail(beta.size()) = beta;
    }
    if (omit_k) {
      // Skip rows referencing the omitted index.
      double worst = -std::numeric_limits<double>::infinity();
      const Eigen::VectorXd vals = rows.rows * z - rows.rhs;
      for (Eigen::Index r = 0; r < rows.count(); ++r) {
        bool touches = false;
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(rows.rows, r); it;
             ++it) {
          if (it.col() == *omit_k) touches = true;
        }
        if (!touches) worst = std::max(worst, vals[r]);
      }
      report.max_violation = worst;
    } else {
      report.max_violation = rows.max_violation(z);
    }
  }
  report.feasible = report.max_violation <= tol;
  return report;
}

// Parse "rho:-0.5", "logconcave", "myerson".
inline ShapeConstraint parse_constraint(const std::string& text, const Mesh& mesh) {
  if (text == "logconcave") return ShapeConstraint::log_concave();
  if (text == "myerson") return myerson_constraint(mesh);
  if (text.rfind("rho:", 0) == 0) {
    const std::string num = text.substr(4);
    try {
      std::size_t used = 0;
      const double rho = std::stod(num, &used);
      if (used != num.size()) throw std::invalid_argument(num);
      return ShapeConstraint::rho_concave(rho);
    } catch (const std::exception&) {
      throw ParameterError("cannot parse rho value in constraint '" + text + "'");
    }
  }
  throw ParameterError("unknown constraint '" + text +
                       "' (expected rho:<value>, logconcave, or myerson)");
}

}  // namespace otshape

#endif  // OTSHAPE_CONSTRAINTS_HPP_
