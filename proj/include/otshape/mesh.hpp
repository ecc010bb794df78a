#ifndef OTSHAPE_MESH_HPP_
#define OTSHAPE_MESH_HPP_

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "otshape/errors.hpp"

namespace otshape {

// Uniform discretization grid of the density domain. For d=2 the grid is a
// tensor product of per-axis grids, flattened row-major (axis 0 slowest).
struct Mesh {
  Eigen::MatrixXd points;               // m x d
  Eigen::VectorXd spacing;              // per-dimension step
  int dim = 1;
  std::vector<Eigen::VectorXd> axes;    // per-dimension coordinates (tensor grids)

  Eigen::Index size() const { return points.rows(); }

  double squared_distance(Eigen::Index i, Eigen::Index j) const {
    return (points.row(i) - points.row(j)).squaredNorm();
  }

  // Indices on the boundary of the grid.
  std::vector<Eigen::Index> boundary_indices() const {
    std::vector<Eigen::Index> out;
    const Eigen::Index m = size();
    if (dim == 1) {
      out = {0, m - 1};
    } else {
      const Eigen::Index n0 = axes[0].size();
      const Eigen::Index n1 = axes[1].size();
      for (Eigen::Index i = 0; i < n0; ++i) {
        for (Eigen::Index j = 0; j < n1; ++j) {
          if (i == 0 || j == 0 || i == n0 - 1 || j == n1 - 1) {
            out.push_back(i * n1 + j);
          }
        }
      }
    }
    return out;
  }

  void validate() const {
    if (points.rows() < 2) throw InputError("mesh needs at least two points");
    if ((spacing.array() <= 0.0).any()) throw InputError("mesh spacing must be positive");
    if (dim == 1) {
      for (Eigen::Index i = 1; i < points.rows(); ++i) {
        if (points(i, 0) <= points(i - 1, 0)) {
          throw InputError("1-d mesh points must be strictly increasing");
        }
      }
    }
  }
};

inline Mesh make_mesh_1d(double lo, double hi, Eigen::Index m) {
  if (m < 2) throw ParameterError("mesh size must be at least 2");
  if (!(hi > lo)) throw InputError("mesh interval is empty");
  Mesh mesh;
  mesh.dim = 1;
  mesh.points.resize(m, 1);
  const double h = (hi - lo) / static_cast<double>(m - 1);
  for (Eigen::Index i = 0; i < m; ++i) mesh.points(i, 0) = lo + h * static_cast<double>(i);
  mesh.spacing = Eigen::VectorXd::Constant(1, h);
  mesh.axes = {mesh.points.col(0)};
  mesh.validate();
  return mesh;
}

inline Mesh make_mesh_2d(double lo0, double hi0, double lo1, double hi1, Eigen::Index m_side) {
  if (m_side < 2) throw ParameterError("mesh side must be at least 2");
  Mesh mesh;
  mesh.dim = 2;
  const double h0 = (hi0 - lo0) / static_cast<double>(m_side - 1);
  const double h1 = (hi1 - lo1) / static_cast<double>(m_side - 1);
  Eigen::VectorXd ax0(m_side), ax1(m_side);
  for (Eigen::Index i = 0; i < m_side; ++i) {
    ax0[i] = lo0 + h0 * static_cast<double>(i);
    ax1[i] = lo1 + h1 * static_cast<double>(i);
  }
  mesh.points.resize(m_side * m_side, 2);
  for (Eigen::Index i = 0; i < m_side; ++i) {
    for (Eigen::Index j = 0; j < m_side; ++j) {
      mesh.points(i * m_side + j, 0) = ax0[i];
      mesh.points(i * m_side + j, 1) = ax1[j];
    }
  }
  mesh.spacing.resize(2);
  mesh.spacing << h0, h1;
  mesh.axes = {ax0, ax1};
  mesh.validate();
  return mesh;
}

// Nonnegative values on the mesh, normalized so that the total is m
// (one unit of mass per cell).
struct DiscreteDensity {
  Eigen::VectorXd values;

  Eigen::Index size() const { return values.size(); }

  void validate() const {
    if (!values.allFinite()) throw InputError("density has non-finite entries");
    if ((values.array() < 0.0).any()) throw InputError("density has negative entries");
    const double target = static_cast<double>(values.size());
    if (std::abs(values.sum() - target) > 1e-8 * std::max(1.0, target)) {
      throw InputError("density must sum to the mesh size");
    }
  }
};

// Floor at eps then rescale to total mass m. IPFP divides by marginals, so
// strictly positive inputs are required downstream.
inline DiscreteDensity floor_and_normalize(const Eigen::VectorXd& raw, double eps = 1e-12) {
  if (!raw.allFinite()) throw InputError("density has non-finite entries");
  Eigen::VectorXd v = raw.cwiseMax(eps);
  const double total = v.sum();
  if (!(total > 0.0)) throw InputError("density has no mass");
  v *= static_cast<double>(v.size()) / total;
  return DiscreteDensity{std::move(v)};
}

}  // namespace otshape

#endif  // OTSHAPE_MESH_HPP_
