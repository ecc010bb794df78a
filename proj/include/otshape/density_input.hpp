#ifndef OTSHAPE_DENSITY_INPUT_HPP_
#define OTSHAPE_DENSITY_INPUT_HPP_

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "otshape/errors.hpp"
#include "otshape/mesh.hpp"

namespace otshape {

// N observations in up to two dimensions, plus the per-dimension divisors
// applied by standardize() so outputs can be mapped back.
struct SampleSet {
  Eigen::MatrixXd rows;           // N x d
  Eigen::VectorXd scale_factors;  // d, all ones until standardized

  Eigen::Index count() const { return rows.rows(); }
  int dim() const { return static_cast<int>(rows.cols()); }

  void validate() const {
    if (rows.rows() < 2) throw InputError("need at least two observations");
    if (rows.cols() < 1 || rows.cols() > 2) throw InputError("only d = 1 or 2 is supported");
    if (!rows.allFinite()) throw InputError("samples contain non-finite values");
    if ((scale_factors.array() <= 0.0).any()) throw InputError("scale factors must be positive");
  }
};

inline SampleSet make_samples(const Eigen::MatrixXd& rows) {
  SampleSet s;
  s.rows = rows;
  s.scale_factors = Eigen::VectorXd::Ones(rows.cols());
  s.validate();
  return s;
}

// Bandwidth/regularization split and mesh size for one estimation run.
struct SmoothingPlan {
  double sigma = 0.0;   // KDE bandwidth
  double gamma = 0.0;   // entropic regularization
  Eigen::Index m = 0;   // mesh points (per side for d = 2)

  double total() const { return std::sqrt(sigma * sigma + gamma / 2.0); }
};

namespace detail {

// Type-7 quantile (linear interpolation between order statistics).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = p * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double robust_scale(const Eigen::VectorXd& column) {
  std::vector<double> sorted(column.data(), column.data() + column.size());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  const double mean = column.mean();
  const double sd =
      std::sqrt((column.array() - mean).square().sum() / static_cast<double>(column.size() - 1));
  const double scale = std::min(iqr / 1.349, sd);
  // Fall back to whichever is positive when ties collapse the IQR.
  if (scale > 0.0) return scale;
  return std::max(iqr / 1.349, sd);
}

}  // namespace detail

// Divide each dimension by min(IQR/1.349, sample sd) and record the factors.
inline SampleSet standardize(const SampleSet& samples) {
  samples.validate();
  SampleSet out = samples;
  for (int j = 0; j < samples.dim(); ++j) {
    const double scale = detail::robust_scale(samples.rows.col(j));
    if (!(scale > 0.0)) {
      throw InputError("dimension " + std::to_string(j) + " has zero dispersion");
    }
    out.rows.col(j) /= scale;
    out.scale_factors[j] *= scale;
  }
  return out;
}

// Scott-style rule scaled by 2/3, split so that gamma / sigma^2 = 8. The
// `factor` argument rescales the rule-of-thumb multiplier (2/3 by default).
inline SmoothingPlan bandwidth_rule(Eigen::Index n, int d, double factor = 2.0 / 3.0) {
  if (n < 1) throw ParameterError("sample count must be positive");
  if (d < 1 || d > 2) throw ParameterError("only d = 1 or 2 is supported");
  if (!(factor > 0.0)) throw ParameterError("bandwidth factor must be positive");
  SmoothingPlan plan;
  plan.sigma = std::pow(static_cast<double>(n), -1.0 / (d + 4.0)) / 3.0 * (factor / (2.0 / 3.0));
  plan.gamma = 8.0 * plan.sigma * plan.sigma;
  return plan;
}

// m = ceil(N^(1/5) d / sqrt(gamma/2)), clamped to [16, 2000]. For d = 2 the
// value is a per-side count and the clamp keeps the tensor grid within the
// dense-kernel limit.
inline Eigen::Index mesh_rule(Eigen::Index n, int d, double gamma) {
  if (!(gamma > 0.0)) throw ParameterError("gamma must be positive");
  const double target = std::pow(static_cast<double>(n), 0.2) * d / std::sqrt(gamma / 2.0);
  // Back off one ulp-scale before the ceiling so exact integers stay put.
  const double raw = std::ceil(target * (1.0 - 1e-12));
  Eigen::Index m = static_cast<Eigen::Index>(raw);
  m = std::max<Eigen::Index>(16, std::min<Eigen::Index>(2000, m));
  if (d == 2) m = std::min<Eigen::Index>(m, 44);  // 44^2 <= 2000
  return m;
}

// Uniform mesh over [min - 3T, max + 3T] per dimension, T = total smoothing.
inline Mesh build_mesh(const SampleSet& samples, const SmoothingPlan& plan) {
  samples.validate();
  if (plan.m < 2) throw ParameterError("plan has no mesh size");
  const double pad = 3.0 * plan.total();
  if (!(pad > 0.0)) throw ParameterError("plan has no smoothing");
  if (samples.dim() == 1) {
    const double lo = samples.rows.col(0).minCoeff() - pad;
    const double hi = samples.rows.col(0).maxCoeff() + pad;
    return make_mesh_1d(lo, hi, plan.m);
  }
  return make_mesh_2d(samples.rows.col(0).minCoeff() - pad, samples.rows.col(0).maxCoeff() + pad,
                      samples.rows.col(1).minCoeff() - pad, samples.rows.col(1).maxCoeff() + pad,
                      plan.m);
}

// Gaussian KDE evaluated on the mesh, floored and normalized to sum m.
// Product kernel for d = 2.
inline DiscreteDensity kde_on_mesh(const SampleSet& samples, double sigma, const Mesh& mesh) {
  if (!(sigma > 0.0)) throw ParameterError("sigma must be positive");
  samples.validate();
  if (samples.dim() != mesh.dim) throw InputError("sample/mesh dimension mismatch");
  const Eigen::Index m = mesh.size();
  const Eigen::Index n = samples.count();
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(m);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index i = 0; i < m; ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      acc += std::exp(-(mesh.points.row(i) - samples.rows.row(j)).squaredNorm() * inv2s2);
    }
    raw[i] = acc;
  }
  return floor_and_normalize(raw);
}

// Divide sum-to-m values by (m * cell volume) to obtain densities that
// Riemann-sum to one.
inline Eigen::VectorXd to_unit_integral(const DiscreteDensity& density, const Mesh& mesh) {
  const double cell = mesh.spacing.prod();
  return density.values / (static_cast<double>(density.size()) * cell);
}

// CSV ingestion: one observation per row, 1 or 2 numeric columns, optional
// header. Rows with NaN/Inf are collected and reported by number.
inline SampleSet read_sample_csv(const std::string& path);

}  // namespace otshape

#include "otshape/csv.hpp"

namespace otshape {

inline SampleSet read_sample_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  if (table.columns() < 1 || table.columns() > 2) {
    throw InputError(path + ": expected 1 or 2 numeric columns, found " +
                     std::to_string(table.columns()));
  }
  std::vector<std::string> bad;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns(); ++c) {
      if (!std::isfinite(table.cell(r, c))) {
        bad.push_back(std::to_string(table.file_row(r)));
        break;
      }
    }
  }
  if (!bad.empty()) {
    std::string msg = path + ": non-finite values in rows ";
    for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? ", " : "") + bad[i];
    throw InputError(msg);
  }
  Eigen::MatrixXd rows(table.rows(), table.columns());
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < table.columns(); ++c) {
      rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = table.cell(r, c);
    }
  }
  return make_samples(rows);
}

}  // namespace otshape

#endif  // OTSHAPE_DENSITY_INPUT_HPP_
