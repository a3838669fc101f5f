#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "grammage/domain.hpp"

namespace grammage {

struct EnvelopeModel {
  Eigen::Vector3d mean;
  Eigen::Matrix3d covariance;
  Eigen::Matrix3d inverse_covariance;
};

inline Eigen::Vector3d to_vector(const RollMeasurement& m) { return {m.diameter, m.width, m.weight}; }

// Sample mean and ridge-regularized sample covariance.
inline EnvelopeModel fit_envelope(const std::vector<RollMeasurement>& xs) {
  if (xs.size() < kFeatureCount + 1)
    throw InsufficientDataError("envelope needs at least 4 rows, got " + std::to_string(xs.size()));
  const auto n = static_cast<double>(xs.size());

  EnvelopeModel m;
  m.mean.setZero();
  for (const auto& x : xs) m.mean += to_vector(x);
  m.mean /= n;

  m.covariance.setZero();
  for (const auto& x : xs) {
    const Eigen::Vector3d d = to_vector(x) - m.mean;
    m.covariance.noalias() += d * d.transpose();
  }
  m.covariance /= n - 1.0;

  const double lambda = 1e-6 * m.covariance.trace() / 3.0;
  m.covariance += lambda * Eigen::Matrix3d::Identity();

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(m.covariance, Eigen::EigenvaluesOnly);
  const double floor = std::max(lambda * 0.5, 1e-300);
  if (!(lambda > 0.0) || eig.eigenvalues().minCoeff() <= floor)
    throw NumericError("covariance is singular");

  m.inverse_covariance = m.covariance.inverse();
  const Eigen::Matrix3d residual = m.covariance * m.inverse_covariance - Eigen::Matrix3d::Identity();
  if (!(residual.cwiseAbs().maxCoeff() <= 1e-8)) throw NumericError("covariance inverse is ill-conditioned");
  return m;
}

inline EnvelopeModel fit_envelope(const Dataset& ds) {
  std::vector<RollMeasurement> xs;
  xs.reserve(ds.size());
  for (const auto& r : ds) xs.push_back(r.measurement);
  return fit_envelope(xs);
}

inline double mahalanobis(const RollMeasurement& x, const EnvelopeModel& m) {
  const Eigen::Vector3d d = to_vector(x) - m.mean;
  return std::sqrt(std::max(0.0, d.dot(m.inverse_covariance * d)));
}

struct OutlierSplit {
  Dataset inliers;
  Dataset outliers;
  std::vector<std::size_t> outlier_rows;  // ascending input indices
};

inline OutlierSplit filter_outliers(const Dataset& ds, double contamination = 0.20) {
  if (!(contamination >= 0.0 && contamination < 1.0)) throw DomainError("contamination must be in [0,1)");
  const std::size_t n = ds.size();
  const auto n_out = static_cast<std::size_t>(std::llround(contamination * static_cast<double>(n)));

  OutlierSplit out;
  std::vector<bool> is_out(n, false);
  if (n_out > 0) {
    const auto model = fit_envelope(ds);
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = mahalanobis(ds[i].measurement, model);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Farthest first; on equal distance the later row goes out first.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist[a] != dist[b]) return dist[a] > dist[b];
      return a > b;
    });
    for (std::size_t k = 0; k < n_out; ++k) is_out[order[k]] = true;
  }

  std::vector<std::size_t> in_rows;
  for (std::size_t i = 0; i < n; ++i) (is_out[i] ? out.outlier_rows : in_rows).push_back(i);
  out.inliers = ds.subset(in_rows);
  out.outliers = ds.subset(out.outlier_rows);
  return out;
}

}  // namespace grammage
