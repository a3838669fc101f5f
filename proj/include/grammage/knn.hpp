#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "grammage/tree.hpp"

namespace grammage {

struct Scaler {
  FeatureVector mean{};
  FeatureVector stddev{1.0, 1.0, 1.0};

  FeatureVector apply(const FeatureVector& x) const {
    FeatureVector z;
    for (std::size_t i = 0; i < kFeatureCount; ++i) z[i] = (x[i] - mean[i]) / stddev[i];
    return z;
  }
  bool operator==(const Scaler&) const = default;
};

// Population mean and standard deviation; a constant feature gets std 1.
inline Scaler fit_scaler(const std::vector<FeatureVector>& xs) {
  if (xs.empty()) throw DomainError("cannot fit a scaler on no rows");
  Scaler s;
  const auto n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    double mu = 0.0;
    for (const auto& x : xs) mu += x[i];
    mu /= n;
    double var = 0.0;
    for (const auto& x : xs) var += (x[i] - mu) * (x[i] - mu);
    const double sd = std::sqrt(var / n);
    s.mean[i] = mu;
    s.stddev[i] = sd > 0.0 ? sd : 1.0;
  }
  return s;
}

struct KnnModel {
  Scaler scaler;
  std::vector<FeatureVector> train;  // scaled
  std::vector<std::size_t> y;
  std::vector<GrammageClass> classes;
  std::size_t k = 5;
  bool operator==(const KnnModel&) const = default;
};

inline KnnModel train_knn(const TrainingData& data, std::size_t k = 5) {
  if (data.size() == 0) throw DomainError("kNN needs a nonempty training set");
  if (k < 1 || k > data.size()) throw DomainError("k must be in [1, n]");
  KnnModel m;
  m.scaler = fit_scaler(data.x);
  m.train.reserve(data.size());
  for (const auto& x : data.x) m.train.push_back(m.scaler.apply(x));
  m.y = data.y;
  m.classes = data.classes;
  m.k = k;
  return m;
}

struct KnnPrediction {
  GrammageClass label;
  ClassDistribution distribution;
};

// Vote fractions over the k nearest rows. Distance ties go to the lower
// training index; vote ties go to the lower class value.
inline KnnPrediction knn_predict(const KnnModel& m, const FeatureVector& x) {
  const auto z = m.scaler.apply(x);
  std::vector<std::pair<double, std::size_t>> d(m.train.size());
  for (std::size_t i = 0; i < m.train.size(); ++i) {
    double s = 0.0;
    for (std::size_t f = 0; f < kFeatureCount; ++f) s += (m.train[i][f] - z[f]) * (m.train[i][f] - z[f]);
    d[i] = {s, i};
  }
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(m.k), d.end());
  ClassDistribution p(m.classes.size(), 0.0);
  for (std::size_t j = 0; j < m.k; ++j) p[m.y[d[j].second]] += 1.0;
  for (auto& v : p) v /= static_cast<double>(m.k);
  return {m.classes[argmax(p)], std::move(p)};
}

}  // namespace grammage
