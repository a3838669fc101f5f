#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grammage/forest.hpp"
#include "grammage/rng.hpp"

namespace grammage {

// h_k = (K-1) * (log p_k - mean_j log p_j), with p clipped to [floor, 1].
inline std::vector<double> samme_r_scores(const ClassDistribution& p, double floor) {
  const std::size_t k = p.size();
  std::vector<double> logs(k);
  double mean = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    logs[c] = std::log(std::clamp(p[c], floor, 1.0));
    mean += logs[c];
  }
  mean /= static_cast<double>(k);
  for (auto& v : logs) v = static_cast<double>(k - 1) * (v - mean);
  return logs;
}

struct BoostParams {
  std::size_t n_stages = 10;
  double learning_rate = 1.0;
  ForestParams base{10, 1, 1};
  // Lower clip for base probabilities. Small floors let a single zero-probability
  // leaf veto a class with a huge negative score.
  double proba_floor = 1e-2;
  bool operator==(const BoostParams&) const = default;
};

struct BoostStage {
  ForestModel base;
  double weight = 1.0;
  double weighted_error = 0.0;
  bool operator==(const BoostStage&) const = default;
};

struct BoostModel {
  std::vector<BoostStage> stages;
  std::vector<GrammageClass> classes;
  BoostParams params;
  std::vector<std::string> warnings;

  std::vector<double> scores(const FeatureVector& x) const {
    std::vector<double> s(classes.size(), 0.0);
    for (const auto& st : stages) {
      const auto h = samme_r_scores(st.base.predict_proba(x), params.proba_floor);
      for (std::size_t c = 0; c < s.size(); ++c) s[c] += st.weight * h[c];
    }
    return s;
  }

  bool operator==(const BoostModel&) const = default;
};

struct BoostPrediction {
  GrammageClass label;
  std::vector<double> scores;
};

// Ties go to the lower class value (classes are sorted ascending).
inline BoostPrediction boost_predict(const BoostModel& m, const FeatureVector& x) {
  auto s = m.scores(x);
  return {m.classes[argmax(s)], std::move(s)};
}

inline ClassDistribution softmax(const std::vector<double>& s) {
  ClassDistribution p(s.size());
  const double hi = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += p[i] = std::exp(s[i] - hi);
  for (auto& v : p) v /= z;
  return p;
}

// Per-stage trace for instrumentation; weights_before are the weights the
// base forest was fitted with.
struct StageTrace {
  std::size_t stage;
  const std::vector<double>& weights_before;
  const std::vector<double>& weights_after;
  const std::vector<std::vector<double>>& proba;
  const std::vector<std::vector<double>>& scores;
  double weighted_error;
};

using BoostObserver = std::function<void(const StageTrace&)>;

inline BoostModel train_adaboost(const TrainingData& data, const BoostParams& params, std::uint64_t seed,
                                 const BoostObserver& observer = {}, unsigned n_threads = 1) {
  const std::size_t n = data.size();
  const std::size_t k = data.n_classes();
  if (n == 0) throw DomainError("cannot boost on an empty dataset");
  if (params.n_stages < 1) throw DomainError("n_stages must be at least 1");
  if (!(params.learning_rate > 0.0)) throw DomainError("learning_rate must be positive");
  if (!(params.proba_floor > 0.0 && params.proba_floor < 1.0)) throw DomainError("proba_floor must be in (0,1)");
  {
    std::vector<bool> seen(k, false);
    std::size_t distinct = 0;
    for (auto y : data.y)
      if (!seen[y]) seen[y] = true, ++distinct;
    if (distinct < 2) throw DomainError("boosting needs at least two classes present");
  }

  BoostModel model;
  model.classes = data.classes;
  model.params = params;

  const double kd = static_cast<double>(k);
  std::vector<double> w(n, 1.0 / static_cast<double>(n));
  std::vector<double> next(n);
  std::vector<std::vector<double>> proba(n), scores(n);
  const Rng root(seed);

  for (std::size_t m = 0; m < params.n_stages; ++m) {
    BoostStage stage;
    stage.base = train_forest(data, w, params.base, root.split(m).seed(), n_threads);
    stage.weight = params.learning_rate;

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      proba[i] = stage.base.predict_proba(data.x[i]);
      scores[i] = samme_r_scores(proba[i], params.proba_floor);
      if (argmax(proba[i]) != data.y[i]) err += w[i];
    }
    stage.weighted_error = err;
    if (!(err < (kd - 1.0) / kd))
      model.warnings.push_back("stage " + std::to_string(m) + ": weighted error " + std::to_string(err) +
                               " not below (K-1)/K");

    // y_k = 1 for the true class, -1/(K-1) otherwise.
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double yk = c == data.y[i] ? 1.0 : -1.0 / (kd - 1.0);
        dot += yk * std::log(std::clamp(proba[i][c], params.proba_floor, 1.0));
      }
      next[i] = w[i] * std::exp(-params.learning_rate * (kd - 1.0) / kd * dot);
      total += next[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) throw NumericError("boosting weights degenerated");
    for (auto& v : next) {
      v /= total;
      if (!(v > 0.0)) throw NumericError("boosting weight underflow");
    }

    if (observer) observer(StageTrace{m, w, next, proba, scores, err});
    model.stages.push_back(std::move(stage));
    w.swap(next);
    if (err == 0.0) break;
  }
  return model;
}

}  // namespace grammage
