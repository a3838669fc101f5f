#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

#include "grammage/rng.hpp"
#include "grammage/tree.hpp"

namespace grammage {

struct ForestParams {
  std::size_t n_trees = 100;
  int max_depth = 3;
  std::size_t features_per_split = 1;
  bool operator==(const ForestParams&) const = default;
};

struct ForestModel {
  std::vector<TreeModel> trees;
  std::vector<std::uint64_t> tree_seeds;
  std::vector<GrammageClass> classes;
  ForestParams params;

  // Soft vote: mean of the tree distributions.
  ClassDistribution predict_proba(const FeatureVector& x) const {
    ClassDistribution p(classes.size(), 0.0);
    for (const auto& t : trees) {
      const auto& q = t.predict_proba(x);
      for (std::size_t c = 0; c < p.size(); ++c) p[c] += q[c];
    }
    for (auto& v : p) v /= static_cast<double>(trees.size());
    return p;
  }

  bool operator==(const ForestModel&) const = default;
};

// n draws with replacement, P(i) proportional to weights[i]. Returns the
// multiplicity of every row.
inline std::vector<double> weighted_bootstrap(const std::vector<double>& weights, Rng& rng) {
  const std::size_t n = weights.size();
  std::vector<double> cum(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) cum[i] = acc += weights[i];
  std::vector<double> counts(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform01() * acc;
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    auto i = static_cast<std::size_t>(it - cum.begin());
    while (!(weights[i] > 0.0)) --i;  // only reachable through rounding at the top end
    counts[i] += 1.0;
  }
  return counts;
}

inline std::uint64_t forest_tree_seed(std::uint64_t seed, std::size_t t) { return Rng(seed).split(t).seed(); }

inline TreeModel train_forest_tree(const TrainingData& data, const std::vector<double>& weights,
                                   const ForestParams& params, std::uint64_t tree_seed) {
  Rng boot = Rng(tree_seed).split(0);
  const auto counts = weighted_bootstrap(weights, boot);
  return train_tree(data, counts, TreeParams{params.max_depth, params.features_per_split},
                    Rng(tree_seed).split(1).seed());
}

// Trees are independent given their seeds, so n_threads only changes wall time.
inline ForestModel train_forest(const TrainingData& data, const std::vector<double>& weights,
                                const ForestParams& params, std::uint64_t seed, unsigned n_threads = 1) {
  if (data.size() == 0) throw DomainError("cannot train a forest on an empty dataset");
  if (params.n_trees == 0) throw DomainError("n_trees must be positive");
  if (weights.size() != data.size()) throw DomainError("weights and rows differ in length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be nonnegative and finite");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("weights sum to zero");

  ForestModel f;
  f.classes = data.classes;
  f.params = params;
  f.trees.resize(params.n_trees);
  f.tree_seeds.resize(params.n_trees);
  for (std::size_t t = 0; t < params.n_trees; ++t) f.tree_seeds[t] = forest_tree_seed(seed, t);

  n_threads = std::max(1u, std::min<unsigned>(n_threads, static_cast<unsigned>(params.n_trees)));
  if (n_threads == 1) {
    for (std::size_t t = 0; t < params.n_trees; ++t) f.trees[t] = train_forest_tree(data, weights, params, f.tree_seeds[t]);
    return f;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n_threads);
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < n_threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t t = next++; t < params.n_trees; t = next++)
          f.trees[t] = train_forest_tree(data, weights, params, f.tree_seeds[t]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return f;
}

inline ForestModel train_forest(const Dataset& ds, const ForestParams& params, std::uint64_t seed) {
  const auto data = TrainingData::from(ds);
  return train_forest(data, std::vector<double>(data.size(), 1.0), params, seed);
}

}  // namespace grammage
