#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "grammage/domain.hpp"
#include "grammage/rng.hpp"

namespace grammage {

using ClassDistribution = std::vector<double>;

// Dense training view: features, label indices into `classes`.
struct TrainingData {
  std::vector<FeatureVector> x;
  std::vector<std::size_t> y;
  std::vector<GrammageClass> classes;

  std::size_t size() const { return x.size(); }
  std::size_t n_classes() const { return classes.size(); }

  static TrainingData from(const Dataset& ds) { return from(ds, ds.classes()); }

  static TrainingData from(const Dataset& ds, const std::vector<GrammageClass>& classes) {
    TrainingData t;
    t.classes = classes;
    t.x.reserve(ds.size());
    t.y.reserve(ds.size());
    for (const auto& r : ds) {
      auto it = std::lower_bound(classes.begin(), classes.end(), r.label);
      if (it == classes.end() || *it != r.label)
        throw DomainError("label " + std::to_string(r.label.value()) + " not in class list");
      t.x.push_back(r.measurement.features());
      t.y.push_back(static_cast<std::size_t>(it - classes.begin()));
    }
    return t;
  }
};

inline double gini(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  if (!(total > 0.0)) throw DomainError("gini of empty node");
  double sq = 0.0;
  for (double c : counts) sq += (c / total) * (c / total);
  return 1.0 - sq;
}

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double decrease = 0.0;
};

inline constexpr double kSplitEpsilon = 1e-12;

// Exhaustive midpoint search over `features` (tried in ascending order).
// A candidate replaces the incumbent only if strictly better by more than
// kSplitEpsilon, which gives ties to the lower feature, then lower threshold.
// Rows with zero weight are ignored.
inline std::optional<Split> best_split(const TrainingData& data, const std::vector<std::size_t>& rows,
                                       const std::vector<double>& weights, std::vector<std::size_t> features) {
  const std::size_t k = data.n_classes();
  std::vector<std::size_t> live;
  live.reserve(rows.size());
  std::vector<double> total(k, 0.0);
  double w_total = 0.0;
  for (auto i : rows) {
    if (weights[i] > 0.0) {
      live.push_back(i);
      total[data.y[i]] += weights[i];
      w_total += weights[i];
    }
  }
  if (live.size() < 2) return std::nullopt;
  const double parent = gini(total);
  if (parent <= 0.0) return std::nullopt;

  std::sort(features.begin(), features.end());
  std::optional<Split> best;
  std::vector<double> left(k);
  for (auto f : features) {
    std::sort(live.begin(), live.end(), [&](std::size_t a, std::size_t b) {
      if (data.x[a][f] != data.x[b][f]) return data.x[a][f] < data.x[b][f];
      return a < b;
    });
    std::fill(left.begin(), left.end(), 0.0);
    double w_left = 0.0;
    for (std::size_t j = 0; j + 1 < live.size(); ++j) {
      const auto i = live[j];
      left[data.y[i]] += weights[i];
      w_left += weights[i];
      const double here = data.x[i][f];
      const double next = data.x[live[j + 1]][f];
      if (!(here < next)) continue;

      double sq_l = 0.0, sq_r = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double r = total[c] - left[c];
        sq_l += left[c] * left[c];
        sq_r += r * r;
      }
      const double w_right = w_total - w_left;
      // Weighted child impurity: (wL*gL + wR*gR) / W.
      const double child = ((w_left - sq_l / w_left) + (w_right - sq_r / w_right)) / w_total;
      const double decrease = parent - child;
      if (decrease > kSplitEpsilon && (!best || decrease > best->decrease + kSplitEpsilon)) {
        double t = here + (next - here) / 2.0;
        if (!(t > here)) t = next;  // adjacent doubles
        best = Split{f, t, decrease};
      }
    }
  }
  return best;
}

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::vector<double> counts;        // weighted class counts reaching the node
  ClassDistribution distribution;    // normalized counts

  bool leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct TreeParams {
  int max_depth = 3;
  std::size_t features_per_split = kFeatureCount;
  bool operator==(const TreeParams&) const = default;
};

// Nodes in preorder; nodes[0] is the root.
struct TreeModel {
  std::vector<TreeNode> nodes;
  std::vector<GrammageClass> classes;
  int max_depth = 0;

  const TreeNode& leaf_for(const FeatureVector& x) const {
    std::size_t i = 0;
    while (!nodes[i].leaf()) {
      const auto& n = nodes[i];
      i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
    }
    return nodes[i];
  }

  const ClassDistribution& predict_proba(const FeatureVector& x) const { return leaf_for(x).distribution; }

  int depth() const {
    std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
    int d = 0;
    while (!stack.empty()) {
      auto [i, level] = stack.back();
      stack.pop_back();
      d = std::max(d, level);
      if (!nodes[i].leaf()) {
        stack.push_back({static_cast<std::size_t>(nodes[i].left), level + 1});
        stack.push_back({static_cast<std::size_t>(nodes[i].right), level + 1});
      }
    }
    return d;
  }

  bool operator==(const TreeModel&) const = default;
};

inline std::size_t argmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Summed in class order so a reloaded model reproduces the same bits.
inline ClassDistribution normalize_counts(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  ClassDistribution p(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) p[c] = counts[c] / total;
  return p;
}

namespace detail {

inline std::vector<std::size_t> draw_features(std::size_t count, Rng& rng) {
  std::vector<std::size_t> all(kFeatureCount);
  std::iota(all.begin(), all.end(), std::size_t{0});
  count = std::clamp<std::size_t>(count, 1, kFeatureCount);
  if (count == kFeatureCount) return all;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(kFeatureCount - i));
    std::swap(all[i], all[j]);
  }
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

inline std::int32_t grow(TreeModel& tree, const TrainingData& data, const std::vector<double>& weights,
                         std::vector<std::size_t> rows, int depth, const TreeParams& params, Rng& rng) {
  TreeNode node;
  node.counts.assign(data.n_classes(), 0.0);
  for (auto i : rows) node.counts[data.y[i]] += weights[i];
  node.distribution = normalize_counts(node.counts);

  const auto index = static_cast<std::int32_t>(tree.nodes.size());
  tree.nodes.push_back(node);

  const bool pure = std::count_if(node.counts.begin(), node.counts.end(), [](double c) { return c > 0.0; }) <= 1;
  if (depth >= params.max_depth || pure) return index;

  auto features = draw_features(params.features_per_split, rng);
  auto split = best_split(data, rows, weights, features);
  if (!split) return index;

  std::vector<std::size_t> left, right;
  for (auto i : rows) {
    if (!(weights[i] > 0.0)) continue;
    (data.x[i][split->feature] < split->threshold ? left : right).push_back(i);
  }
  tree.nodes[index].feature = static_cast<int>(split->feature);
  tree.nodes[index].threshold = split->threshold;
  const auto l = grow(tree, data, weights, std::move(left), depth + 1, params, rng);
  tree.nodes[index].left = l;
  const auto r = grow(tree, data, weights, std::move(right), depth + 1, params, rng);
  tree.nodes[index].right = r;
  return index;
}

}  // namespace detail

inline TreeModel train_tree(const TrainingData& data, const std::vector<double>& weights, const TreeParams& params,
                            std::uint64_t seed) {
  if (data.size() == 0) throw DomainError("cannot train a tree on an empty dataset");
  if (weights.size() != data.size()) throw DomainError("weights and rows differ in length");
  if (params.max_depth < 0) throw DomainError("max_depth must be nonnegative");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("weights must be nonnegative and finite");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("weights sum to zero");

  TreeModel tree;
  tree.classes = data.classes;
  tree.max_depth = params.max_depth;
  std::vector<std::size_t> rows;
  rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (weights[i] > 0.0) rows.push_back(i);
  Rng rng(seed);
  detail::grow(tree, data, weights, std::move(rows), 0, params, rng);
  return tree;
}

inline TreeModel train_tree(const Dataset& ds, const TreeParams& params, std::uint64_t seed) {
  const auto data = TrainingData::from(ds);
  return train_tree(data, std::vector<double>(data.size(), 1.0), params, seed);
}

}  // namespace grammage
