#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "grammage/boost.hpp"
#include "grammage/forest.hpp"
#include "grammage/knn.hpp"
#include "grammage/tree.hpp"

namespace grammage {

enum class LearnerKind { Tree, Forest, AdaBoost, Knn };

inline const char* learner_name(LearnerKind k) {
  switch (k) {
    case LearnerKind::Tree: return "tree";
    case LearnerKind::Forest: return "forest";
    case LearnerKind::AdaBoost: return "adaboost";
    case LearnerKind::Knn: return "knn";
  }
  return "?";
}

inline LearnerKind parse_learner(std::string_view s) {
  if (s == "tree") return LearnerKind::Tree;
  if (s == "forest") return LearnerKind::Forest;
  if (s == "adaboost") return LearnerKind::AdaBoost;
  if (s == "knn") return LearnerKind::Knn;
  throw DomainError("unknown learner '" + std::string(s) + "'");
}

// One learner configuration. Only the block matching `kind` is used.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::AdaBoost;
  TreeParams tree{3, kFeatureCount};
  ForestParams forest{100, 3, 1};
  BoostParams boost{};
  std::size_t k = 5;

  static LearnerSpec of(LearnerKind kind) {
    LearnerSpec s;
    s.kind = kind;
    return s;
  }
  std::string name() const { return learner_name(kind); }
  bool operator==(const LearnerSpec&) const = default;
};

inline std::vector<LearnerSpec> default_comparison() {
  return {LearnerSpec::of(LearnerKind::Tree), LearnerSpec::of(LearnerKind::Forest),
          LearnerSpec::of(LearnerKind::AdaBoost), LearnerSpec::of(LearnerKind::Knn)};
}

struct Prediction {
  GrammageClass label;
  ClassDistribution distribution;  // boost: softmax of scores
  double confidence = 0.0;         // max entry of distribution
  std::vector<double> scores;      // boost only
};

struct Model {
  LearnerSpec spec;
  std::vector<GrammageClass> classes;
  std::uint64_t seed = 0;
  std::variant<TreeModel, ForestModel, BoostModel, KnnModel> impl;
  std::map<std::string, double> metrics;  // training snapshot

  Prediction predict(const FeatureVector& x) const {
    Prediction p;
    std::visit(
        [&](const auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, BoostModel>) {
            auto b = boost_predict(m, x);
            p.label = b.label;
            p.distribution = softmax(b.scores);
            p.scores = std::move(b.scores);
          } else if constexpr (std::is_same_v<T, KnnModel>) {
            auto r = knn_predict(m, x);
            p.label = r.label;
            p.distribution = std::move(r.distribution);
          } else {
            p.distribution = m.predict_proba(x);
            p.label = classes[argmax(p.distribution)];
          }
        },
        impl);
    p.confidence = *std::max_element(p.distribution.begin(), p.distribution.end());
    return p;
  }

  Prediction predict(const RollMeasurement& m) const { return predict(m.features()); }

  bool operator==(const Model&) const = default;
};

inline Model train_model(const LearnerSpec& spec, const TrainingData& data, std::uint64_t seed,
                         unsigned n_threads = 1) {
  Model m;
  m.spec = spec;
  m.classes = data.classes;
  m.seed = seed;
  const std::vector<double> uniform(data.size(), 1.0);
  switch (spec.kind) {
    case LearnerKind::Tree: m.impl = train_tree(data, uniform, spec.tree, seed); break;
    case LearnerKind::Forest: m.impl = train_forest(data, uniform, spec.forest, seed, n_threads); break;
    case LearnerKind::AdaBoost: m.impl = train_adaboost(data, spec.boost, seed, {}, n_threads); break;
    case LearnerKind::Knn: m.impl = train_knn(data, spec.k); break;
  }
  return m;
}

inline Model train_model(const LearnerSpec& spec, const Dataset& ds, std::uint64_t seed, unsigned n_threads = 1) {
  return train_model(spec, TrainingData::from(ds), seed, n_threads);
}

}  // namespace grammage
