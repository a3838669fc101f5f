#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "grammage/model.hpp"

namespace grammage {

// Model file layout (all keys in this order, two-space indent, LF):
//
//   schema_version  integer, currently 1
//   learner         "tree" | "forest" | "adaboost" | "knn"
//   classes         ascending grammage values
//   seed            training seed
//   params          hyperparameters of `learner`
//   model           learner body (node arrays, stages, ...)
//   metrics         training snapshot, name -> number
//
// Tree node: {"feature", "threshold", "left", "right", "counts"} for internal
// nodes, {"counts"} for leaves. Leaf distributions are recomputed from counts.
// Doubles use the shortest text that reads back to the same value, so
// save(load(save(m))) == save(m) byte for byte.

inline constexpr int kModelSchemaVersion = 1;

class ModelLoadError : public Error {
public:
  enum class Kind { Malformed, Version, ClassMismatch, Invalid };
  ModelLoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

namespace io {

using json = nlohmann::ordered_json;

inline json tree_params_json(const TreeParams& p) {
  return json{{"max_depth", p.max_depth}, {"features_per_split", p.features_per_split}};
}
inline json forest_params_json(const ForestParams& p) {
  return json{{"n_trees", p.n_trees}, {"max_depth", p.max_depth}, {"features_per_split", p.features_per_split}};
}
inline json boost_params_json(const BoostParams& p) {
  return json{{"n_stages", p.n_stages},
              {"learning_rate", p.learning_rate},
              {"proba_floor", p.proba_floor},
              {"base", forest_params_json(p.base)}};
}

inline json tree_json(const TreeModel& t) {
  json nodes = json::array();
  for (const auto& n : t.nodes) {
    json j;
    if (!n.leaf()) {
      j["feature"] = n.feature;
      j["threshold"] = n.threshold;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    j["counts"] = n.counts;
    nodes.push_back(std::move(j));
  }
  return json{{"max_depth", t.max_depth}, {"nodes", std::move(nodes)}};
}

inline json forest_json(const ForestModel& f) {
  json trees = json::array();
  for (const auto& t : f.trees) trees.push_back(tree_json(t));
  return json{{"tree_seeds", f.tree_seeds}, {"trees", std::move(trees)}};
}

inline json boost_json(const BoostModel& b) {
  json stages = json::array();
  for (const auto& s : b.stages)
    stages.push_back(json{{"weight", s.weight}, {"weighted_error", s.weighted_error}, {"base", forest_json(s.base)}});
  return json{{"stages", std::move(stages)}, {"warnings", b.warnings}};
}

inline json knn_json(const KnnModel& k) {
  json rows = json::array();
  for (const auto& r : k.train) rows.push_back(r);
  return json{{"scaler", json{{"mean", k.scaler.mean}, {"stddev", k.scaler.stddev}}},
              {"train", std::move(rows)},
              {"labels", k.y}};
}

[[noreturn]] inline void fail(ModelLoadError::Kind kind, const std::string& what) { throw ModelLoadError(kind, what); }

inline const json& at(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(ModelLoadError::Kind::Malformed, std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return at(j, key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail(ModelLoadError::Kind::Malformed, std::string("field '") + key + "': " + e.what());
  }
}

inline TreeParams tree_params_from(const json& j) {
  return {get<int>(j, "max_depth"), get<std::size_t>(j, "features_per_split")};
}
inline ForestParams forest_params_from(const json& j) {
  return {get<std::size_t>(j, "n_trees"), get<int>(j, "max_depth"), get<std::size_t>(j, "features_per_split")};
}
inline BoostParams boost_params_from(const json& j) {
  BoostParams p;
  p.n_stages = get<std::size_t>(j, "n_stages");
  p.learning_rate = get<double>(j, "learning_rate");
  p.proba_floor = get<double>(j, "proba_floor");
  p.base = forest_params_from(at(j, "base"));
  return p;
}

inline void check_counts(const std::vector<double>& counts, std::size_t k) {
  if (counts.size() != k) fail(ModelLoadError::Kind::ClassMismatch, "node counts do not match the class list");
  double total = 0.0;
  for (double c : counts) {
    if (!(c >= 0.0)) fail(ModelLoadError::Kind::Invalid, "negative node count");
    total += c;
  }
  if (!(total > 0.0)) fail(ModelLoadError::Kind::Invalid, "empty node");
}

inline TreeModel tree_from(const json& j, const std::vector<GrammageClass>& classes) {
  TreeModel t;
  t.classes = classes;
  t.max_depth = get<int>(j, "max_depth");
  const auto& nodes = at(j, "nodes");
  if (!nodes.is_array() || nodes.empty()) fail(ModelLoadError::Kind::Malformed, "tree has no nodes");
  const auto n = static_cast<std::int32_t>(nodes.size());
  for (const auto& nj : nodes) {
    TreeNode node;
    node.counts = get<std::vector<double>>(nj, "counts");
    check_counts(node.counts, classes.size());
    node.distribution = normalize_counts(node.counts);
    if (nj.contains("feature")) {
      node.feature = get<int>(nj, "feature");
      node.threshold = get<double>(nj, "threshold");
      node.left = get<std::int32_t>(nj, "left");
      node.right = get<std::int32_t>(nj, "right");
      const auto self = static_cast<std::int32_t>(t.nodes.size());
      if (node.feature < 0 || node.feature >= static_cast<int>(kFeatureCount))
        fail(ModelLoadError::Kind::Invalid, "feature index out of range");
      // Preorder storage: children come strictly after their parent.
      if (node.left <= self || node.right <= self || node.left >= n || node.right >= n)
        fail(ModelLoadError::Kind::Invalid, "child index out of range");
    }
    t.nodes.push_back(std::move(node));
  }
  if (t.depth() > t.max_depth) fail(ModelLoadError::Kind::Invalid, "tree deeper than its max_depth");
  return t;
}

inline ForestModel forest_from(const json& j, const ForestParams& params, const std::vector<GrammageClass>& classes) {
  ForestModel f;
  f.classes = classes;
  f.params = params;
  f.tree_seeds = get<std::vector<std::uint64_t>>(j, "tree_seeds");
  const auto& trees = at(j, "trees");
  if (!trees.is_array()) fail(ModelLoadError::Kind::Malformed, "trees is not an array");
  for (const auto& t : trees) f.trees.push_back(tree_from(t, classes));
  if (f.trees.size() != params.n_trees || f.tree_seeds.size() != params.n_trees)
    fail(ModelLoadError::Kind::Invalid, "tree count does not match n_trees");
  return f;
}

inline BoostModel boost_from(const json& j, const BoostParams& params, const std::vector<GrammageClass>& classes) {
  BoostModel b;
  b.classes = classes;
  b.params = params;
  b.warnings = get<std::vector<std::string>>(j, "warnings");
  const auto& stages = at(j, "stages");
  if (!stages.is_array() || stages.empty()) fail(ModelLoadError::Kind::Malformed, "boost model has no stages");
  if (stages.size() > params.n_stages) fail(ModelLoadError::Kind::Invalid, "more stages than n_stages");
  for (const auto& s : stages) {
    BoostStage st;
    st.weight = get<double>(s, "weight");
    st.weighted_error = get<double>(s, "weighted_error");
    st.base = forest_from(at(s, "base"), params.base, classes);
    b.stages.push_back(std::move(st));
  }
  return b;
}

inline KnnModel knn_from(const json& j, std::size_t k, const std::vector<GrammageClass>& classes) {
  KnnModel m;
  m.k = k;
  m.classes = classes;
  const auto& sc = at(j, "scaler");
  m.scaler.mean = get<FeatureVector>(sc, "mean");
  m.scaler.stddev = get<FeatureVector>(sc, "stddev");
  m.train = get<std::vector<FeatureVector>>(j, "train");
  m.y = get<std::vector<std::size_t>>(j, "labels");
  if (m.train.size() != m.y.size()) fail(ModelLoadError::Kind::Invalid, "kNN rows and labels differ in length");
  if (k < 1 || k > m.train.size()) fail(ModelLoadError::Kind::Invalid, "kNN k out of range");
  for (auto y : m.y)
    if (y >= classes.size()) fail(ModelLoadError::Kind::ClassMismatch, "kNN label outside the class list");
  for (double s : m.scaler.stddev)
    if (!(s > 0.0)) fail(ModelLoadError::Kind::Invalid, "kNN scaler stddev must be positive");
  return m;
}

}  // namespace io

inline std::string save_model(const Model& m) {
  using io::json;
  json j;
  j["schema_version"] = kModelSchemaVersion;
  j["learner"] = m.spec.name();
  json cls = json::array();
  for (auto g : m.classes) cls.push_back(g.value());
  j["classes"] = std::move(cls);
  j["seed"] = m.seed;
  switch (m.spec.kind) {
    case LearnerKind::Tree:
      j["params"] = io::tree_params_json(m.spec.tree);
      j["model"] = io::tree_json(std::get<TreeModel>(m.impl));
      break;
    case LearnerKind::Forest:
      j["params"] = io::forest_params_json(m.spec.forest);
      j["model"] = io::forest_json(std::get<ForestModel>(m.impl));
      break;
    case LearnerKind::AdaBoost:
      j["params"] = io::boost_params_json(m.spec.boost);
      j["model"] = io::boost_json(std::get<BoostModel>(m.impl));
      break;
    case LearnerKind::Knn:
      j["params"] = json{{"k", m.spec.k}};
      j["model"] = io::knn_json(std::get<KnnModel>(m.impl));
      break;
  }
  json metrics = json::object();
  for (const auto& [name, v] : m.metrics) metrics[name] = v;
  j["metrics"] = std::move(metrics);
  return j.dump(2) + "\n";
}

inline Model load_model(std::string_view text) {
  using io::json;
  using Kind = ModelLoadError::Kind;
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    io::fail(Kind::Malformed, std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) io::fail(Kind::Malformed, "model file is not a JSON object");
  const int version = io::get<int>(j, "schema_version");
  if (version != kModelSchemaVersion)
    io::fail(Kind::Version, "unsupported schema_version " + std::to_string(version));

  Model m;
  try {
    m.spec.kind = parse_learner(io::get<std::string>(j, "learner"));
  } catch (const DomainError& e) {
    io::fail(Kind::Invalid, e.what());
  }
  for (int g : io::get<std::vector<int>>(j, "classes")) m.classes.emplace_back(g);
  if (m.classes.empty()) io::fail(Kind::ClassMismatch, "empty class list");
  if (!std::is_sorted(m.classes.begin(), m.classes.end()) ||
      std::adjacent_find(m.classes.begin(), m.classes.end()) != m.classes.end())
    io::fail(Kind::ClassMismatch, "class list must be strictly ascending");
  m.seed = io::get<std::uint64_t>(j, "seed");

  const auto& params = io::at(j, "params");
  const auto& body = io::at(j, "model");
  switch (m.spec.kind) {
    case LearnerKind::Tree:
      m.spec.tree = io::tree_params_from(params);
      m.impl = io::tree_from(body, m.classes);
      if (std::get<TreeModel>(m.impl).max_depth != m.spec.tree.max_depth)
        io::fail(Kind::Invalid, "tree max_depth disagrees with params");
      break;
    case LearnerKind::Forest:
      m.spec.forest = io::forest_params_from(params);
      m.impl = io::forest_from(body, m.spec.forest, m.classes);
      break;
    case LearnerKind::AdaBoost:
      m.spec.boost = io::boost_params_from(params);
      m.impl = io::boost_from(body, m.spec.boost, m.classes);
      break;
    case LearnerKind::Knn:
      m.spec.k = io::get<std::size_t>(params, "k");
      m.impl = io::knn_from(body, m.spec.k, m.classes);
      break;
  }
  const auto& metrics = io::at(j, "metrics");
  if (!metrics.is_object()) io::fail(Kind::Malformed, "metrics is not an object");
  for (auto it = metrics.begin(); it != metrics.end(); ++it) {
    if (!it.value().is_number()) io::fail(Kind::Malformed, "metric '" + it.key() + "' is not a number");
    m.metrics[it.key()] = it.value().get<double>();
  }
  return m;
}

inline void save_model_file(const Model& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << save_model(m);
  if (!out) throw Error("write failed: " + path);
}

inline Model load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

}  // namespace grammage
