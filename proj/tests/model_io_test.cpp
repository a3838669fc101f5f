#include <gtest/gtest.h>

#include <filesystem>

#include "grammage/eval.hpp"
#include "grammage/model_io.hpp"
#include "test_util.hpp"

using namespace grammage;

namespace {

const Dataset& data() {
  static const Dataset ds = testutil::synthetic(2500, 14);
  return ds;
}

Model trained(LearnerKind kind) {
  auto spec = LearnerSpec::of(kind);
  if (kind == LearnerKind::Forest) spec.forest.n_trees = 20;
  auto m = train_model(spec, data(), 5);
  m.metrics["train_accuracy"] = metrics(evaluate(m, data())).accuracy;
  return m;
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  if (pos != std::string::npos) s.replace(pos, from.size(), to);
  return s;
}

ModelLoadError::Kind load_error(const std::string& text) {
  try {
    load_model(text);
  } catch (const ModelLoadError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return ModelLoadError::Kind::Invalid;
}

}  // namespace

class RoundTrip : public ::testing::TestWithParam<LearnerKind> {};

TEST_P(RoundTrip, ByteIdenticalAndSamePredictions) {
  const auto m = trained(GetParam());
  const auto text = save_model(m);
  const auto back = load_model(text);
  EXPECT_EQ(save_model(back), text);
  EXPECT_EQ(back, m);
  for (const auto& r : data()) {
    const auto a = m.predict(r.measurement), b = back.predict(r.measurement);
    ASSERT_EQ(a.label, b.label);
    ASSERT_EQ(a.distribution, b.distribution);
  }
}

INSTANTIATE_TEST_SUITE_P(Learners, RoundTrip,
                         ::testing::Values(LearnerKind::Tree, LearnerKind::Forest, LearnerKind::AdaBoost,
                                           LearnerKind::Knn),
                         [](const auto& info) { return std::string(learner_name(info.param)); });

TEST(ModelFile, RoundTripThroughDisk) {
  const auto m = trained(LearnerKind::AdaBoost);
  const auto path = (std::filesystem::temp_directory_path() / "grammage_model_io_test.json").string();
  save_model_file(m, path);
  EXPECT_EQ(load_model_file(path), m);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model_file(path), Error);
}

TEST(ModelFile, RecordsHyperparameters) {
  const auto j = nlohmann::json::parse(save_model(trained(LearnerKind::AdaBoost)));
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["learner"], "adaboost");
  EXPECT_EQ(j["params"]["n_stages"], 10);
  EXPECT_EQ(j["params"]["learning_rate"], 1.0);
  EXPECT_TRUE(j["metrics"].contains("train_accuracy"));
}

TEST(ModelFile, RejectsBadInput) {
  using Kind = ModelLoadError::Kind;
  const auto text = save_model(trained(LearnerKind::Tree));
  EXPECT_EQ(load_error(replace(text, "\"schema_version\": 1", "\"schema_version\": 999")), Kind::Version);
  EXPECT_EQ(load_error(text.substr(0, text.size() / 2)), Kind::Malformed);
  EXPECT_EQ(load_error(""), Kind::Malformed);
  EXPECT_EQ(load_error("[1, 2]"), Kind::Malformed);
  EXPECT_EQ(load_error(replace(text, "\"learner\": \"tree\"", "\"learner\": \"svm\"")), Kind::Invalid);
  EXPECT_EQ(load_error(replace(text, "\"classes\": [\n    48,", "\"classes\": [\n    50,")), Kind::ClassMismatch);
}

TEST(ModelFile, RejectsCountsOfWrongWidth) {
  auto j = nlohmann::ordered_json::parse(save_model(trained(LearnerKind::Tree)));
  j["classes"].erase(j["classes"].size() - 1);
  EXPECT_THROW(load_model(j.dump()), ModelLoadError);
}
