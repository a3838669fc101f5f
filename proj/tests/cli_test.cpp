#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "grammage/cli.hpp"

using namespace grammage;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "grammage");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("grammage_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

std::size_t rows_in(const std::string& file) {
  std::ifstream in(file);
  return parse_dataset(in).size();
}

}  // namespace

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"gen", "--bogus"}).code, 1);
  EXPECT_EQ(run({"gen"}).code, 1);  // --seed is required
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"split", "x", "--seed", "1", "--ratio", "1.5"}).code, 1);
  const auto missing = run({"filter", path("absent.txt")});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("grammage: "), std::string::npos);
  EXPECT_EQ(run({"eval", "--model", path("absent.json"), path("absent.txt")}).code, 2);
}

TEST_F(CliTest, PipelineCounts) {
  const auto g = run({"gen", "--seed", "1", "-o", path("all.txt")});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(g.out, "generated 9589 rows (1918 faulted, 96 relabeled)\n");
  EXPECT_EQ(rows_in(path("all.txt")), 9589u);

  const auto f = run({"filter", path("all.txt"), "--inliers", path("in.txt"), "--outliers", path("out.txt")});
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_EQ(f.out, "total 9589 inliers 7671 outliers 1918\n");
  EXPECT_EQ(rows_in(path("in.txt")), 7671u);
  EXPECT_EQ(rows_in(path("out.txt")), 1918u);

  const auto s = run({"split", path("in.txt"), "--seed", "1", "--train", path("train.txt"), "--test", path("test.txt"), "--json"});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto j = nlohmann::json::parse(s.out);
  EXPECT_EQ(j["train"], 5370);
  EXPECT_EQ(j["test"], 2301);
  EXPECT_EQ(rows_in(path("train.txt")), 5370u);

  const auto t = run({"train", path("train.txt"), "--seed", "1", "-o", path("model.json")});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto model = load_model_file(path("model.json"));
  EXPECT_EQ(model.spec.kind, LearnerKind::AdaBoost);
  EXPECT_EQ(model.spec.boost.n_stages, 10u);
  EXPECT_EQ(model.spec.boost.learning_rate, 1.0);
  EXPECT_EQ(model.metrics.at("train_rows"), 5370.0);

  const auto e = run({"eval", "--model", path("model.json"), path("test.txt"), "--json"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto r = nlohmann::json::parse(e.out);
  for (const char* key : {"learner", "ca", "precision_macro", "recall_macro", "precision_weighted", "recall_weighted",
                          "f1_macro", "n", "classes", "confusion"})
    EXPECT_TRUE(r.contains(key)) << key;
  EXPECT_EQ(r["n"], 2301);
  EXPECT_GT(r["ca"].get<double>(), 0.9);

  const auto text = run({"eval", "--model", path("model.json"), path("test.txt")});
  EXPECT_NE(text.out.find("actual\\pred"), std::string::npos);
}

TEST_F(CliTest, GenFromConfigAndStdout) {
  {
    std::ofstream c(path("gen.conf"));
    c << "n_instances = 50\nseed = 3\n";
  }
  const auto g = run({"gen", "--config", path("gen.conf"), "--seed", "4", "--outlier-rate", "0"});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_EQ(parse_dataset(g.out).size(), 50u);
  EXPECT_EQ(g.err, "generated 50 rows (0 faulted, 1 relabeled)\n");
  EXPECT_EQ(run({"gen", "--config", path("gen.conf"), "--seed", "4", "--outlier-rate", "0"}).out, g.out);
}

TEST_F(CliTest, TrainExcludesNonstandardRows) {
  {
    std::ofstream o(path("mixed.txt"));
    const int classes[] = {48, 50, 58, 60, 68, 70};
    for (int i = 0; i < 120; ++i) o << 800 + i << " " << 700 + (i % 6) * 50 << " " << 400 + i << " " << classes[i % 6] << "\n";
    o << "950 850 500 54\n950 860 510 54\n";
  }
  const auto t = run({"train", path("mixed.txt"), "--seed", "2", "--learner", "tree", "-o", path("m.json"), "--json"});
  ASSERT_EQ(t.code, 0) << t.err;
  const auto j = nlohmann::json::parse(t.out);
  EXPECT_EQ(j["excluded_nonstandard"], 2);
  EXPECT_EQ(j["rows"], 120);
  EXPECT_EQ(load_model_file(path("m.json")).classes.size(), 6u);

  const auto k = run({"train", path("mixed.txt"), "--seed", "2", "--learner", "tree", "-o", path("k.json"), "--keep-nonstandard"});
  ASSERT_EQ(k.code, 0) << k.err;
  EXPECT_EQ(load_model_file(path("k.json")).classes.size(), 7u);
}

TEST_F(CliTest, CompareAndCv) {
  ASSERT_EQ(run({"gen", "--seed", "3", "--n", "1500", "-o", path("d.txt")}).code, 0);
  const auto c = run({"compare", path("d.txt"), "--seed", "3", "--learners", "tree,knn", "--json"});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto j = nlohmann::json::parse(c.out);
  ASSERT_EQ(j["results"].size(), 2u);
  EXPECT_TRUE(j["results"][0].contains("ca"));
  EXPECT_EQ(j["n_train"].get<int>() + j["n_test"].get<int>(), 1500);

  EXPECT_EQ(run({"compare", path("d.txt"), "--seed", "3", "--learners", "svm"}).code, 1);

  const auto cv = run({"cv", path("d.txt"), "--seed", "3", "--folds", "3", "--learner", "tree", "--json"});
  ASSERT_EQ(cv.code, 0) << cv.err;
  const auto v = nlohmann::json::parse(cv.out);
  EXPECT_EQ(v["folds"].size(), 3u);
  EXPECT_GT(v["mean_ca"].get<double>(), 0.5);
}

TEST_F(CliTest, PredictOnceAgainstManualSimulator) {
  ASSERT_EQ(run({"gen", "--seed", "5", "--n", "3000", "-o", path("d.txt")}).code, 0);
  ASSERT_EQ(run({"filter", path("d.txt"), "--inliers", path("in.txt")}).code, 0);
  ASSERT_EQ(run({"train", path("in.txt"), "--seed", "5", "-o", path("m.json")}).code, 0);

  plc::TagServer sim(plc::SimState(plc::SimConfig{}), {"127.0.0.1:0", 0});
  plc::TagClient client(sim.address(), 2000);
  const auto none = run({"predict-once", "--model", path("m.json"), "--sim", sim.address()});
  EXPECT_EQ(none.code, 2);

  client.advance();
  client.write_tag(plc::kDiameterTag, 1000);
  client.write_tag(plc::kWidthTag, 820);
  client.write_tag(plc::kWeightTag, 564);
  client.write_tag(plc::kManualGrammageTag, 70);
  const auto r = run({"predict-once", "--model", path("m.json"), "--sim", sim.address(), "--store", path("log.ndjson")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "diameter width weight predicted_grammage manual_grammage\n1000 820 564 70 70\n");
  EXPECT_EQ(predictor::RecordStore(path("log.ndjson")).size(), 1u);
  // The stored roll is already known, so a second run finds nothing new.
  EXPECT_EQ(run({"predict-once", "--model", path("m.json"), "--sim", sim.address(), "--store", path("log.ndjson")}).code, 2);
  EXPECT_EQ(run({"predict-once", "--model", path("m.json"), "--sim", "127.0.0.1:1"}).code, 2);
}
