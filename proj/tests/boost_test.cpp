#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "grammage/boost.hpp"
#include "test_util.hpp"

using namespace grammage;

TEST(SammeR, ScoresSumToZero) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + gen() % 5;
    ClassDistribution p(k);
    double s = 0;
    for (auto& v : p) s += v = u(gen) < 0.2 ? 0.0 : u(gen);
    if (s == 0) continue;
    for (auto& v : p) v /= s;
    for (double floor : {1e-10, 1e-2}) {
      const auto h = samme_r_scores(p, floor);
      double sum = 0;
      for (double v : h) {
        ASSERT_TRUE(std::isfinite(v));
        sum += v;
      }
      ASSERT_NEAR(sum, 0.0, 1e-8);
    }
  }
}

TEST(SammeR, KnownValues) {
  for (double v : samme_r_scores({0.25, 0.25, 0.25, 0.25}, 1e-10)) EXPECT_NEAR(v, 0.0, 1e-15);
  const auto h = samme_r_scores({0.9, 0.1}, 1e-10);
  EXPECT_NEAR(h[0], 0.5 * std::log(9.0), 1e-12);
  EXPECT_NEAR(h[0], 1.0986, 1e-4);
  EXPECT_NEAR(h[1], -1.0986, 1e-4);
  const auto z = samme_r_scores({1.0, 0.0, 0.0}, 1e-10);
  EXPECT_NEAR(z[0], 2.0 * (2.0 / 3.0) * std::log(1e10), 1e-9);
}

TEST(Softmax, NormalizedAndOrderPreserving) {
  const auto p = softmax({1000.0, 999.0, -5.0});
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_GT(p[0], p[1]);
  EXPECT_NEAR(p[0] / p[1], std::exp(1.0), 1e-9);
}

TEST(AdaBoost, SingleStageMatchesBaseArgmax) {
  const auto d = testutil::training(800, 2);
  BoostParams p;
  p.n_stages = 1;
  const auto m = train_adaboost(d, p, 3);
  ASSERT_EQ(m.stages.size(), 1u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& base = m.stages[0].base;
    ASSERT_EQ(boost_predict(m, d.x[i]).label, d.classes[argmax(base.predict_proba(d.x[i]))]);
  }
}

TEST(AdaBoost, StageSeedsFollowRoot) {
  const auto d = testutil::training(500, 2);
  BoostParams p;
  p.n_stages = 3;
  const auto m = train_adaboost(d, p, 21);
  const auto first = train_forest(d, std::vector<double>(d.size(), 1.0 / d.size()), p.base, Rng(21).split(0).seed());
  EXPECT_EQ(m.stages[0].base, first);
}

TEST(AdaBoost, WeightInvariantsHoldAtEveryStage) {
  const auto d = testutil::training(1500, 4);
  const double k = static_cast<double>(d.n_classes());
  std::size_t stages = 0;
  BoostParams p;
  p.n_stages = 10;
  const auto m = train_adaboost(d, p, 8, [&](const StageTrace& t) {
    ++stages;
    double sum = 0;
    for (double w : t.weights_after) {
      ASSERT_GT(w, 0.0);
      sum += w;
    }
    ASSERT_NEAR(sum, 1.0, 1e-9);
    ASSERT_LT(t.weighted_error, (k - 1) / k);
    for (const auto& h : t.scores) ASSERT_NEAR(std::accumulate(h.begin(), h.end(), 0.0), 0.0, 1e-8);
    // Misclassified rows gain weight relative to correctly classified ones.
    double up = 0, down = 0;
    std::size_t nu = 0, nd = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double ratio = std::log(t.weights_after[i] / t.weights_before[i]);
      if (argmax(t.proba[i]) != d.y[i]) {
        up += ratio;
        ++nu;
      } else {
        down += ratio;
        ++nd;
      }
    }
    if (nu > 0 && nd > 0) {
      ASSERT_GT(up / nu, down / nd);
    }
  });
  EXPECT_EQ(stages, m.stages.size());
  EXPECT_TRUE(m.warnings.empty());
}

TEST(AdaBoost, WeightUpdateMatchesFormula) {
  const auto d = testutil::training(300, 5);
  BoostParams p;
  p.n_stages = 2;
  p.learning_rate = 0.5;
  const double k = static_cast<double>(d.n_classes());
  train_adaboost(d, p, 1, [&](const StageTrace& t) {
    std::vector<double> expect(d.size());
    double z = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      double dot = 0;
      for (std::size_t c = 0; c < d.n_classes(); ++c) {
        const double y = c == d.y[i] ? 1.0 : -1.0 / (k - 1);
        dot += y * std::log(std::max(t.proba[i][c], p.proba_floor));
      }
      z += expect[i] = t.weights_before[i] * std::exp(-0.5 * (k - 1) / k * dot);
    }
    for (std::size_t i = 0; i < d.size(); ++i) ASSERT_NEAR(t.weights_after[i], expect[i] / z, 1e-12);
  });
}

TEST(AdaBoost, UniformScoresPickLowestClass) {
  BoostModel m;
  m.classes = canonical_classes();
  EXPECT_EQ(boost_predict(m, {900, 900, 500}).label, GrammageClass(48));
}

TEST(AdaBoost, PerfectStageStopsEarly) {
  TrainingData d;
  d.classes = {GrammageClass(48), GrammageClass(50)};
  for (int i = 0; i < 40; ++i) {
    d.x.push_back({double(i < 20 ? i : i + 100), 1, 1});
    d.y.push_back(i < 20 ? 0 : 1);
  }
  BoostParams p;
  p.base = {5, 1, 3};
  const auto m = train_adaboost(d, p, 1);
  EXPECT_EQ(m.stages.size(), 1u);
  EXPECT_EQ(m.stages[0].weighted_error, 0.0);
}

TEST(AdaBoost, WeakBaseWarns) {
  TrainingData d;
  d.classes = {GrammageClass(48), GrammageClass(50)};
  for (int i = 0; i < 40; ++i) {
    d.x.push_back({1, 1, 1});
    d.y.push_back(i % 2);
  }
  BoostParams p;
  p.n_stages = 2;
  const auto m = train_adaboost(d, p, 1);
  EXPECT_FALSE(m.warnings.empty());
}

TEST(AdaBoost, Errors) {
  TrainingData one;
  one.classes = {GrammageClass(48), GrammageClass(50)};
  one.x = {{1, 1, 1}, {2, 2, 2}};
  one.y = {0, 0};
  EXPECT_THROW(train_adaboost(one, {}, 1), DomainError);
  auto d = testutil::training(100, 1);
  BoostParams p;
  p.n_stages = 0;
  EXPECT_THROW(train_adaboost(d, p, 1), DomainError);
  p = {};
  p.learning_rate = 0;
  EXPECT_THROW(train_adaboost(d, p, 1), DomainError);
  p = {};
  p.proba_floor = 0;
  EXPECT_THROW(train_adaboost(d, p, 1), DomainError);
}

TEST(AdaBoost, DeterministicAndThreadIndependent) {
  const auto d = testutil::training(1000, 9);
  const auto a = train_adaboost(d, {}, 4);
  EXPECT_EQ(a, train_adaboost(d, {}, 4));
  EXPECT_EQ(a, train_adaboost(d, {}, 4, {}, 3));
}
