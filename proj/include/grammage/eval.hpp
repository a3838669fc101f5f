#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "grammage/domain.hpp"
#include "grammage/model.hpp"
#include "grammage/rng.hpp"

namespace grammage {

struct SplitResult {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_rows;  // ascending
  std::vector<std::size_t> test_rows;   // ascending
};

namespace detail {

inline std::map<GrammageClass, std::vector<std::size_t>> rows_by_class(const Dataset& ds) {
  std::map<GrammageClass, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < ds.size(); ++i) by[ds[i].label].push_back(i);
  return by;
}

}  // namespace detail

// Largest-remainder apportionment of round(ratio * total) over `counts`.
// Remainder ties go to the earlier entry (lower class value).
inline std::vector<std::size_t> apportion(const std::vector<std::size_t>& counts, double ratio) {
  const std::size_t n = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  const auto target = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  std::vector<std::size_t> out(counts.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double q = ratio * static_cast<double>(counts[c]);
    out[c] = std::min(counts[c], static_cast<std::size_t>(std::floor(q)));
    assigned += out[c];
    frac.push_back({q - std::floor(q), c});
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < target && j < frac.size(); ++j) {
    const auto c = frac[j].second;
    if (out[c] < counts[c]) ++out[c], ++assigned;
  }
  return out;
}

// `required` lists classes that must be present; a missing one is an error.
inline SplitResult stratified_split(const Dataset& ds, double train_ratio, std::uint64_t seed,
                                    const std::vector<GrammageClass>& required = {}) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw DomainError("train ratio must be in (0,1)");
  if (ds.empty()) throw DomainError("cannot split an empty dataset");
  auto by = detail::rows_by_class(ds);
  for (auto g : required)
    if (!by.count(g)) throw DomainError("class " + std::to_string(g.value()) + " has no instances");

  std::vector<std::size_t> counts;
  for (const auto& [g, rows] : by) counts.push_back(rows.size());
  const auto quota = apportion(counts, train_ratio);

  SplitResult out;
  std::size_t c = 0;
  for (auto& [g, rows] : by) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(g.value()));
    rng.shuffle(rows.begin(), rows.end());
    out.train_rows.insert(out.train_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    out.test_rows.insert(out.test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(quota[c]), rows.end());
    ++c;
  }
  std::sort(out.train_rows.begin(), out.train_rows.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  out.train = ds.subset(out.train_rows);
  out.test = ds.subset(out.test_rows);
  return out;
}

// Folds are dealt round-robin from the per-class shuffled rows taken in class
// order, so fold sizes differ by at most one and each class is spread evenly.
inline std::vector<std::vector<std::size_t>> stratified_folds(const Dataset& ds, std::size_t k_folds,
                                                              std::uint64_t seed) {
  if (k_folds < 2) throw DomainError("k_folds must be at least 2");
  if (k_folds > ds.size()) throw DomainError("k_folds exceeds the number of rows");
  auto by = detail::rows_by_class(ds);
  const bool leave_one_out = k_folds == ds.size();
  for (const auto& [g, rows] : by)
    if (rows.size() < k_folds && !leave_one_out)
      throw DomainError("class " + std::to_string(g.value()) + " has fewer rows than folds");

  std::vector<std::vector<std::size_t>> folds(k_folds);
  std::size_t next = 0;
  for (auto& [g, rows] : by) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(g.value()));
    rng.shuffle(rows.begin(), rows.end());
    for (auto i : rows) folds[next++ % k_folds].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

struct ConfusionMatrix {
  std::vector<GrammageClass> classes;
  std::vector<std::vector<std::size_t>> counts;  // [actual][predicted]

  explicit ConfusionMatrix(std::vector<GrammageClass> cls = {})
      : classes(std::move(cls)), counts(classes.size(), std::vector<std::size_t>(classes.size(), 0)) {}

  std::size_t index_of(GrammageClass g) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), g);
    if (it == classes.end() || *it != g) throw DomainError("label " + std::to_string(g.value()) + " not in class list");
    return static_cast<std::size_t>(it - classes.begin());
  }

  void add(GrammageClass actual, GrammageClass predicted) { ++counts[index_of(actual)][index_of(predicted)]; }

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& r : counts)
      for (auto v : r) t += v;
    return t;
  }
  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }
  std::size_t row_sum(std::size_t i) const { return std::accumulate(counts[i].begin(), counts[i].end(), std::size_t{0}); }
  std::size_t col_sum(std::size_t j) const {
    std::size_t s = 0;
    for (const auto& r : counts) s += r[j];
    return s;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(const std::vector<GrammageClass>& actual,
                                        const std::vector<GrammageClass>& predicted,
                                        std::vector<GrammageClass> classes) {
  if (actual.size() != predicted.size()) throw DomainError("actual and predicted differ in length");
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  ConfusionMatrix cm(std::move(classes));
  for (std::size_t i = 0; i < actual.size(); ++i) cm.add(actual[i], predicted[i]);
  return cm;
}

// Percent of each predicted column; an empty column stays all zero.
inline std::vector<std::vector<double>> column_normalize(const ConfusionMatrix& cm) {
  const auto k = cm.classes.size();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j) {
    const auto s = cm.col_sum(j);
    if (s == 0) continue;
    for (std::size_t i = 0; i < k; ++i) out[i][j] = 100.0 * static_cast<double>(cm.counts[i][j]) / static_cast<double>(s);
  }
  return out;
}

inline std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f %%", v);
  return buf;
}

inline std::string render_normalized(const ConfusionMatrix& cm) {
  const auto pct = column_normalize(cm);
  std::string out = "actual\\pred";
  for (auto g : cm.classes) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%9d", g.value());
    out += buf;
  }
  out += '\n';
  for (std::size_t i = 0; i < cm.classes.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%11d", cm.classes[i].value());
    out += buf;
    for (std::size_t j = 0; j < cm.classes.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%9s", format_percent(pct[i][j]).c_str());
      out += buf;
    }
    out += '\n';
  }
  return out;
}

struct Averaged {
  std::vector<double> per_class;
  double macro = 0.0;
  double weighted = 0.0;
  bool operator==(const Averaged&) const = default;
};

struct MetricsReport {
  double accuracy = 0.0;
  Averaged precision, recall, f1;
  std::vector<std::size_t> support;
  bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport metrics(const ConfusionMatrix& cm) {
  const auto k = cm.classes.size();
  const auto total = cm.total();
  if (total == 0) throw DomainError("metrics of an empty confusion matrix");
  MetricsReport r;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (auto* a : {&r.precision, &r.recall, &r.f1}) a->per_class.assign(k, 0.0);
  r.support.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm.counts[c][c]);
    const auto col = cm.col_sum(c);
    const auto row = cm.row_sum(c);
    r.support[c] = row;
    const double p = col ? tp / static_cast<double>(col) : 0.0;
    const double q = row ? tp / static_cast<double>(row) : 0.0;
    r.precision.per_class[c] = p;
    r.recall.per_class[c] = q;
    r.f1.per_class[c] = p + q > 0.0 ? 2.0 * p * q / (p + q) : 0.0;
  }
  for (auto* a : {&r.precision, &r.recall, &r.f1}) {
    double m = 0.0, w = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      m += a->per_class[c];
      w += a->per_class[c] * static_cast<double>(r.support[c]);
    }
    a->macro = k ? m / static_cast<double>(k) : 0.0;
    a->weighted = w / static_cast<double>(total);
  }
  return r;
}

inline std::vector<GrammageClass> merge_classes(std::vector<GrammageClass> a, const std::vector<GrammageClass>& b) {
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

inline ConfusionMatrix evaluate(const Model& model, const Dataset& test, std::vector<GrammageClass>* predictions = nullptr) {
  ConfusionMatrix cm(merge_classes(model.classes, test.classes()));
  for (const auto& r : test) {
    const auto p = model.predict(r.measurement).label;
    cm.add(r.label, p);
    if (predictions) predictions->push_back(p);
  }
  return cm;
}

struct CrossValidation {
  std::vector<MetricsReport> folds;
  double mean_accuracy = 0.0;
  double stddev_accuracy = 0.0;  // population
};

inline CrossValidation cross_validate(const LearnerSpec& spec, const Dataset& ds, std::size_t k_folds,
                                      std::uint64_t seed, unsigned n_threads = 1) {
  const auto folds = stratified_folds(ds, k_folds, seed);
  CrossValidation cv;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train_rows;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
    std::sort(train_rows.begin(), train_rows.end());
    const auto train = TrainingData::from(ds.subset(train_rows), ds.classes());
    const auto model = train_model(spec, train, Rng(seed).split(1000 + f).seed(), n_threads);
    cv.folds.push_back(metrics(evaluate(model, ds.subset(folds[f]))));
  }
  for (const auto& r : cv.folds) cv.mean_accuracy += r.accuracy;
  cv.mean_accuracy /= static_cast<double>(cv.folds.size());
  for (const auto& r : cv.folds) cv.stddev_accuracy += (r.accuracy - cv.mean_accuracy) * (r.accuracy - cv.mean_accuracy);
  cv.stddev_accuracy = std::sqrt(cv.stddev_accuracy / static_cast<double>(cv.folds.size()));
  return cv;
}

struct ComparisonRow {
  LearnerSpec spec;
  std::optional<MetricsReport> report;
  ConfusionMatrix confusion;
  std::string error;
};

struct Comparison {
  std::vector<ComparisonRow> rows;  // by CA descending, then name; failed rows last
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

// One stratified split; every learner trains on the same rows with `seed`.
inline Comparison compare_learners(const Dataset& ds, const std::vector<LearnerSpec>& specs, std::uint64_t seed,
                                   double train_ratio = 0.70, unsigned n_threads = 1) {
  if (specs.empty()) throw DomainError("no learners to compare");
  const auto split = stratified_split(ds, train_ratio, seed);
  const auto train = TrainingData::from(split.train);
  Comparison out;
  out.n_train = split.train.size();
  out.n_test = split.test.size();
  for (const auto& spec : specs) {
    ComparisonRow row;
    row.spec = spec;
    try {
      const auto model = train_model(spec, train, seed, n_threads);
      row.confusion = evaluate(model, split.test);
      row.report = metrics(row.confusion);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  std::stable_sort(out.rows.begin(), out.rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.report.has_value() != b.report.has_value()) return a.report.has_value();
    if (a.report && a.report->accuracy != b.report->accuracy) return a.report->accuracy > b.report->accuracy;
    return a.spec.name() < b.spec.name();
  });
  return out;
}

}  // namespace grammage
