// Runs every primary acceptance criterion and prints one PASS/FAIL line each.
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include "cart_oracle.hpp"
#include "grammage/cli.hpp"
#include "grammage/grammage.hpp"

using namespace grammage;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 10;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail.clear();
    if (!detail.empty()) detail += "; ";
    detail += why;
    pass = false;
  }
  void note(const std::string& s) {
    if (!pass) return;
    if (!detail.empty()) detail += "; ";
    detail += s;
  }
};

struct Cli {
  int code;
  std::string out, err;
};

Cli cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "grammage");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::size_t file_rows(const std::string& path) {
  std::ifstream in(path);
  return parse_dataset(in).size();
}

struct SeedRun {
  double ca_boost = 0, ca_tree = 0, ca_forest = 0;
  double boost_seconds = 0;
  std::size_t stages = 0;
  std::vector<std::string> invariant_failures;
  Model boost;
  Dataset test;
};

Dataset default_inliers(std::uint64_t seed) {
  auto cfg = synth::GeneratorConfig::defaults();
  cfg.seed = seed;
  return filter_outliers(synth::generate(cfg), 0.20).inliers;
}

SeedRun run_seed(std::uint64_t seed) {
  SeedRun r;
  const auto t0 = Clock::now();
  const auto ds = default_inliers(seed);
  const auto split = stratified_split(ds, 0.70, seed);
  const auto train = TrainingData::from(split.train);
  r.test = split.test;

  const auto boost_spec = LearnerSpec::of(LearnerKind::AdaBoost);
  const double k = static_cast<double>(train.n_classes());
  auto check = [&](const StageTrace& t) {
    const auto where = "seed " + std::to_string(seed) + " stage " + std::to_string(t.stage) + ": ";
    double sum = 0;
    for (double w : t.weights_after) {
      if (!(w > 0)) r.invariant_failures.push_back(where + "nonpositive weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) r.invariant_failures.push_back(where + "weights sum " + fmt(sum, 12));
    for (const auto& h : t.scores) {
      double s = 0;
      for (double v : h) s += v;
      if (std::abs(s) > 1e-8) {
        r.invariant_failures.push_back(where + "score sum " + std::to_string(s));
        break;
      }
    }
    if (!(t.weighted_error < (k - 1) / k)) r.invariant_failures.push_back(where + "error " + fmt(t.weighted_error));
  };
  r.boost.spec = boost_spec;
  r.boost.classes = train.classes;
  r.boost.seed = seed;
  const auto bm = train_adaboost(train, boost_spec.boost, seed, check);
  r.stages = bm.stages.size();
  r.boost.impl = bm;
  r.ca_boost = metrics(evaluate(r.boost, split.test)).accuracy;
  r.boost_seconds = seconds_since(t0);

  r.ca_tree = metrics(evaluate(train_model(LearnerSpec::of(LearnerKind::Tree), train, seed), split.test)).accuracy;
  r.ca_forest = metrics(evaluate(train_model(LearnerSpec::of(LearnerKind::Forest), train, seed), split.test)).accuracy;
  return r;
}

Outcome criterion_pipeline(const fs::path& dir) {
  Outcome o;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto t0 = Clock::now();
    const auto p = [&](const char* n) { return (dir / (std::to_string(seed) + n)).string(); };
    const auto s = std::to_string(seed);
    const auto a = cli_run({"gen", "--n", "9589", "--outlier-rate", "0.20", "--seed", s, "-o", p("all.txt")});
    const auto b = cli_run({"filter", p("all.txt"), "--contamination", "0.20", "--inliers", p("in.txt"), "--outliers",
                            p("out.txt")});
    const auto c = cli_run({"split", p("in.txt"), "--ratio", "0.70", "--seed", s, "--train", p("train.txt"), "--test",
                            p("test.txt")});
    const double secs = seconds_since(t0);
    if (a.code || b.code || c.code) {
      o.fail("seed " + s + ": command failed: " + a.err + b.err + c.err);
      continue;
    }
    const std::vector<std::size_t> got{file_rows(p("all.txt")), file_rows(p("out.txt")), file_rows(p("in.txt")),
                                       file_rows(p("train.txt")), file_rows(p("test.txt"))};
    const std::vector<std::size_t> want{9589, 1918, 7671, 5370, 2301};
    if (got != want) {
      std::string g;
      for (auto v : got) g += (g.empty() ? "" : "/") + std::to_string(v);
      o.fail("seed " + s + ": counts " + g);
    }
    if (secs >= 10.0) o.fail("seed " + s + ": " + fmt(secs, 2) + " s");
    if (seed == 1) o.note("9589/1918/7671/5370/2301 in " + fmt(secs, 2) + " s");
  }
  if (o.pass) o.note("exact on " + std::to_string(kSeeds) + " seeds");
  return o;
}

Outcome criterion_accuracy(const std::vector<SeedRun>& runs) {
  Outcome o;
  std::vector<double> cas;
  double slowest = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    cas.push_back(r.ca_boost);
    slowest = std::max(slowest, r.boost_seconds);
    if (r.ca_boost < 0.95 || r.ca_boost > 0.995) o.fail("seed " + std::to_string(i + 1) + " CA " + fmt(r.ca_boost));
    if (r.boost_seconds >= 60.0) o.fail("seed " + std::to_string(i + 1) + " took " + fmt(r.boost_seconds, 1) + " s");
  }
  auto sorted = cas;
  std::sort(sorted.begin(), sorted.end());
  const double median = (sorted[4] + sorted[5]) / 2;
  if (median < 0.96 || median > 0.99) o.fail("median CA " + fmt(median));
  o.note("CA " + fmt(sorted.front()) + ".." + fmt(sorted.back()) + ", median " + fmt(median) + ", slowest seed " +
         fmt(slowest, 1) + " s");
  return o;
}

Outcome criterion_ordering(const std::vector<SeedRun>& runs) {
  Outcome o;
  int over_tree = 0, over_forest = 0;
  std::string margins;
  for (const auto& r : runs) {
    over_tree += r.ca_boost >= r.ca_tree;
    over_forest += r.ca_boost >= r.ca_forest;
  }
  if (over_tree < 8) o.fail("AdaBoost >= tree in " + std::to_string(over_tree) + "/10");
  if (over_forest < 5) o.fail("AdaBoost >= forest in " + std::to_string(over_forest) + "/10");
  o.note("AdaBoost >= tree in " + std::to_string(over_tree) + "/10, >= forest in " + std::to_string(over_forest) + "/10");
  if (!o.pass) {
    for (std::size_t i = 0; i < runs.size(); ++i)
      o.detail += "\n    seed " + std::to_string(i + 1) + ": adaboost " + fmt(runs[i].ca_boost) + " tree " +
                  fmt(runs[i].ca_tree) + " forest " + fmt(runs[i].ca_forest);
  }
  return o;
}

Outcome criterion_oracle() {
  Outcome o;
  std::mt19937_64 gen(4242);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    int range = 0;
    const auto d = testutil::random_integer_data(gen, range);
    for (int depth : {1, 2}) {
      const auto diff = testutil::compare_with_oracle(d, depth, range);
      if (!diff.empty()) o.fail("dataset " + std::to_string(trial) + " depth " + std::to_string(depth) + ": " + diff);
      ++checked;
    }
  }
  o.note(std::to_string(checked) + " trees identical to the exhaustive oracle");
  return o;
}

Outcome criterion_samme(const std::vector<SeedRun>& runs) {
  Outcome o;
  std::size_t stages = 0;
  for (const auto& r : runs) {
    stages += r.stages;
    for (const auto& f : r.invariant_failures) o.fail(f);
  }
  o.note(std::to_string(stages) + " stages checked over " + std::to_string(runs.size()) + " runs");
  return o;
}

Outcome criterion_metrics() {
  Outcome o;
  std::mt19937_64 gen(8);
  double worst_recall = 0, worst_column = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + gen() % 5;
    auto cls = canonical_classes();
    cls.resize(k);
    ConfusionMatrix cm(cls);
    for (auto& row : cm.counts)
      for (auto& v : row) v = gen() % 5 == 0 ? 0 : gen() % 1000;
    cm.counts[0][0] += 1;
    const auto r = metrics(cm);
    worst_recall = std::max(worst_recall, std::abs(r.recall.weighted - r.accuracy));

    // Sum the percentages as printed.
    std::istringstream text(render_normalized(cm));
    std::string line;
    std::getline(text, line);
    std::vector<double> col(k, 0.0);
    while (std::getline(text, line)) {
      std::istringstream fields(line);
      std::string label, pct, unit;
      fields >> label;
      for (std::size_t j = 0; j < k; ++j) {
        fields >> pct >> unit;
        col[j] += std::stod(pct);
      }
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cm.col_sum(j) > 0) worst_column = std::max(worst_column, std::abs(col[j] - 100.0));
  }
  if (worst_recall > 1e-12) o.fail("weighted recall differs from CA by " + std::to_string(worst_recall));
  if (worst_column > 0.3) o.fail("rendered column off by " + fmt(worst_column, 2));
  std::ostringstream gap;
  gap << worst_recall;
  o.note("max |recall_w - CA| " + gap.str() + ", max column deviation " + fmt(worst_column, 2));
  return o;
}

Outcome criterion_persistence(const SeedRun& run) {
  Outcome o;
  const auto text = save_model(run.boost);
  const auto back = load_model(text);
  if (save_model(back) != text) o.fail("save(load(save)) differs");
  std::size_t same = 0;
  for (const auto& r : run.test) {
    const auto a = run.boost.predict(r.measurement), b = back.predict(r.measurement);
    if (a.label == b.label && a.distribution == b.distribution) ++same;
  }
  if (same != run.test.size()) o.fail(std::to_string(run.test.size() - same) + " test predictions changed");

  const auto ds = default_inliers(1);
  const auto train = TrainingData::from(stratified_split(ds, 0.70, 1).train);
  const auto spec = LearnerSpec::of(LearnerKind::AdaBoost);
  if (save_model(train_model(spec, train, 1)) != save_model(train_model(spec, train, 1)))
    o.fail("same seed gave different model files");
  if (save_model(train_model(spec, train, 1)) != text) o.fail("retrained model differs from the acceptance model");
  o.note("byte-identical, " + std::to_string(same) + " test predictions replayed");
  return o;
}

std::string mask(const std::string& reply) {
  static const std::regex ts(R"(^(OK \d+ (GOOD|BAD)) \d+$)");
  return std::regex_replace(reply, ts, "$1 <ts>");
}

Outcome criterion_protocol() {
  Outcome o;
  plc::SimConfig cfg;
  cfg.replay = {{1000, 820, 564}, {912.4, 801.6, 540.5}};
  plc::TagServer server(plc::SimState(cfg), {"127.0.0.1:0", 0});
  plc::TagClient client(server.address(), 2000);
  const std::vector<std::pair<std::string, std::string>> golden{
      {"READ db1,w8", "OK 0 GOOD <ts>"},
      {"ADVANCE", "OK 1"},
      {"READ db1,w8", "OK 1 GOOD <ts>"},
      {"READ db1,w2", "OK 1000 GOOD <ts>"},
      {"READ db1,w4", "OK 820 GOOD <ts>"},
      {"READ db1,w6", "OK 564 GOOD <ts>"},
      {"READ db1,w12", "OK 0 GOOD <ts>"},
      {"WRITE db1,w12 70", "OK"},
      {"READ db1,w12", "OK 70 GOOD <ts>"},
      {"WRITE db1,w8 3", "ERR RANGE db1,w8 is read-only"},
      {"WRITE db1,w12 65536", "ERR RANGE value exceeds 65535"},
      {"WRITE db1,w12 abc", "ERR BAD_SYNTAX bad value 'abc'"},
      {"READ db2,w2", "ERR UNKNOWN_TAG db2,w2"},
      {"READ db1,w5", "ERR BAD_SYNTAX bad address 'db1,w5'"},
      {"PING", "ERR BAD_SYNTAX unknown command 'PING'"},
      {std::string(300, 'Z'), "ERR BAD_SYNTAX line exceeds 256 bytes"},
      {"ADVANCE", "OK 2"},
      {"READ db1,w2", "OK 912 GOOD <ts>"},
      {"READ db1,w6", "OK 541 GOOD <ts>"},
      {"READ db1,w12", "OK 0 GOOD <ts>"},
  };
  for (const auto& [cmd, want] : golden) {
    const auto got = mask(client.request(cmd));
    if (got != want) o.fail("'" + cmd.substr(0, 20) + "' -> '" + got + "'");
  }
  for (std::uint16_t v : {0, 1, 48, 4711, 65535}) {
    client.write_tag(plc::kManualGrammageTag, v);
    if (client.read_tag(plc::kManualGrammageTag).value != v) o.fail("WRITE/READ " + std::to_string(v));
  }

  // Faults: with every roll faulted, exactly one channel is BAD and only that
  // channel departs from the clean value, in every state a reader can see.
  plc::SimConfig fcfg;
  fcfg.generator.seed = 3;
  fcfg.fault_rate = 1.0;
  plc::TagServer faulty(plc::SimState(fcfg), {"127.0.0.1:0", 1});
  const plc::SimState reference(fcfg);
  std::size_t snapshots = 0;
  const auto end = Clock::now() + std::chrono::milliseconds(500);
  while (Clock::now() < end) {
    const auto bad = faulty.with_state([&](plc::SimState& s) -> std::string {
      if (s.roll_counter() == 0) return {};
      ++snapshots;
      const auto clean = reference.roll_at(s.roll_counter() - 1).features();
      const plc::TagAddress tags[] = {plc::kDiameterTag, plc::kWidthTag, plc::kWeightTag};
      int n_bad = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto& e = s.tag(tags[i]);
        const bool differs = e.value != plc::to_word(clean[i]);
        if (e.quality == plc::Quality::Bad) {
          ++n_bad;
          if (!differs) return "BAD channel kept its clean value";
        } else if (differs) {
          return "GOOD channel altered";
        }
      }
      return n_bad == 1 ? "" : std::to_string(n_bad) + " BAD channels";
    });
    if (!bad.empty()) {
      o.fail(bad);
      break;
    }
  }
  const auto rolls = faulty.with_state([](plc::SimState& s) { return s.roll_counter(); });
  o.note(std::to_string(golden.size()) + " golden lines, " + std::to_string(snapshots) + " fault snapshots over " +
         std::to_string(rolls) + " rolls");
  return o;
}

Outcome criterion_live(const SeedRun& run, const fs::path& dir) {
  Outcome o;
  const auto model_path = (dir / "acceptance_model.json").string();
  save_model_file(run.boost, model_path);
  plc::SimConfig cfg;
  cfg.generator.seed = 1;
  plc::TagServer sim(plc::SimState(cfg), {"127.0.0.1:0", 0});
  plc::TagClient client(sim.address(), 2000);
  client.advance();
  client.write_tag(plc::kDiameterTag, 1000);
  client.write_tag(plc::kWidthTag, 820);
  client.write_tag(plc::kWeightTag, 564);
  client.write_tag(plc::kManualGrammageTag, 70);
  const auto r = cli_run({"predict-once", "--model", model_path, "--sim", sim.address()});
  const std::string want = "diameter width weight predicted_grammage manual_grammage\n1000 820 564 70 70\n";
  if (r.code != 0) o.fail("exit " + std::to_string(r.code) + ": " + r.err);
  else if (r.out != want) o.fail("printed '" + r.out + "'");
  else o.note("printed '1000 820 564 70 70'");
  return o;
}

}  // namespace

int main() {
  const auto dir = fs::temp_directory_path() / ("grammage_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  int failed = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << name << ": " << o.detail << std::endl;
    failed += !o.pass;
  };
  auto guarded = [&](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      Outcome o;
      o.fail(std::string("exception: ") + e.what());
      return o;
    }
  };

  report(1, "pipeline shape", guarded([&] { return criterion_pipeline(dir); }));

  std::vector<SeedRun> runs;
  try {
    for (int seed = 1; seed <= kSeeds; ++seed) runs.push_back(run_seed(static_cast<std::uint64_t>(seed)));
  } catch (const std::exception& e) {
    std::cerr << "seed runs failed: " << e.what() << "\n";
  }
  const bool have_runs = runs.size() == static_cast<std::size_t>(kSeeds);
  auto need_runs = [&](const std::function<Outcome()>& f) {
    if (have_runs) return guarded(f);
    Outcome o;
    o.fail("seed runs did not complete");
    return o;
  };

  report(2, "accuracy band", need_runs([&] { return criterion_accuracy(runs); }));
  report(3, "ordering", need_runs([&] { return criterion_ordering(runs); }));
  report(4, "oracle equivalence", guarded(criterion_oracle));
  report(5, "SAMME.R invariants", need_runs([&] { return criterion_samme(runs); }));
  report(6, "metrics algebra", guarded(criterion_metrics));
  report(7, "model persistence", need_runs([&] { return criterion_persistence(runs.front()); }));
  report(8, "protocol conformance", guarded(criterion_protocol));
  report(9, "live loop", need_runs([&] { return criterion_live(runs.front(), dir); }));

  fs::remove_all(dir);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed;
}
