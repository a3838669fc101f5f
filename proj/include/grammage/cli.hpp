#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "grammage/eval.hpp"
#include "grammage/model_io.hpp"
#include "grammage/outliers.hpp"
#include "grammage/plcnet.hpp"
#include "grammage/predictor.hpp"
#include "grammage/service.hpp"
#include "grammage/synthgen.hpp"

namespace grammage::cli {

using json = nlohmann::ordered_json;

enum ExitCode { kOk = 0, kUsage = 1, kRuntime = 2 };

// Set by SIGINT/SIGTERM; long-running subcommands return once it is true.
inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

namespace detail {

inline std::string read_text(const std::string& path) {
  if (path == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << text;
  if (!f) throw Error("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) { return parse_dataset(read_text(path)); }

struct LearnerFlags {
  std::string learner = "adaboost";
  std::size_t stages = 10;
  double lr = 1.0;
  std::size_t base_trees = 10;
  int base_depth = 1;
  double floor = 1e-2;
  int depth = 3;
  std::size_t trees = 100;
  std::size_t tree_features = kFeatureCount;
  std::size_t forest_features = 1;
  std::size_t k = 5;
  unsigned threads = 1;

  void add(CLI::App* app, bool with_learner = true) {
    if (with_learner)
      app->add_option("--learner", learner, "tree | forest | adaboost | knn")
          ->check(CLI::IsMember({"tree", "forest", "adaboost", "knn"}))
          ->capture_default_str();
    app->add_option("--stages", stages, "boosting stages M")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lr", lr, "boosting learning rate")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--base-trees", base_trees, "trees per boosting base forest")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--base-depth", base_depth, "depth of base forest trees")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--floor", floor, "probability clip for boosting scores")
        ->check(CLI::Range(1e-12, 0.5))
        ->capture_default_str();
    app->add_option("--depth", depth, "max depth of tree / forest learners")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app->add_option("--trees", trees, "forest size")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--tree-features", tree_features, "features tried per split by the tree learner")
        ->check(CLI::Range(std::size_t{1}, kFeatureCount))
        ->capture_default_str();
    app->add_option("--forest-features", forest_features, "features tried per split by forests")
        ->check(CLI::Range(std::size_t{1}, kFeatureCount))
        ->capture_default_str();
    app->add_option("--k", k, "neighbours for knn")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--threads", threads, "worker threads for forest training")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
  }

  LearnerSpec spec(LearnerKind kind) const {
    LearnerSpec s = LearnerSpec::of(kind);
    s.tree = TreeParams{depth, tree_features};
    s.forest = ForestParams{trees, depth, forest_features};
    s.boost.n_stages = stages;
    s.boost.learning_rate = lr;
    s.boost.base = ForestParams{base_trees, base_depth, forest_features};
    s.boost.proba_floor = floor;
    s.k = k;
    return s;
  }

  LearnerSpec spec() const { return spec(parse_learner(learner)); }
};

inline json report_json(const std::string& learner, const ConfusionMatrix& cm, const MetricsReport& r) {
  json classes = json::array();
  for (auto g : cm.classes) classes.push_back(g.value());
  return json{{"learner", learner},
              {"ca", r.accuracy},
              {"precision_macro", r.precision.macro},
              {"recall_macro", r.recall.macro},
              {"precision_weighted", r.precision.weighted},
              {"recall_weighted", r.recall.weighted},
              {"f1_macro", r.f1.macro},
              {"n", cm.total()},
              {"classes", classes},
              {"confusion", cm.counts}};
}

inline std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline void wait_for_stop() {
  while (!stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

inline void on_signal(int) { stop_requested() = true; }

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using detail::LearnerFlags;

  CLI::App app{"Grammage prediction pipeline: generate, filter, split, train, evaluate, simulate, serve."};
  app.name("grammage");
  app.require_subcommand(1);
  app.set_version_flag("--version", "grammage 1.0.0");
  bool as_json = false;
  app.add_flag("--json", as_json, "machine-readable output")->configurable(false);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic labeled roll dataset");
  std::size_t gen_n = 9589;
  double gen_outliers = 0.20, gen_label_noise = 0.01, gen_sigma = 0.01;
  std::uint64_t gen_seed = 0;
  std::string gen_config, gen_out;
  gen->add_option("--n", gen_n, "rows to generate")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--outlier-rate", gen_outliers, "fraction of rows with a gross sensor fault")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gen->add_option("--label-noise", gen_label_noise, "fraction of rows relabeled to an adjacent class")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gen->add_option("--noise-sigma", gen_sigma, "relative sensor noise")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  gen->add_option("--config", gen_config, "generator config file; flags given explicitly override it");
  gen->add_option("--seed", gen_seed, "random seed")->required();
  gen->add_option("-o,--output", gen_out, "output file (default stdout)");

  // filter
  auto* filt = app.add_subcommand("filter", "remove outliers with a robust covariance envelope");
  double contamination = 0.20;
  std::string filt_in, filt_inliers, filt_outliers;
  filt->add_option("input", filt_in, "dataset file or -")->required();
  filt->add_option("--contamination", contamination, "fraction of rows removed")
      ->check(CLI::Range(0.0, 0.5))
      ->capture_default_str();
  filt->add_option("--inliers", filt_inliers, "write retained rows here");
  filt->add_option("--outliers", filt_outliers, "write removed rows here");

  // split
  auto* split = app.add_subcommand("split", "stratified train/test split");
  double ratio = 0.70;
  std::uint64_t split_seed = 0;
  std::string split_in, split_train, split_test;
  split->add_option("input", split_in, "dataset file or -")->required();
  split->add_option("--ratio", ratio, "train fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  split->add_option("--seed", split_seed, "random seed")->required();
  split->add_option("--train", split_train, "write the train part here");
  split->add_option("--test", split_test, "write the test part here");

  // train
  auto* train = app.add_subcommand("train", "train a model and save it as JSON");
  LearnerFlags train_flags;
  std::uint64_t train_seed = 0;
  std::string train_in, train_out;
  bool keep_nonstandard = false;
  train->add_option("input", train_in, "training dataset file or -")->required();
  train_flags.add(train);
  train->add_option("--seed", train_seed, "random seed")->required();
  train->add_option("-o,--output", train_out, "model file")->required();
  train->add_flag("--keep-nonstandard", keep_nonstandard, "train on labels outside the standard classes");

  // eval
  auto* evalc = app.add_subcommand("eval", "evaluate a saved model on a dataset");
  std::string eval_model, eval_in;
  evalc->add_option("--model", eval_model, "model file")->required();
  evalc->add_option("input", eval_in, "test dataset file or -")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "train several learners on one split and rank them");
  LearnerFlags cmp_flags;
  std::vector<std::string> cmp_learners{"tree", "forest", "adaboost", "knn"};
  std::uint64_t cmp_seed = 0;
  double cmp_ratio = 0.70;
  std::string cmp_in;
  cmp->add_option("input", cmp_in, "dataset file or -")->required();
  cmp->add_option("--learners", cmp_learners, "learners to compare")
      ->delimiter(',')
      ->check(CLI::IsMember({"tree", "forest", "adaboost", "knn"}))
      ->capture_default_str();
  cmp->add_option("--ratio", cmp_ratio, "train fraction")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  cmp_flags.add(cmp, false);
  cmp->add_option("--seed", cmp_seed, "random seed")->required();

  // cv
  auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
  LearnerFlags cv_flags;
  std::size_t folds = 10;
  std::uint64_t cv_seed = 0;
  std::string cv_in;
  cv->add_option("input", cv_in, "dataset file or -")->required();
  cv->add_option("--folds", folds, "number of folds")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}))
      ->capture_default_str();
  cv_flags.add(cv);
  cv->add_option("--seed", cv_seed, "random seed")->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the PLC tag server simulator");
  std::string sim_listen = "127.0.0.1:5020", sim_config, sim_rolls;
  int sim_tick = 0;
  bool sim_manual = false;
  double fault_rate = 0.0;
  std::uint64_t sim_seed = 0;
  sim->add_option("--listen", sim_listen, "host:port to listen on")->capture_default_str();
  auto* tick_opt = sim->add_option("--tick", sim_tick, "advance one roll every N ms")->check(CLI::PositiveNumber);
  sim->add_flag("--manual", sim_manual, "advance only on ADVANCE commands")->excludes(tick_opt);
  sim->add_option("--fault-rate", fault_rate, "probability a roll carries a BAD channel")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  sim->add_option("--config", sim_config, "generator config file");
  sim->add_option("--rolls", sim_rolls, "replay rolls from this dataset instead of generating them");
  sim->add_option("--seed", sim_seed, "random seed")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "poll the simulator, predict each roll, serve the HTTP API");
  std::string serve_model, serve_sim = plc::default_sim_address(), serve_listen = "127.0.0.1:8080", serve_store;
  int poll_ms = 500;
  serve->add_option("--model", serve_model, "model file")->required();
  serve->add_option("--sim", serve_sim, "simulator host:port (env GRAMMAGE_SIM_ADDR)")->capture_default_str();
  serve->add_option("--listen", serve_listen, "HTTP host:port")->capture_default_str();
  serve->add_option("--store", serve_store, "NDJSON record log")->required();
  serve->add_option("--poll-ms", poll_ms, "poll interval")->check(CLI::PositiveNumber)->capture_default_str();

  // predict-once
  auto* once = app.add_subcommand("predict-once", "read the current roll once and print the comparison line");
  std::string once_model, once_sim = plc::default_sim_address(), once_store;
  once->add_option("--model", once_model, "model file")->required();
  once->add_option("--sim", once_sim, "simulator host:port (env GRAMMAGE_SIM_ADDR)")->capture_default_str();
  once->add_option("--store", once_store, "append the record to this NDJSON log");

  for (auto* sub : app.get_subcommands({})) sub->add_flag("--json", as_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      auto cfg = gen_config.empty() ? synth::GeneratorConfig::defaults() : synth::parse_config(detail::read_text(gen_config));
      if (gen_config.empty() || gen->count("--n")) cfg.n_instances = gen_n;
      if (gen_config.empty() || gen->count("--outlier-rate")) cfg.outlier_rate = gen_outliers;
      if (gen_config.empty() || gen->count("--label-noise")) cfg.label_noise_rate = gen_label_noise;
      if (gen_config.empty() || gen->count("--noise-sigma")) cfg.sensor_noise_sigma = gen_sigma;
      cfg.seed = gen_seed;
      const auto g = synth::generate_detailed(cfg);
      detail::write_text(gen_out, write_dataset(g.data), out);
      json s{{"rows", g.data.size()}, {"faulted", g.fault_rows.size()}, {"relabeled", g.relabeled_rows.size()}};
      auto& dst = gen_out.empty() || gen_out == "-" ? err : out;
      if (as_json) dst << s.dump() << "\n";
      else
        dst << "generated " << g.data.size() << " rows (" << g.fault_rows.size() << " faulted, "
            << g.relabeled_rows.size() << " relabeled)\n";
      return kOk;
    }

    if (*filt) {
      const auto ds = detail::read_dataset(filt_in);
      const auto r = filter_outliers(ds, contamination);
      if (!filt_inliers.empty()) detail::write_text(filt_inliers, write_dataset(r.inliers), out);
      if (!filt_outliers.empty()) detail::write_text(filt_outliers, write_dataset(r.outliers), out);
      if (as_json)
        out << json{{"total", ds.size()}, {"inliers", r.inliers.size()}, {"outliers", r.outliers.size()}}.dump()
            << "\n";
      else
        out << "total " << ds.size() << " inliers " << r.inliers.size() << " outliers " << r.outliers.size() << "\n";
      return kOk;
    }

    if (*split) {
      const auto ds = detail::read_dataset(split_in);
      const auto r = stratified_split(ds, ratio, split_seed);
      if (!split_train.empty()) detail::write_text(split_train, write_dataset(r.train), out);
      if (!split_test.empty()) detail::write_text(split_test, write_dataset(r.test), out);
      if (as_json)
        out << json{{"total", ds.size()}, {"train", r.train.size()}, {"test", r.test.size()}}.dump() << "\n";
      else
        out << "total " << ds.size() << " train " << r.train.size() << " test " << r.test.size() << "\n";
      return kOk;
    }

    if (*train) {
      const auto all = detail::read_dataset(train_in);
      std::size_t excluded = 0;
      const auto ds = keep_nonstandard ? all : all.canonical_only(&excluded);
      const auto spec = train_flags.spec();
      auto model = train_model(spec, ds, train_seed, train_flags.threads);
      const auto cm = evaluate(model, ds);
      model.metrics["train_accuracy"] = metrics(cm).accuracy;
      model.metrics["train_rows"] = static_cast<double>(ds.size());
      model.metrics["excluded_nonstandard"] = static_cast<double>(excluded);
      save_model_file(model, train_out);
      if (as_json)
        out << json{{"learner", spec.name()},
                    {"rows", ds.size()},
                    {"excluded_nonstandard", excluded},
                    {"train_accuracy", model.metrics["train_accuracy"]},
                    {"output", train_out}}
                   .dump()
            << "\n";
      else
        out << "trained " << spec.name() << " on " << ds.size() << " rows (" << excluded
            << " nonstandard excluded), train CA " << detail::fixed(model.metrics["train_accuracy"]) << " -> "
            << train_out << "\n";
      return kOk;
    }

    if (*evalc) {
      const auto model = load_model_file(eval_model);
      const auto ds = detail::read_dataset(eval_in);
      const auto cm = evaluate(model, ds);
      const auto r = metrics(cm);
      if (as_json) {
        out << detail::report_json(model.spec.name(), cm, r).dump() << "\n";
      } else {
        out << model.spec.name() << " on " << ds.size() << " rows\n"
            << "CA " << detail::fixed(r.accuracy) << "  precision macro " << detail::fixed(r.precision.macro)
            << " weighted " << detail::fixed(r.precision.weighted) << "  recall macro " << detail::fixed(r.recall.macro)
            << " weighted " << detail::fixed(r.recall.weighted) << "\n"
            << render_normalized(cm);
      }
      return kOk;
    }

    if (*cmp) {
      const auto ds = detail::read_dataset(cmp_in).canonical_only();
      std::vector<LearnerSpec> specs;
      for (const auto& l : cmp_learners) specs.push_back(cmp_flags.spec(parse_learner(l)));
      const auto c = compare_learners(ds, specs, cmp_seed, cmp_ratio, cmp_flags.threads);
      if (as_json) {
        json rows = json::array();
        for (const auto& row : c.rows) {
          if (row.report) rows.push_back(detail::report_json(row.spec.name(), row.confusion, *row.report));
          else rows.push_back(json{{"learner", row.spec.name()}, {"error", row.error}});
        }
        out << json{{"n_train", c.n_train}, {"n_test", c.n_test}, {"results", rows}}.dump() << "\n";
      } else {
        out << "train " << c.n_train << " test " << c.n_test << "\n";
        char line[160];
        std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s %8s\n", "learner", "CA", "P_macro", "R_macro",
                      "P_wtd", "R_wtd");
        out << line;
        for (const auto& row : c.rows) {
          if (!row.report) {
            out << row.spec.name() << "  failed: " << row.error << "\n";
            continue;
          }
          const auto& r = *row.report;
          std::snprintf(line, sizeof line, "%-10s %8.4f %8.4f %8.4f %8.4f %8.4f\n", row.spec.name().c_str(),
                        r.accuracy, r.precision.macro, r.recall.macro, r.precision.weighted, r.recall.weighted);
          out << line;
        }
      }
      return kOk;
    }

    if (*cv) {
      const auto ds = detail::read_dataset(cv_in).canonical_only();
      const auto spec = cv_flags.spec();
      const auto r = cross_validate(spec, ds, folds, cv_seed, cv_flags.threads);
      if (as_json) {
        json accs = json::array();
        for (const auto& f : r.folds) accs.push_back(f.accuracy);
        out << json{{"learner", spec.name()}, {"folds", accs}, {"mean_ca", r.mean_accuracy}, {"std_ca", r.stddev_accuracy}}
                   .dump()
            << "\n";
      } else {
        out << spec.name() << " " << r.folds.size() << "-fold CA " << detail::fixed(r.mean_accuracy) << " +/- "
            << detail::fixed(r.stddev_accuracy) << "\n";
      }
      return kOk;
    }

    if (*sim) {
      plc::SimConfig sc;
      if (!sim_config.empty()) sc.generator = synth::parse_config(detail::read_text(sim_config));
      sc.generator.seed = sim_seed;
      sc.fault_rate = fault_rate;
      if (!sim_rolls.empty())
        for (const auto& r : detail::read_dataset(sim_rolls)) sc.replay.push_back(r.measurement);
      plc::TagServer server(plc::SimState(std::move(sc)), plc::ServerOptions{sim_listen, sim_manual ? 0 : sim_tick});
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      const auto mode = sim_tick > 0 && !sim_manual ? "tick " + std::to_string(sim_tick) + " ms" : std::string("manual");
      if (as_json) out << json{{"listen", server.address()}, {"mode", mode}}.dump() << std::endl;
      else out << "simulator listening on " << server.address() << " (" << mode << ")" << std::endl;
      detail::wait_for_stop();
      server.stop();
      return kOk;
    }

    if (*serve) {
      auto model = load_model_file(serve_model);
      predictor::RecordStore store(serve_store);
      predictor::ServiceOptions opts;
      opts.sim_address = serve_sim;
      opts.listen = serve_listen;
      opts.poll_ms = poll_ms;
      predictor::Service service(std::move(model), store, opts);
      const int port = service.start();
      std::signal(SIGINT, detail::on_signal);
      std::signal(SIGTERM, detail::on_signal);
      const auto host = plc::HostPort::parse(serve_listen).host;
      if (as_json)
        out << json{{"listen", host + ":" + std::to_string(port)}, {"sim", serve_sim}, {"rolls", store.size()}}.dump()
            << std::endl;
      else
        out << "serving on http://" << host << ":" << port << " (sim " << serve_sim << ", " << store.size()
            << " stored rolls)" << std::endl;
      detail::wait_for_stop();
      service.stop();
      return kOk;
    }

    if (*once) {
      const auto model = load_model_file(once_model);
      predictor::RecordStore store(once_store);
      auto state = predictor::poll_state_for(store);
      plc::TagClient client(once_sim);
      const auto rec = predictor::poll_cycle(client, model, store, state);
      if (!rec) {
        err << "grammage: no new roll on " << once_sim << "\n";
        return kRuntime;
      }
      if (as_json) out << predictor::record_json(*rec).dump() << "\n";
      else out << predictor::kComparisonHeader << "\n" << predictor::comparison_line(*rec) << "\n";
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "grammage: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace grammage::cli
