// Generate, clean, split, train and score, then classify the rows of a small
// hand-entered sample file.
#include <fstream>
#include <iostream>

#include "grammage/grammage.hpp"

using namespace grammage;

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::stoull(argv[1]) : 7;
  auto cfg = synth::GeneratorConfig::defaults();
  cfg.seed = seed;

  const auto raw = synth::generate(cfg);
  const auto clean = filter_outliers(raw, 0.20);
  const auto split = stratified_split(clean.inliers, 0.70, seed);
  std::cout << "rows " << raw.size() << ", outliers " << clean.outliers.size() << ", train " << split.train.size()
            << ", test " << split.test.size() << "\n";

  const auto model = train_model(LearnerSpec::of(LearnerKind::AdaBoost), split.train, seed);
  const auto cm = evaluate(model, split.test);
  std::cout << "test CA " << metrics(cm).accuracy << "\n" << render_normalized(cm);

  if (argc > 2) {
    std::ifstream in(argv[2]);
    const auto sample = parse_dataset(in);
    std::cout << "\ndiameter width weight grammage predicted confidence\n";
    for (const auto& r : sample) {
      const auto p = model.predict(r.measurement);
      std::cout << r.measurement.diameter << " " << r.measurement.width << " " << r.measurement.weight << " "
                << r.label.value() << " " << p.label.value() << " " << p.confidence << "\n";
    }
  }
}
