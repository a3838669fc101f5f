#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "grammage/domain.hpp"
#include "grammage/rng.hpp"

namespace grammage::synth {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Interval&) const = default;
};

// Roll sizes a grade is wound to. Each grade ships in its own customer format.
struct ProductFormat {
  Interval diameter;  // mm
  Interval width;     // mm
  bool operator==(const ProductFormat&) const = default;
};

struct GeneratorConfig {
  std::size_t n_instances = 9589;
  double core_diameter = 100.0;                      // mm
  std::map<GrammageClass, double> bulk;              // cm^3/g
  std::map<GrammageClass, double> class_weights;     // probabilities
  std::map<GrammageClass, ProductFormat> formats;
  double sensor_noise_sigma = 0.01;                  // relative, per channel
  double outlier_rate = 0.20;
  double label_noise_rate = 0.01;
  std::uint64_t seed = 0;

  static GeneratorConfig defaults();

  std::vector<GrammageClass> classes() const {
    std::vector<GrammageClass> out;
    for (const auto& [g, w] : class_weights) out.push_back(g);
    return out;
  }

  void validate() const;

  bool operator==(const GeneratorConfig&) const = default;
};

// Wound length in meters: annulus area over sheet thickness.
inline double roll_length(double outer_diameter_mm, double core_diameter_mm, double caliper_um) {
  if (!(caliper_um > 0.0)) throw DomainError("caliper must be positive");
  if (core_diameter_mm < 0.0) throw DomainError("core diameter must be nonnegative");
  if (outer_diameter_mm < core_diameter_mm) throw DomainError("outer diameter smaller than core");
  const double big = outer_diameter_mm / 1000.0;
  const double small = core_diameter_mm / 1000.0;
  return std::numbers::pi * (big * big - small * small) / (4.0 * caliper_um * 1e-6);
}

inline double roll_mass(double grammage_gsm, double width_mm, double length_m) {
  return grammage_gsm * (width_mm / 1000.0) * length_m / 1000.0;
}

inline double caliper_for(double grammage_gsm, double bulk_cm3_per_g) { return bulk_cm3_per_g * grammage_gsm; }

inline double caliper_for(GrammageClass g, const std::map<GrammageClass, double>& bulk_table) {
  auto it = bulk_table.find(g);
  if (it == bulk_table.end()) throw DomainError("no bulk entry for class " + std::to_string(g.value()));
  return caliper_for(static_cast<double>(g.value()), it->second);
}

// Noise-free mass of a roll of grade g.
inline double exact_mass(GrammageClass g, double diameter_mm, double width_mm, const GeneratorConfig& cfg) {
  const double length = roll_length(diameter_mm, cfg.core_diameter, caliper_for(g, cfg.bulk));
  return roll_mass(g.value(), width_mm, length);
}

// Inverse of exact_mass: the bulk implied by a measured roll.
inline double implied_bulk(const RollMeasurement& m, double core_diameter_mm) {
  const double big = m.diameter / 1000.0;
  const double small = core_diameter_mm / 1000.0;
  const double volume_m3 = (m.width / 1000.0) * std::numbers::pi * (big * big - small * small) / 4.0;
  return volume_m3 / m.weight * 1000.0;  // m^3/kg -> cm^3/g
}

inline GrammageClass nearest_bulk_class(double bulk, const std::map<GrammageClass, double>& table) {
  GrammageClass best;
  double best_gap = INFINITY;
  for (const auto& [g, b] : table) {
    const double gap = std::abs(b - bulk);
    if (gap < best_gap) {
      best_gap = gap;
      best = g;
    }
  }
  return best;
}

inline GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.bulk = {{GrammageClass(48), 1.62}, {GrammageClass(50), 1.60}, {GrammageClass(58), 1.58},
            {GrammageClass(60), 1.37}, {GrammageClass(68), 1.15}, {GrammageClass(70), 1.12}};
  const std::map<int, double> counts{{48, 2141}, {50, 316}, {58, 209}, {60, 4}, {68, 57}, {70, 2643}};
  const double total = 5370.0;
  for (const auto& [g, n] : counts) c.class_weights[GrammageClass(g)] = n / total;
  c.formats = {
      {GrammageClass(48), {{780, 880}, {620, 720}}},
      {GrammageClass(50), {{850, 950}, {950, 1050}}},
      {GrammageClass(58), {{920, 1020}, {760, 860}}},
      {GrammageClass(60), {{850, 950}, {850, 950}}},
      {GrammageClass(68), {{950, 1050}, {800, 1000}}},
      {GrammageClass(70), {{900, 1050}, {800, 1000}}},
  };
  return c;
}

inline void GeneratorConfig::validate() const {
  if (class_weights.empty()) throw DomainError("generator needs at least one class");
  double sum = 0.0;
  for (const auto& [g, w] : class_weights) {
    if (!(w >= 0.0)) throw DomainError("class weight must be nonnegative");
    sum += w;
    if (!bulk.count(g)) throw DomainError("missing bulk for class " + std::to_string(g.value()));
    auto f = formats.find(g);
    if (f == formats.end()) throw DomainError("missing format for class " + std::to_string(g.value()));
    const auto& fmt = f->second;
    if (!(fmt.diameter.lo > core_diameter && fmt.diameter.lo <= fmt.diameter.hi))
      throw DomainError("bad diameter range for class " + std::to_string(g.value()));
    if (!(fmt.width.lo > 0.0 && fmt.width.lo <= fmt.width.hi))
      throw DomainError("bad width range for class " + std::to_string(g.value()));
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("class weights must sum to 1");
  double prev = INFINITY;
  for (const auto& [g, b] : bulk) {
    if (!(b > 0.0)) throw DomainError("bulk must be positive");
    if (!(b < prev)) throw DomainError("bulk must strictly decrease with grammage");
    prev = b;
  }
  if (!(core_diameter >= 0.0)) throw DomainError("core diameter must be nonnegative");
  if (!(sensor_noise_sigma >= 0.0)) throw DomainError("sensor noise must be nonnegative");
  if (!(outlier_rate >= 0.0 && outlier_rate < 1.0)) throw DomainError("outlier_rate must be in [0,1)");
  if (!(label_noise_rate >= 0.0 && label_noise_rate < 1.0)) throw DomainError("label_noise_rate must be in [0,1)");
  if (!(outlier_rate + label_noise_rate < 1.0)) throw DomainError("outlier_rate + label_noise_rate must be < 1");
}

// Stream identifiers under the config seed.
enum Stream : std::uint64_t { kRowStream = 1, kSelectStream = 2, kFaultStream = 3, kLabelStream = 4 };

// Row t of the inlier stream: grade, format, exact mass, then multiplicative
// sensor noise. Depends only on (config, t).
inline LabeledInstance clean_row(const GeneratorConfig& cfg, std::uint64_t t) {
  Rng rng = Rng(cfg.seed).split(kRowStream).split(t);

  const double u = rng.uniform01();
  GrammageClass g = cfg.class_weights.rbegin()->first;
  double cum = 0.0;
  for (const auto& [cls, w] : cfg.class_weights) {
    cum += w;
    if (u < cum) {
      g = cls;
      break;
    }
  }

  const auto& fmt = cfg.formats.at(g);
  const double d = rng.uniform(fmt.diameter.lo, fmt.diameter.hi);
  const double w = rng.uniform(fmt.width.lo, fmt.width.hi);
  const double m = exact_mass(g, d, w, cfg);

  const double s = cfg.sensor_noise_sigma;
  RollMeasurement meas{d * (1.0 + s * rng.normal()), w * (1.0 + s * rng.normal()), m * (1.0 + s * rng.normal())};
  return {meas, g};
}

// Gross scale fault: factor uniform in [0.1, 0.5] or [2, 5] with equal odds.
// An up-scale that would cross the channel's plausibility bound is mirrored
// to 1/factor so the row still parses.
inline double gross_fault(double value, double bound, Rng& rng) {
  const bool low = rng.uniform01() < 0.5;
  double factor = low ? rng.uniform(0.1, 0.5) : rng.uniform(2.0, 5.0);
  if (!low && value * factor > bound) factor = 1.0 / factor;
  return value * factor;
}

// Corrupts one uniformly chosen channel; returns the channel index.
inline std::size_t inject_fault(RollMeasurement& m, Rng& rng) {
  const auto channel = static_cast<std::size_t>(rng.below(kFeatureCount));
  auto f = m.features();
  f[channel] = gross_fault(f[channel], kFeatureBounds[channel], rng);
  m = RollMeasurement::from_features(f);
  return channel;
}

inline GrammageClass adjacent_class(GrammageClass g, const std::vector<GrammageClass>& classes, Rng& rng) {
  auto it = std::find(classes.begin(), classes.end(), g);
  if (it == classes.end() || classes.size() < 2) return g;
  if (it == classes.begin()) return *(it + 1);
  if (it + 1 == classes.end()) return *(it - 1);
  return rng.uniform01() < 0.5 ? *(it - 1) : *(it + 1);
}

struct Generated {
  Dataset data;
  std::vector<std::size_t> fault_rows;     // ascending
  std::vector<std::size_t> relabeled_rows; // ascending
};

inline Generated generate_detailed(const GeneratorConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_instances;
  std::vector<LabeledInstance> rows;
  rows.reserve(n);
  for (std::size_t t = 0; t < n; ++t) rows.push_back(clean_row(cfg, t));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng select = Rng(cfg.seed).split(kSelectStream);
  select.shuffle(order.begin(), order.end());

  const auto n_fault = static_cast<std::size_t>(std::llround(cfg.outlier_rate * static_cast<double>(n)));
  const auto n_label = static_cast<std::size_t>(std::llround(cfg.label_noise_rate * static_cast<double>(n)));

  Generated out;
  const auto classes = cfg.classes();
  for (std::size_t k = 0; k < n_fault; ++k) {
    const auto i = order[k];
    Rng rng = Rng(cfg.seed).split(kFaultStream).split(i);
    inject_fault(rows[i].measurement, rng);
    out.fault_rows.push_back(i);
  }
  for (std::size_t k = n_fault; k < n_fault + n_label && k < n; ++k) {
    const auto i = order[k];
    Rng rng = Rng(cfg.seed).split(kLabelStream).split(i);
    rows[i].label = adjacent_class(rows[i].label, classes, rng);
    out.relabeled_rows.push_back(i);
  }
  std::sort(out.fault_rows.begin(), out.fault_rows.end());
  std::sort(out.relabeled_rows.begin(), out.relabeled_rows.end());
  out.data = Dataset(std::move(rows));
  return out;
}

inline Dataset generate(const GeneratorConfig& cfg) { return generate_detailed(cfg).data; }

// Flat `key = value` text form. Keys:
//   n_instances, core_diameter, sensor_noise_sigma, outlier_rate,
//   label_noise_rate, seed, bulk.<g>, weight.<g>, format.<g>.diameter <lo> <hi>,
//   format.<g>.width <lo> <hi>
// Per-class keys override the defaults for that class. Weights are
// renormalized to sum to 1 after loading.
inline GeneratorConfig parse_config(std::string_view text) {
  GeneratorConfig cfg = GeneratorConfig::defaults();
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  bool weights_given = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    const auto fields = detail::split_fields(line);
    if (fields.empty()) continue;
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    auto key_fields = detail::split_fields(std::string_view(line).substr(0, eq));
    auto vals = detail::split_fields(std::string_view(line).substr(eq + 1));
    if (key_fields.size() != 1 || vals.empty()) throw ParseError(line_no, "expected key = value");
    const std::string key(key_fields[0]);

    std::vector<double> nums;
    for (auto v : vals) {
      double x;
      if (!detail::parse_real(v, x)) throw ParseError(line_no, "not a number: '" + std::string(v) + "'");
      nums.push_back(x);
    }
    auto one = [&]() {
      if (nums.size() != 1) throw ParseError(line_no, key + " takes one value");
      return nums[0];
    };
    auto pair = [&]() {
      if (nums.size() != 2) throw ParseError(line_no, key + " takes two values");
      return Interval{nums[0], nums[1]};
    };
    auto class_of = [&](std::string_view rest) {
      double g;
      if (!detail::parse_real(rest, g)) throw ParseError(line_no, "bad class in key " + key);
      return GrammageClass(static_cast<int>(std::lround(g)));
    };

    if (key == "n_instances") cfg.n_instances = static_cast<std::size_t>(one());
    else if (key == "core_diameter") cfg.core_diameter = one();
    else if (key == "sensor_noise_sigma") cfg.sensor_noise_sigma = one();
    else if (key == "outlier_rate") cfg.outlier_rate = one();
    else if (key == "label_noise_rate") cfg.label_noise_rate = one();
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(one());
    else if (key.starts_with("bulk.")) cfg.bulk[class_of(std::string_view(key).substr(5))] = one();
    else if (key.starts_with("weight.")) {
      if (!weights_given) cfg.class_weights.clear();
      weights_given = true;
      cfg.class_weights[class_of(std::string_view(key).substr(7))] = one();
    } else if (key.starts_with("format.")) {
      const auto rest = std::string_view(key).substr(7);
      const auto dot = rest.find('.');
      if (dot == std::string_view::npos) throw ParseError(line_no, "bad format key " + key);
      const auto g = class_of(rest.substr(0, dot));
      const auto what = rest.substr(dot + 1);
      if (what == "diameter") cfg.formats[g].diameter = pair();
      else if (what == "width") cfg.formats[g].width = pair();
      else throw ParseError(line_no, "bad format key " + key);
    } else {
      throw ParseError(line_no, "unknown key " + key);
    }
  }
  double sum = 0.0;
  for (const auto& [g, w] : cfg.class_weights) sum += w;
  if (sum > 0.0)
    for (auto& [g, w] : cfg.class_weights) w /= sum;
  return cfg;
}

inline std::string write_config(const GeneratorConfig& cfg) {
  using detail::format_real;
  std::ostringstream out;
  out << "n_instances = " << cfg.n_instances << '\n'
      << "core_diameter = " << format_real(cfg.core_diameter) << '\n'
      << "sensor_noise_sigma = " << format_real(cfg.sensor_noise_sigma) << '\n'
      << "outlier_rate = " << format_real(cfg.outlier_rate) << '\n'
      << "label_noise_rate = " << format_real(cfg.label_noise_rate) << '\n'
      << "seed = " << cfg.seed << '\n';
  for (const auto& [g, b] : cfg.bulk) out << "bulk." << g.value() << " = " << format_real(b) << '\n';
  for (const auto& [g, w] : cfg.class_weights) out << "weight." << g.value() << " = " << format_real(w) << '\n';
  for (const auto& [g, f] : cfg.formats) {
    out << "format." << g.value() << ".diameter = " << format_real(f.diameter.lo) << ' ' << format_real(f.diameter.hi) << '\n';
    out << "format." << g.value() << ".width = " << format_real(f.width.lo) << ' ' << format_real(f.width.hi) << '\n';
  }
  return out.str();
}

}  // namespace grammage::synth
