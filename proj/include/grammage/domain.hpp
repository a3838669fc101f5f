#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstddef>
#include <istream>
#include <iterator>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace grammage {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed dataset text. line() is 1-based.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

// A value that parses but violates a physical invariant. line() is 0 when
// the value did not come from a file.
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class DomainError : public Error {
public:
  using Error::Error;
};

class InsufficientDataError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  using Error::Error;
};

inline constexpr std::array<int, 6> kCanonicalClasses{48, 50, 58, 60, 68, 70};

class GrammageClass {
public:
  constexpr GrammageClass() = default;
  constexpr explicit GrammageClass(int gsm) : value_(gsm) {}

  constexpr int value() const { return value_; }
  constexpr bool canonical() const {
    return std::find(kCanonicalClasses.begin(), kCanonicalClasses.end(), value_) != kCanonicalClasses.end();
  }

  constexpr auto operator<=>(const GrammageClass&) const = default;

private:
  int value_ = 0;
};

inline std::vector<GrammageClass> canonical_classes() {
  std::vector<GrammageClass> out;
  for (int g : kCanonicalClasses) out.emplace_back(g);
  return out;
}

inline constexpr std::size_t kFeatureCount = 3;
using FeatureVector = std::array<double, kFeatureCount>;

struct PlausibilityBounds {
  static constexpr double diameter_mm = 2000.0;
  static constexpr double width_mm = 6000.0;
  static constexpr double weight_kg = 5000.0;
};

struct RollMeasurement {
  double diameter = 0.0;  // mm
  double width = 0.0;     // mm
  double weight = 0.0;    // kg

  FeatureVector features() const { return {diameter, width, weight}; }
  static RollMeasurement from_features(const FeatureVector& f) { return {f[0], f[1], f[2]}; }

  bool operator==(const RollMeasurement&) const = default;
};

inline const char* feature_name(std::size_t i) {
  static constexpr const char* names[] = {"diameter", "width", "weight"};
  return i < kFeatureCount ? names[i] : "?";
}

inline constexpr std::array<double, kFeatureCount> kFeatureBounds{
    PlausibilityBounds::diameter_mm, PlausibilityBounds::width_mm, PlausibilityBounds::weight_kg};

// Returns an empty string when valid, otherwise the first violation.
inline std::string measurement_violation(const RollMeasurement& m) {
  const auto f = m.features();
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (!std::isfinite(f[i]) || f[i] <= 0.0)
      return std::string(feature_name(i)) + " must be positive and finite";
    if (f[i] > kFeatureBounds[i])
      return std::string(feature_name(i)) + " exceeds plausibility bound";
  }
  return {};
}

inline bool is_valid(const RollMeasurement& m) { return measurement_violation(m).empty(); }

inline void validate(const RollMeasurement& m, std::size_t line = 0) {
  if (auto v = measurement_violation(m); !v.empty()) throw ValidationError(v, line);
}

struct LabeledInstance {
  RollMeasurement measurement;
  GrammageClass label;

  bool nonstandard() const { return !label.canonical(); }
  bool operator==(const LabeledInstance&) const = default;
};

// Ordered rows plus the sorted distinct labels present.
class Dataset {
public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledInstance> instances) : instances_(std::move(instances)) {
    for (const auto& inst : instances_) classes_.push_back(inst.label);
    std::sort(classes_.begin(), classes_.end());
    classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
  }

  const std::vector<LabeledInstance>& instances() const { return instances_; }
  const std::vector<GrammageClass>& classes() const { return classes_; }

  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }
  const LabeledInstance& operator[](std::size_t i) const { return instances_[i]; }
  auto begin() const { return instances_.begin(); }
  auto end() const { return instances_.end(); }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    std::vector<LabeledInstance> rows;
    rows.reserve(indices.size());
    for (auto i : indices) rows.push_back(instances_.at(i));
    return Dataset(std::move(rows));
  }

  // Rows whose label is in the canonical class set; `excluded` receives the
  // number dropped.
  Dataset canonical_only(std::size_t* excluded = nullptr) const {
    std::vector<LabeledInstance> rows;
    for (const auto& r : instances_)
      if (!r.nonstandard()) rows.push_back(r);
    if (excluded) *excluded = instances_.size() - rows.size();
    return Dataset(std::move(rows));
  }

  bool operator==(const Dataset& other) const { return instances_ == other.instances_; }

private:
  std::vector<LabeledInstance> instances_;
  std::vector<GrammageClass> classes_;
};

namespace detail {

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline bool parse_real(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end && std::isfinite(out);
}

// Shortest representation that reads back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Grammar: one row per line, `D WS W WS M WS G`, LF or CRLF terminated.
// Blank lines and lines starting with `#` are ignored.
inline Dataset parse_dataset(std::string_view text) {
  std::vector<LabeledInstance> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;

    const auto fields = detail::split_fields(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() != 4)
      throw ParseError(line_no, "expected 4 fields, found " + std::to_string(fields.size()));

    double v[4];
    for (std::size_t i = 0; i < 4; ++i)
      if (!detail::parse_real(fields[i], v[i]))
        throw ParseError(line_no, "field " + std::to_string(i + 1) + " is not a number: '" + std::string(fields[i]) + "'");

    RollMeasurement m{v[0], v[1], v[2]};
    validate(m, line_no);
    const long g = std::lround(v[3]);
    if (g <= 0 || g > 1000) throw ValidationError("grammage out of range", line_no);
    rows.push_back({m, GrammageClass(static_cast<int>(g))});
  }
  return Dataset(std::move(rows));
}

inline Dataset parse_dataset(std::istream& in) {
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_dataset(text);
}

inline std::string write_dataset(const Dataset& ds) {
  std::string out;
  for (const auto& r : ds) {
    out += detail::format_real(r.measurement.diameter);
    out += ' ';
    out += detail::format_real(r.measurement.width);
    out += ' ';
    out += detail::format_real(r.measurement.weight);
    out += ' ';
    out += std::to_string(r.label.value());
    out += '\n';
  }
  return out;
}

inline std::map<GrammageClass, std::size_t> class_counts(const Dataset& ds) {
  std::map<GrammageClass, std::size_t> counts;
  for (const auto& r : ds) ++counts[r.label];
  return counts;
}

}  // namespace grammage
