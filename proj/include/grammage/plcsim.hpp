#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "grammage/domain.hpp"
#include "grammage/rng.hpp"
#include "grammage/synthgen.hpp"

namespace grammage::plc {

// `db<N>,w<offset>` with an even word offset.
struct TagAddress {
  unsigned block = 0;
  unsigned offset = 0;

  std::string text() const { return "db" + std::to_string(block) + ",w" + std::to_string(offset); }

  static std::optional<TagAddress> parse(std::string_view s) {
    auto number = [](std::string_view t, unsigned& out) {
      if (t.empty() || t.size() > 9) return false;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
      return ec == std::errc{} && p == t.data() + t.size();
    };
    if (!s.starts_with("db")) return std::nullopt;
    const auto comma = s.find(",w");
    if (comma == std::string_view::npos) return std::nullopt;
    TagAddress a;
    if (!number(s.substr(2, comma - 2), a.block) || !number(s.substr(comma + 2), a.offset)) return std::nullopt;
    if (a.offset % 2 != 0) return std::nullopt;
    return a;
  }

  auto operator<=>(const TagAddress&) const = default;
};

inline const TagAddress kDiameterTag{1, 2};
inline const TagAddress kWidthTag{1, 4};
inline const TagAddress kWeightTag{1, 6};
inline const TagAddress kRollCounterTag{1, 8};
inline const TagAddress kManualGrammageTag{1, 12};

inline constexpr std::size_t kMaxLineBytes = 256;

enum class Quality { Good, Bad };

inline const char* quality_name(Quality q) { return q == Quality::Good ? "GOOD" : "BAD"; }

struct TagEntry {
  std::uint16_t value = 0;
  Quality quality = Quality::Good;
  std::int64_t timestamp_ms = 0;
  bool operator==(const TagEntry&) const = default;
};

using Clock = std::function<std::int64_t()>;

inline std::int64_t system_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

struct SimConfig {
  synth::GeneratorConfig generator = synth::GeneratorConfig::defaults();
  double fault_rate = 0.0;
  // When nonempty, rolls are replayed from here in order (cycling) instead of
  // drawn from the generator.
  std::vector<RollMeasurement> replay;
};

inline std::uint16_t to_word(double v) {
  const long long r = std::llround(v);
  return static_cast<std::uint16_t>(std::clamp<long long>(r, 0, 65535));
}

// The tag table and roll stream. Not synchronized; the server serializes
// access.
class SimState {
public:
  explicit SimState(SimConfig config, Clock clock = system_clock_ms)
      : config_(std::move(config)), clock_(std::move(clock)) {
    if (!(config_.fault_rate >= 0.0 && config_.fault_rate <= 1.0)) throw DomainError("fault_rate must be in [0,1]");
    if (config_.replay.empty()) config_.generator.validate();
    const auto now = clock_();
    for (const auto& a : {kDiameterTag, kWidthTag, kWeightTag, kRollCounterTag, kManualGrammageTag})
      tags_[a] = TagEntry{0, Quality::Good, now};
  }

  std::uint64_t roll_counter() const { return counter_; }
  const std::map<TagAddress, TagEntry>& tags() const { return tags_; }
  const TagEntry& tag(const TagAddress& a) const { return tags_.at(a); }

  // Roll t (0-based) before rounding and fault injection.
  RollMeasurement roll_at(std::uint64_t t) const {
    if (!config_.replay.empty()) return config_.replay[t % config_.replay.size()];
    return synth::clean_row(config_.generator, t).measurement;
  }

  // Index of the faulted channel for roll t, if any.
  std::optional<std::size_t> advance_roll() {
    const std::uint64_t t = counter_;
    const auto m = roll_at(t);
    std::array<std::uint16_t, kFeatureCount> words{to_word(m.diameter), to_word(m.width), to_word(m.weight)};
    std::array<Quality, kFeatureCount> quality{Quality::Good, Quality::Good, Quality::Good};

    std::optional<std::size_t> faulted;
    Rng rng = Rng(config_.generator.seed).split(kFaultStream).split(t);
    if (rng.uniform01() < config_.fault_rate) {
      const auto ch = static_cast<std::size_t>(rng.below(kFeatureCount));
      words[ch] = to_word(synth::gross_fault(words[ch], kFeatureBounds[ch], rng));
      quality[ch] = Quality::Bad;
      faulted = ch;
    }

    const auto now = clock_();
    const TagAddress measured[] = {kDiameterTag, kWidthTag, kWeightTag};
    for (std::size_t i = 0; i < kFeatureCount; ++i) set(measured[i], words[i], quality[i], now);
    set(kManualGrammageTag, 0, Quality::Good, now);
    ++counter_;
    set(kRollCounterTag, static_cast<std::uint16_t>(counter_ & 0xffff), Quality::Good, now);
    return faulted;
  }

  std::string handle_command(std::string_view line) {
    if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.size() > kMaxLineBytes) return err("BAD_SYNTAX", "line exceeds 256 bytes");
    const auto f = detail::split_fields(line);
    if (f.empty()) return err("BAD_SYNTAX", "empty command");

    if (f[0] == "READ") {
      if (f.size() != 2) return err("BAD_SYNTAX", "usage: READ <addr>");
      const auto a = TagAddress::parse(f[1]);
      if (!a) return err("BAD_SYNTAX", "bad address '" + std::string(f[1]) + "'");
      auto it = tags_.find(*a);
      if (it == tags_.end()) return err("UNKNOWN_TAG", a->text());
      const auto& e = it->second;
      return "OK " + std::to_string(e.value) + " " + quality_name(e.quality) + " " + std::to_string(e.timestamp_ms);
    }
    if (f[0] == "WRITE") {
      if (f.size() != 3) return err("BAD_SYNTAX", "usage: WRITE <addr> <uint16>");
      const auto a = TagAddress::parse(f[1]);
      if (!a) return err("BAD_SYNTAX", "bad address '" + std::string(f[1]) + "'");
      if (!tags_.count(*a)) return err("UNKNOWN_TAG", a->text());
      unsigned long long v = 0;
      const auto s = f[2];
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec == std::errc::result_out_of_range) return err("RANGE", "value exceeds 65535");
      if (ec != std::errc{} || p != s.data() + s.size()) return err("BAD_SYNTAX", "bad value '" + std::string(s) + "'");
      if (v > 65535) return err("RANGE", "value exceeds 65535");
      if (*a == kRollCounterTag) return err("RANGE", a->text() + " is read-only");
      set(*a, static_cast<std::uint16_t>(v), Quality::Good, clock_());
      return "OK";
    }
    if (f[0] == "ADVANCE") {
      if (f.size() != 1) return err("BAD_SYNTAX", "usage: ADVANCE");
      advance_roll();
      return "OK " + std::to_string(counter_);
    }
    return err("BAD_SYNTAX", "unknown command '" + std::string(f[0]) + "'");
  }

private:
  static constexpr std::uint64_t kFaultStream = 11;

  static std::string err(const char* code, const std::string& msg) { return std::string("ERR ") + code + " " + msg; }

  void set(const TagAddress& a, std::uint16_t v, Quality q, std::int64_t now) {
    auto& e = tags_[a];
    e.value = v;
    e.quality = q;
    e.timestamp_ms = std::max(e.timestamp_ms, now);
  }

  SimConfig config_;
  Clock clock_;
  std::map<TagAddress, TagEntry> tags_;
  std::uint64_t counter_ = 0;
};

}  // namespace grammage::plc
