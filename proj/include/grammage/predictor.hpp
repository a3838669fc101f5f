#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "grammage/eval.hpp"
#include "grammage/model.hpp"
#include "grammage/plcnet.hpp"

namespace grammage::predictor {

using json = nlohmann::ordered_json;
using plc::Quality;

class UnknownRollError : public Error {
public:
  explicit UnknownRollError(std::uint64_t id) : Error("unknown roll " + std::to_string(id)) {}
};

class DuplicateLabelError : public Error {
public:
  explicit DuplicateLabelError(std::uint64_t id) : Error("roll " + std::to_string(id) + " is already labeled") {}
};

class NonstandardClassError : public Error {
public:
  explicit NonstandardClassError(int g) : Error(std::to_string(g) + " is not a standard grammage class") {}
};

class DuplicateRollError : public Error {
public:
  explicit DuplicateRollError(std::uint64_t id) : Error("roll " + std::to_string(id) + " already stored") {}
};

class StoreError : public Error {
public:
  using Error::Error;
};

struct RollRecord {
  std::uint64_t roll_id = 0;
  RollMeasurement measurement;
  std::array<Quality, kFeatureCount> quality{Quality::Good, Quality::Good, Quality::Good};
  bool fault = false;
  std::optional<GrammageClass> predicted;
  std::optional<double> confidence;
  std::optional<GrammageClass> manual;
  std::int64_t received_at = 0;
  std::optional<std::int64_t> labeled_at;

  bool mismatch() const { return predicted && manual && *predicted != *manual; }
  bool operator==(const RollRecord&) const = default;
};

struct SessionStats {
  std::size_t rolls_seen = 0;
  // Labeled rolls that carry a prediction; these are the matrix entries.
  std::size_t rolls_labeled = 0;
  std::size_t agreement_count = 0;
  // Labeled rolls without a prediction (faulted); kept out of the matrix.
  std::size_t labeled_faulted = 0;
  ConfusionMatrix confusion{canonical_classes()};

  std::optional<double> agreement_rate() const {
    if (rolls_labeled == 0) return std::nullopt;
    return static_cast<double>(agreement_count) / static_cast<double>(rolls_labeled);
  }

  void count_roll() { ++rolls_seen; }

  void count_label(const RollRecord& r) {
    if (!r.predicted) {
      ++labeled_faulted;
      return;
    }
    confusion.add(*r.manual, *r.predicted);
    ++rolls_labeled;
    if (*r.manual == *r.predicted) ++agreement_count;
  }

  bool operator==(const SessionStats&) const = default;
};

inline SessionStats compute_stats(const std::vector<RollRecord>& records) {
  SessionStats s;
  for (const auto& r : records) {
    s.count_roll();
    if (r.manual) s.count_label(r);
  }
  return s;
}

// JSON ---------------------------------------------------------------------

inline json class_json(const std::optional<GrammageClass>& g) { return g ? json(g->value()) : json(nullptr); }

inline json record_json(const RollRecord& r) {
  json q = json::object();
  for (std::size_t i = 0; i < kFeatureCount; ++i) q[feature_name(i)] = plc::quality_name(r.quality[i]);
  return json{{"roll_id", r.roll_id},
              {"diameter", r.measurement.diameter},
              {"width", r.measurement.width},
              {"weight", r.measurement.weight},
              {"quality", q},
              {"fault", r.fault},
              {"predicted", class_json(r.predicted)},
              {"confidence", r.confidence ? json(*r.confidence) : json(nullptr)},
              {"manual", class_json(r.manual)},
              {"mismatch", r.mismatch()},
              {"received_at", r.received_at},
              {"labeled_at", r.labeled_at ? json(*r.labeled_at) : json(nullptr)}};
}

inline RollRecord record_from_json(const json& j) {
  RollRecord r;
  r.roll_id = j.at("roll_id").get<std::uint64_t>();
  r.measurement = {j.at("diameter").get<double>(), j.at("width").get<double>(), j.at("weight").get<double>()};
  const auto& q = j.at("quality");
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto s = q.at(feature_name(i)).get<std::string>();
    if (s != "GOOD" && s != "BAD") throw StoreError("bad quality '" + s + "'");
    r.quality[i] = s == "GOOD" ? Quality::Good : Quality::Bad;
  }
  r.fault = j.at("fault").get<bool>();
  auto cls = [&](const char* key) -> std::optional<GrammageClass> {
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return GrammageClass(v.get<int>());
  };
  r.predicted = cls("predicted");
  if (!j.at("confidence").is_null()) r.confidence = j.at("confidence").get<double>();
  r.manual = cls("manual");
  r.received_at = j.at("received_at").get<std::int64_t>();
  if (!j.at("labeled_at").is_null()) r.labeled_at = j.at("labeled_at").get<std::int64_t>();
  return r;
}

inline json stats_json(const SessionStats& s) {
  json classes = json::array();
  for (auto g : s.confusion.classes) classes.push_back(g.value());
  json percent = json::array();
  for (const auto& row : column_normalize(s.confusion)) {
    json r = json::array();
    for (double v : row) r.push_back(format_percent(v));
    percent.push_back(r);
  }
  const auto rate = s.agreement_rate();
  return json{{"rolls_seen", s.rolls_seen},
              {"rolls_labeled", s.rolls_labeled},
              {"agreement_count", s.agreement_count},
              {"agreement_rate", rate ? json(*rate) : json(nullptr)},
              {"agreement_percent", rate ? json(format_percent(100.0 * *rate)) : json(nullptr)},
              {"labeled_faulted", s.labeled_faulted},
              {"classes", classes},
              {"confusion", s.confusion.counts},
              {"confusion_percent", percent}};
}

// Store --------------------------------------------------------------------

// Append-only NDJSON event log:
//   {"type":"roll", <record fields>}
//   {"type":"manual","roll_id":N,"grammage":G,"labeled_at":T}
// State and stats are rebuilt by replaying the log. An empty path keeps the
// store in memory only.
class RecordStore {
public:
  explicit RecordStore(std::string path = {}) : path_(std::move(path)) {
    if (path_.empty()) return;
    {
      std::ifstream in(path_, std::ios::binary);
      if (in) {
        std::stringstream ss;
        ss << in.rdbuf();
        replay(ss.str());
      }
    }
    out_.open(path_, std::ios::binary | std::ios::app);
    if (!out_) throw StoreError("cannot open store '" + path_ + "'");
  }

  RecordStore(const RecordStore&) = delete;
  RecordStore& operator=(const RecordStore&) = delete;

  void append(const RollRecord& r) {
    std::lock_guard lock(mutex_);
    if (index_.count(r.roll_id)) throw DuplicateRollError(r.roll_id);
    if (r.manual && !r.manual->canonical()) throw NonstandardClassError(r.manual->value());
    json line{{"type", "roll"}};
    line.update(record_json(r));
    line.erase("mismatch");
    write(line);
    apply_roll(r);
  }

  // Returns the labeled record.
  RollRecord label(std::uint64_t id, GrammageClass g, std::int64_t labeled_at) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(id);
    if (it == index_.end()) throw UnknownRollError(id);
    if (records_[it->second].manual) throw DuplicateLabelError(id);
    if (!g.canonical()) throw NonstandardClassError(g.value());
    write(json{{"type", "manual"}, {"roll_id", id}, {"grammage", g.value()}, {"labeled_at", labeled_at}});
    apply_label(it->second, g, labeled_at);
    return records_[it->second];
  }

  std::optional<RollRecord> get(std::uint64_t id) const {
    std::lock_guard lock(mutex_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return records_[it->second];
  }

  std::optional<RollRecord> latest() const {
    std::lock_guard lock(mutex_);
    if (records_.empty()) return std::nullopt;
    return records_.back();
  }

  // Newest first.
  std::vector<RollRecord> recent(std::size_t limit) const {
    std::lock_guard lock(mutex_);
    std::vector<RollRecord> out;
    for (auto it = records_.rbegin(); it != records_.rend() && out.size() < limit; ++it) out.push_back(*it);
    return out;
  }

  std::vector<RollRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

  SessionStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
  }

  std::optional<std::uint64_t> last_roll_id() const {
    std::lock_guard lock(mutex_);
    if (records_.empty()) return std::nullopt;
    return records_.back().roll_id;
  }

  const std::string& path() const { return path_; }

private:
  void write(const json& line) {
    if (path_.empty()) return;
    out_ << line.dump() << '\n';
    out_.flush();
    if (!out_) throw StoreError("write to '" + path_ + "' failed");
  }

  void apply_roll(const RollRecord& r) {
    index_[r.roll_id] = records_.size();
    records_.push_back(r);
    stats_.count_roll();
    if (r.manual) stats_.count_label(r);
  }

  void apply_label(std::size_t i, GrammageClass g, std::int64_t at) {
    records_[i].manual = g;
    records_[i].labeled_at = at;
    stats_.count_label(records_[i]);
  }

  // A final line without LF is a write cut short by a crash and is dropped.
  void replay(const std::string& text) {
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
      const auto nl = text.find('\n', pos);
      if (nl == std::string::npos) break;
      const auto line = std::string_view(text).substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (line.empty()) continue;
      try {
        const auto j = json::parse(line);
        const auto type = j.at("type").get<std::string>();
        if (type == "roll") {
          const auto r = record_from_json(j);
          if (index_.count(r.roll_id)) throw DuplicateRollError(r.roll_id);
          if (r.manual && !r.manual->canonical()) throw NonstandardClassError(r.manual->value());
          apply_roll(r);
        } else if (type == "manual") {
          const auto id = j.at("roll_id").get<std::uint64_t>();
          const GrammageClass g(j.at("grammage").get<int>());
          auto it = index_.find(id);
          if (it == index_.end()) throw UnknownRollError(id);
          if (records_[it->second].manual) throw DuplicateLabelError(id);
          if (!g.canonical()) throw NonstandardClassError(g.value());
          apply_label(it->second, g, j.at("labeled_at").get<std::int64_t>());
        } else {
          throw StoreError("unknown event type '" + type + "'");
        }
      } catch (const json::exception& e) {
        throw StoreError(path_ + ":" + std::to_string(line_no) + ": " + e.what());
      } catch (const Error& e) {
        throw StoreError(path_ + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::string path_;
  std::ofstream out_;
  mutable std::mutex mutex_;
  std::vector<RollRecord> records_;
  std::map<std::uint64_t, std::size_t> index_;
  SessionStats stats_;
};

// Polling ------------------------------------------------------------------

// The counter tag is 16 bits; ids are unwrapped to a monotone 64-bit sequence.
inline std::uint64_t unwrap_roll_id(std::uint64_t last_id, std::uint16_t raw) {
  return last_id + static_cast<std::uint16_t>(raw - static_cast<std::uint16_t>(last_id & 0xffff));
}

struct PollState {
  std::optional<std::uint64_t> last_id;
  std::size_t torn_reads = 0;
};

inline PollState poll_state_for(const RecordStore& store) { return PollState{store.last_roll_id(), 0}; }

inline constexpr int kTornReadRetries = 3;

// One read-predict-store cycle. Returns the stored record, or nothing when the
// counter has not moved. Transport failures propagate as ConnectionError or
// ServerError; the caller counts them.
inline std::optional<RollRecord> poll_cycle(plc::TagClient& client, const Model& model, RecordStore& store,
                                            PollState& state, const plc::Clock& clock = plc::system_clock_ms) {
  for (int attempt = 0; attempt < kTornReadRetries; ++attempt) {
    const auto raw = client.read_tag(plc::kRollCounterTag).value;
    if (state.last_id ? raw == (*state.last_id & 0xffff) : raw == 0) return std::nullopt;

    const auto d = client.read_tag(plc::kDiameterTag);
    const auto w = client.read_tag(plc::kWidthTag);
    const auto m = client.read_tag(plc::kWeightTag);
    const auto manual = client.read_tag(plc::kManualGrammageTag);
    if (client.read_tag(plc::kRollCounterTag).value != raw) {
      ++state.torn_reads;
      continue;
    }

    RollRecord r;
    r.roll_id = state.last_id ? unwrap_roll_id(*state.last_id, raw) : raw;
    r.measurement = {double(d.value), double(w.value), double(m.value)};
    r.quality = {d.quality, w.quality, m.quality};
    r.fault = std::any_of(r.quality.begin(), r.quality.end(), [](Quality q) { return q == Quality::Bad; });
    r.received_at = clock();
    if (!r.fault) {
      const auto p = model.predict(r.measurement);
      r.predicted = p.label;
      r.confidence = p.confidence;
    }
    if (manual.value != 0 && GrammageClass(manual.value).canonical()) {
      r.manual = GrammageClass(manual.value);
      r.labeled_at = r.received_at;
    }
    store.append(r);
    state.last_id = r.roll_id;
    return r;
  }
  return std::nullopt;
}

// Attaches an operator label. The label is written back to the manual tag
// only when `id` is the roll currently on the tags; `written_back` reports
// whether that happened. A failed write-back leaves the stored label in place.
inline SessionStats record_manual(RecordStore& store, plc::TagClient* client, std::uint64_t id, int grammage,
                                  std::int64_t now, bool* written_back = nullptr) {
  if (written_back) *written_back = false;
  store.label(id, GrammageClass(grammage), now);
  if (client && store.last_roll_id() == id) {
    try {
      client->write_tag(plc::kManualGrammageTag, static_cast<std::uint16_t>(grammage));
      if (written_back) *written_back = true;
    } catch (const plc::ConnectionError&) {
    } catch (const plc::ServerError&) {
    }
  }
  return store.stats();
}

// `diameter width weight predicted_grammage manual_grammage`, with `-` for an
// absent value.
inline const char* kComparisonHeader = "diameter width weight predicted_grammage manual_grammage";

inline std::string comparison_line(const RollRecord& r) {
  auto cls = [](const std::optional<GrammageClass>& g) { return g ? std::to_string(g->value()) : std::string("-"); };
  return detail::format_real(r.measurement.diameter) + " " + detail::format_real(r.measurement.width) + " " +
         detail::format_real(r.measurement.weight) + " " + cls(r.predicted) + " " + cls(r.manual);
}

}  // namespace grammage::predictor
