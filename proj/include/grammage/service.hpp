#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
// <resolv.h> defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

#include "grammage/predictor.hpp"

namespace grammage::predictor {

struct ServiceOptions {
  std::string sim_address = plc::default_sim_address();
  std::string listen = "127.0.0.1:8080";
  int poll_ms = 500;
  int sim_timeout_ms = 2000;
  plc::Clock clock = plc::system_clock_ms;
};

inline constexpr std::size_t kDefaultRollLimit = 50;
inline constexpr std::size_t kMaxRollLimit = 1000;

// Recent pushed events with sequence numbers, for the streaming endpoint.
class EventHub {
public:
  void publish(std::string event, const json& data) {
    {
      std::lock_guard lock(mutex_);
      events_.push_back("event: " + event + "\ndata: " + data.dump() + "\n\n");
      if (events_.size() > kKeep) {
        events_.pop_front();
        ++first_;
      }
    }
    cv_.notify_all();
  }

  std::uint64_t head() const {
    std::lock_guard lock(mutex_);
    return first_ + events_.size();
  }

  // Events from `cursor` on, waiting up to `wait` for one to appear. Events
  // that already fell out of the window are skipped.
  std::string take(std::uint64_t& cursor, std::chrono::milliseconds wait) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, wait, [&] { return closed_ || cursor < first_ + events_.size(); });
    std::string out;
    if (cursor < first_) cursor = first_;
    for (; cursor < first_ + events_.size(); ++cursor) out += events_[cursor - first_];
    return out;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
  }

private:
  static constexpr std::size_t kKeep = 256;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<std::string> events_;
  std::uint64_t first_ = 0;
  bool closed_ = false;
};

// Poller plus HTTP API. The poller is the only writer of roll records; the
// manual endpoint is the only other writer and is serialized by the store.
class Service {
public:
  Service(Model model, RecordStore& store, ServiceOptions options)
      : model_(std::move(model)), store_(store), options_(std::move(options)), state_(poll_state_for(store)) {
    if (options_.poll_ms <= 0) throw DomainError("poll interval must be positive");
    routes();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  // Binds the API and starts both threads. Returns the bound port.
  int start() {
    const auto hp = plc::HostPort::parse(options_.listen);
    int port = 0;
    if (hp.port == "0") {
      port = http_.bind_to_any_port(hp.host);
    } else {
      port = std::stoi(hp.port);
      if (!http_.bind_to_port(hp.host, port)) port = -1;
    }
    if (port <= 0) throw plc::ConnectionError("cannot listen on " + options_.listen);
    port_ = port;
    http_thread_ = std::thread([this] { http_.listen_after_bind(); });
    poll_thread_ = std::thread([this] { poll_loop(); });
    http_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    events_.close();
    poll_cv_.notify_all();
    if (poll_thread_.joinable()) poll_thread_.join();
    http_.stop();
    if (http_thread_.joinable()) http_thread_.join();
  }

  int port() const { return port_; }
  std::size_t poll_errors() const { return poll_errors_; }
  bool sim_connected() const { return connected_; }

private:
  static void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& msg) {
    send_json(res, json{{"error", msg}}, status);
  }

  static std::optional<std::uint64_t> parse_id(const std::string& s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
  }

  void routes() {
    http_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    http_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    http_.Get("/api/health", [this](const httplib::Request&, httplib::Response& res) {
      const auto last = last_poll_at_.load();
      send_json(res, json{{"status", "ok"},
                          {"model", model_.spec.name()},
                          {"sim_address", options_.sim_address},
                          {"sim_connected", connected_.load()},
                          {"poll_ms", options_.poll_ms},
                          {"poll_errors", poll_errors_.load()},
                          {"rolls_seen", store_.size()},
                          {"last_poll_at", last ? json(last) : json(nullptr)}});
    });

    http_.Get("/api/rolls/latest", [this](const httplib::Request&, httplib::Response& res) {
      if (auto r = store_.latest()) return send_json(res, record_json(*r));
      send_error(res, 404, "no rolls yet");
    });

    http_.Get(R"(/api/rolls/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return send_error(res, 400, "bad roll id");
      if (auto r = store_.get(*id)) return send_json(res, record_json(*r));
      send_error(res, 404, "unknown roll " + req.matches[1].str());
    });

    http_.Get("/api/rolls", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t limit = kDefaultRollLimit;
      if (req.has_param("limit")) {
        const auto v = parse_id(req.get_param_value("limit"));
        if (!v || *v < 1 || *v > kMaxRollLimit)
          return send_error(res, 400, "limit must be an integer in [1, " + std::to_string(kMaxRollLimit) + "]");
        limit = static_cast<std::size_t>(*v);
      }
      json rolls = json::array();
      for (const auto& r : store_.recent(limit)) rolls.push_back(record_json(r));
      send_json(res, json{{"rolls", rolls}, {"total", store_.size()}});
    });

    http_.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, stats_json(store_.stats()));
    });

    http_.Post(R"(/api/rolls/(\d+)/manual)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return send_error(res, 400, "bad roll id");
      int grammage = 0;
      try {
        const auto body = json::parse(req.body);
        const auto& g = body.at("grammage");
        if (!g.is_number_integer()) return send_error(res, 400, "grammage must be an integer");
        grammage = g.get<int>();
      } catch (const json::exception&) {
        return send_error(res, 400, "body must be {\"grammage\": <class>}");
      }
      try {
        bool written = false;
        SessionStats stats;
        {
          std::lock_guard lock(client_mutex_);
          stats = record_manual(store_, client_.get(), *id, grammage, options_.clock(), &written);
        }
        const auto rec = *store_.get(*id);
        events_.publish("roll", record_json(rec));
        send_json(res, json{{"roll", record_json(rec)}, {"stats", stats_json(stats)}, {"written_back", written}});
      } catch (const UnknownRollError& e) {
        send_error(res, 404, e.what());
      } catch (const DuplicateLabelError& e) {
        send_error(res, 409, e.what());
      } catch (const NonstandardClassError& e) {
        send_error(res, 422, e.what());
      }
    });

    http_.Get("/api/events", [this](const httplib::Request&, httplib::Response& res) {
      auto cursor = std::make_shared<std::uint64_t>(events_.head());
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
        if (events_.closed()) {
          sink.done();
          return true;
        }
        auto chunk = events_.take(*cursor, std::chrono::milliseconds(1000));
        // A comment line doubles as a keepalive that detects closed clients.
        if (chunk.empty()) chunk = ": keepalive\n\n";
        return sink.write(chunk.data(), chunk.size());
      });
    });

    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string msg = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        msg = e.what();
      } catch (...) {
      }
      send_error(res, 500, msg);
    });
  }

  void poll_loop() {
    std::unique_lock wait_lock(poll_mutex_);
    while (!stopping_) {
      poll_once();
      poll_cv_.wait_for(wait_lock, std::chrono::milliseconds(options_.poll_ms), [this] { return stopping_.load(); });
    }
  }

  void poll_once() {
    std::lock_guard lock(client_mutex_);
    try {
      if (!client_) client_ = std::make_unique<plc::TagClient>(options_.sim_address, options_.sim_timeout_ms);
      connected_ = true;
      if (auto r = poll_cycle(*client_, model_, store_, state_, options_.clock)) {
        events_.publish("roll", record_json(*r));
      } else {
        pick_up_manual();
      }
      last_poll_at_ = options_.clock();
    } catch (const plc::ConnectionError&) {
      ++poll_errors_;
      client_.reset();
      connected_ = false;
    } catch (const plc::ServerError&) {
      ++poll_errors_;
    } catch (const Error&) {
      ++poll_errors_;
    }
  }

  // An operator may key the label into the PLC after the roll was stored.
  void pick_up_manual() {
    const auto latest = store_.latest();
    if (!latest || latest->manual) return;
    const auto raw = client_->read_tag(plc::kRollCounterTag).value;
    if (raw != (latest->roll_id & 0xffff)) return;
    const auto g = client_->read_tag(plc::kManualGrammageTag).value;
    if (g == 0 || !GrammageClass(g).canonical()) return;
    if (client_->read_tag(plc::kRollCounterTag).value != raw) return;
    store_.label(latest->roll_id, GrammageClass(g), options_.clock());
    events_.publish("roll", record_json(*store_.get(latest->roll_id)));
  }

  Model model_;
  RecordStore& store_;
  ServiceOptions options_;
  PollState state_;
  httplib::Server http_;
  EventHub events_;
  std::unique_ptr<plc::TagClient> client_;
  std::mutex client_mutex_;
  std::mutex poll_mutex_;
  std::condition_variable poll_cv_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> connected_{false};
  std::atomic<std::size_t> poll_errors_{0};
  std::atomic<std::int64_t> last_poll_at_{0};
  std::thread http_thread_;
  std::thread poll_thread_;
  int port_ = 0;
};

}  // namespace grammage::predictor
