#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "grammage/plcsim.hpp"

namespace grammage::plc {

inline std::string default_sim_address() {
  const char* env = std::getenv("GRAMMAGE_SIM_ADDR");
  return env && *env ? env : "127.0.0.1:5020";
}

class ConnectionError : public Error {
public:
  using Error::Error;
};

// An `ERR <CODE> <message>` reply.
class ServerError : public Error {
public:
  ServerError(std::string code, std::string message)
      : Error(code + ": " + message), code_(std::move(code)), message_(std::move(message)) {}
  const std::string& code() const { return code_; }
  const std::string& message() const { return message_; }

private:
  std::string code_, message_;
};

struct HostPort {
  std::string host;
  std::string port;

  static HostPort parse(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos || colon + 1 == s.size()) throw DomainError("address must be host:port, got '" + s + "'");
    HostPort hp{s.substr(0, colon), s.substr(colon + 1)};
    if (hp.host.size() >= 2 && hp.host.front() == '[' && hp.host.back() == ']') hp.host = hp.host.substr(1, hp.host.size() - 2);
    if (hp.host.empty()) hp.host = "0.0.0.0";
    return hp;
  }
};

namespace net {

class Fd {
public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

private:
  int fd_ = -1;
};

inline std::unique_ptr<addrinfo, void (*)(addrinfo*)> resolve(const HostPort& hp, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res); rc != 0)
    throw ConnectionError("cannot resolve " + hp.host + ":" + hp.port + ": " + ::gai_strerror(rc));
  return {res, ::freeaddrinfo};
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

// Waits up to timeout_ms for readability; false on timeout.
inline bool wait_readable(int fd, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  int rc;
  do rc = ::poll(&p, 1, timeout_ms);
  while (rc < 0 && errno == EINTR);
  return rc > 0;
}

}  // namespace net

struct ServerOptions {
  std::string listen = "127.0.0.1:5020";
  int tick_ms = 0;  // 0: manual mode, rolls advance only on ADVANCE
};

// Line-protocol TCP server over a shared SimState. One thread per client plus
// an optional tick thread; every command and tick runs under one mutex.
class TagServer {
public:
  TagServer(SimState state, ServerOptions options) : state_(std::move(state)), options_(std::move(options)) {
    const auto hp = HostPort::parse(options_.listen);
    auto ai = net::resolve(hp, true);
    std::string last_error = "no usable address";
    for (auto* p = ai.get(); p; p = p->ai_next) {
      net::Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
      if (!fd) continue;
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), p->ai_addr, p->ai_addrlen) == 0 && ::listen(fd.get(), 64) == 0) {
        listener_ = std::move(fd);
        break;
      }
      last_error = std::strerror(errno);
    }
    if (!listener_) throw ConnectionError("cannot listen on " + options_.listen + ": " + last_error);

    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(listener_.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    port_ = ntohs(ss.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port
                                           : reinterpret_cast<sockaddr_in*>(&ss)->sin_port);

    accept_thread_ = std::thread([this] { accept_loop(); });
    if (options_.tick_ms > 0) tick_thread_ = std::thread([this] { tick_loop(); });
  }

  TagServer(const TagServer&) = delete;
  TagServer& operator=(const TagServer&) = delete;
  ~TagServer() { stop(); }

  std::uint16_t port() const { return port_; }
  std::string address() const { return HostPort::parse(options_.listen).host + ":" + std::to_string(port_); }

  template <typename F>
  auto with_state(F&& f) {
    std::lock_guard lock(state_mutex_);
    return f(state_);
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    tick_cv_.notify_all();
    if (accept_thread_.joinable()) accept_thread_.join();
    if (tick_thread_.joinable()) tick_thread_.join();
    std::list<Client> clients;
    {
      std::lock_guard lock(clients_mutex_);
      clients.swap(clients_);
    }
    for (auto& c : clients) ::shutdown(c.fd, SHUT_RDWR);
    for (auto& c : clients) {
      c.thread.join();
      ::close(c.fd);
    }
    listener_.reset();
  }

private:
  struct Client {
    int fd;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };

  static constexpr int kPollMs = 50;

  void accept_loop() {
    while (!stopping_) {
      if (!net::wait_readable(listener_.get(), kPollMs)) continue;
      int fd = ::accept(listener_.get(), nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto done = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lock(clients_mutex_);
      reap_locked();
      clients_.push_back(Client{fd, std::thread([this, fd, done] {
                                  serve_client(fd);
                                  done->store(true);
                                }),
                                done});
    }
  }

  void reap_locked() {
    for (auto it = clients_.begin(); it != clients_.end();) {
      if (it->done->load()) {
        it->thread.join();
        ::close(it->fd);
        it = clients_.erase(it);
      } else {
        ++it;
      }
    }
  }

  // The fd stays open until the owner joins this thread, so stop() never
  // shuts down a reused descriptor.
  void serve_client(int fd) {
    std::string buf;
    bool discarding = false;
    char chunk[512];
    while (!stopping_) {
      if (!net::wait_readable(fd, kPollMs)) continue;
      const auto n = ::recv(fd, chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return;
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        std::string line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (discarding) {
          discarding = false;
          continue;
        }
        std::string reply;
        {
          std::lock_guard lock(state_mutex_);
          reply = state_.handle_command(line);
        }
        if (!net::send_all(fd, reply + "\n")) return;
      }
      if (!discarding && buf.size() > kMaxLineBytes + 1) {
        buf.clear();
        discarding = true;
        if (!net::send_all(fd, "ERR BAD_SYNTAX line exceeds 256 bytes\n")) return;
      } else if (discarding) {
        buf.clear();
      }
    }
  }

  void tick_loop() {
    std::unique_lock lock(tick_mutex_);
    while (!stopping_) {
      if (tick_cv_.wait_for(lock, std::chrono::milliseconds(options_.tick_ms), [this] { return stopping_.load(); }))
        break;
      std::lock_guard state_lock(state_mutex_);
      state_.advance_roll();
    }
  }

  SimState state_;
  ServerOptions options_;
  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex state_mutex_;
  std::mutex clients_mutex_;
  std::list<Client> clients_;
  std::thread accept_thread_;
  std::thread tick_thread_;
  std::mutex tick_mutex_;
  std::condition_variable tick_cv_;
};

struct TagReading {
  std::uint16_t value = 0;
  Quality quality = Quality::Good;
  std::int64_t timestamp_ms = 0;
};

// Blocking client. Transport failures raise ConnectionError; ERR replies raise
// ServerError.
class TagClient {
public:
  explicit TagClient(const std::string& address = default_sim_address(), int timeout_ms = 5000)
      : timeout_ms_(timeout_ms) {
    const auto hp = HostPort::parse(address);
    auto ai = net::resolve(hp, false);
    for (auto* p = ai.get(); p; p = p->ai_next) {
      net::Fd fd(::socket(p->ai_family, p->ai_socktype, p->ai_protocol));
      if (!fd) continue;
      if (::connect(fd.get(), p->ai_addr, p->ai_addrlen) == 0) {
        int one = 1;
        ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        fd_ = std::move(fd);
        return;
      }
    }
    throw ConnectionError("cannot connect to " + address);
  }

  // Sends one line and returns the reply without its LF.
  std::string request(const std::string& line) {
    if (!fd_) throw ConnectionError("not connected");
    if (!net::send_all(fd_.get(), line + "\n")) return lost("send failed");
    for (;;) {
      if (auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string reply = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return reply;
      }
      if (!net::wait_readable(fd_.get(), timeout_ms_)) return lost("timed out waiting for reply");
      char chunk[512];
      const auto n = ::recv(fd_.get(), chunk, sizeof chunk, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return lost("connection closed");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  TagReading read_tag(const TagAddress& a) {
    const auto f = ok_fields(request("READ " + a.text()));
    if (f.size() != 4) throw ConnectionError("malformed READ reply");
    TagReading r;
    unsigned long v = 0;
    long long ts = 0;
    if (!parse_int(f[1], v) || v > 65535 || !parse_int(f[3], ts)) throw ConnectionError("malformed READ reply");
    r.value = static_cast<std::uint16_t>(v);
    if (f[2] == "GOOD") r.quality = Quality::Good;
    else if (f[2] == "BAD") r.quality = Quality::Bad;
    else throw ConnectionError("malformed quality in READ reply");
    r.timestamp_ms = ts;
    return r;
  }

  void write_tag(const TagAddress& a, std::uint16_t value) {
    const auto f = ok_fields(request("WRITE " + a.text() + " " + std::to_string(value)));
    if (f.size() != 1) throw ConnectionError("malformed WRITE reply");
  }

  std::uint64_t advance() {
    const auto f = ok_fields(request("ADVANCE"));
    unsigned long long c = 0;
    if (f.size() != 2 || !parse_int(f[1], c)) throw ConnectionError("malformed ADVANCE reply");
    return c;
  }

private:
  template <typename T>
  static bool parse_int(std::string_view s, T& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
  }

  [[noreturn]] std::string lost(const std::string& why) {
    fd_.reset();
    throw ConnectionError(why);
  }

  std::vector<std::string> ok_fields(const std::string& reply) {
    if (reply.starts_with("ERR ")) {
      const auto rest = std::string_view(reply).substr(4);
      const auto sp = rest.find(' ');
      throw ServerError(std::string(rest.substr(0, sp)), sp == std::string_view::npos ? "" : std::string(rest.substr(sp + 1)));
    }
    std::vector<std::string> out;
    for (auto f : detail::split_fields(reply)) out.emplace_back(f);
    if (out.empty() || out[0] != "OK") throw ConnectionError("unexpected reply '" + reply + "'");
    return out;
  }

  net::Fd fd_;
  std::string buf_;
  int timeout_ms_;
};

}  // namespace grammage::plc
