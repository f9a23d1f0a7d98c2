#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "session.hpp"

namespace imitdrive {

inline double monotonic_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

/// One session over a pair of line streams (used for --stdio).
inline void run_stream_session(const Track& track, const SessionConfig& cfg, std::istream& in, std::ostream& out) {
  Session s(track, cfg);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    for (const auto& reply : s.handle(line, monotonic_seconds())) out << reply << '\n';
    out.flush();
  }
}

namespace detail {

inline bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

inline void serve_connection(int fd, const Track& track, SessionConfig cfg, const std::atomic<bool>& stop) {
  Session s(track, cfg);
  std::string buffer;
  char chunk[4096];
  while (!stop) {
    pollfd p{fd, POLLIN, 0};
    const int ready = ::poll(&p, 1, 500);
    if (ready < 0) break;
    if (ready == 0) {
      s.tick(monotonic_seconds());
      continue;
    }
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t pos;
    while ((pos = buffer.find('\n')) != std::string::npos) {
      std::string line = buffer.substr(0, pos);
      buffer.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::string out;
      for (const auto& reply : s.handle(line, monotonic_seconds())) out += reply + "\n";
      if (!send_all(fd, out)) {
        ::close(fd);
        return;
      }
    }
  }
  ::close(fd);
}

}  // namespace detail

/// TCP listener on 127.0.0.1; one isolated session per connection, each on
/// its own thread.
class SessionServer {
 public:
  SessionServer(const Track& track, SessionConfig cfg, int port) : track_(track), cfg_(std::move(cfg)) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ConfigurationError("cannot create socket");
    int yes = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 8) < 0) {
      ::close(fd_);
      throw ConfigurationError("cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }

  ~SessionServer() {
    stop();
    for (auto& t : workers_)
      if (t.joinable()) t.join();
  }

  int port() const { return port_; }

  /// Accepts connections until stop() is called.
  void run() {
    while (!stop_) {
      pollfd p{fd_, POLLIN, 0};
      const int ready = ::poll(&p, 1, 200);
      if (ready <= 0) continue;
      const int client = ::accept(fd_, nullptr, nullptr);
      if (client < 0) continue;
      workers_.emplace_back(detail::serve_connection, client, std::cref(track_), cfg_, std::cref(stop_));
    }
  }

  void stop() {
    if (!stop_.exchange(true) && fd_ >= 0) ::close(fd_);
  }

 private:
  const Track& track_;
  SessionConfig cfg_;
  int fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::vector<std::thread> workers_;
};

}  // namespace imitdrive
