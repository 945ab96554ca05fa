#pragma once

// WebSocket + HTTP transport for SessionRegistry (Boost.Beast, one thread per
// connection).
//
//   GET  /healthz                      liveness
//   GET  /session/<id>/log             JSONL of a finished session
//   GET  /session/<id>/transient/<n>   rendered transient of trial n (WAV)
//   WS   /session/<id>/ws              message channel, one JSON frame each

#include <sys/socket.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "tapstroop/service.hpp"

namespace tapstroop {

class Server {
 public:
  using tcp = boost::asio::ip::tcp;
  /// Called after a session is finalized: (finished session id, finished?).
  using SessionEndHook = std::function<void(const std::string&, bool)>;

  Server(SessionRegistry& registry, std::string host, unsigned short port)
      : registry_(registry), host_(std::move(host)), port_(port), acceptor_(io_) {}

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  void on_session_end(SessionEndHook hook) { on_end_ = std::move(hook); }

  /// Binds and starts accepting; port 0 picks a free port.
  void start() {
    const tcp::endpoint ep(boost::asio::ip::make_address(host_), port_);
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep);
    acceptor_.listen();
    port_ = acceptor_.local_endpoint().port();
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  unsigned short port() const { return port_; }

  void stop() {
    if (!running_.exchange(false)) return;
    boost::system::error_code ec;
    ::shutdown(acceptor_.native_handle(), SHUT_RDWR);
    acceptor_.close(ec);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::lock_guard lock(mutex_);
      for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_)
      if (t.joinable()) t.join();
    workers_.clear();
  }

  /// Server monotonic clock in µs.
  std::int64_t now_us() const {
    return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - epoch_).count();
  }

 private:
  using Request = boost::beast::http::request<boost::beast::http::string_body>;

  void accept_loop() {
    while (running_) {
      boost::system::error_code ec;
      tcp::socket socket(io_);
      acceptor_.accept(socket, ec);
      if (ec) {
        if (!running_) return;
        continue;
      }
      std::lock_guard lock(mutex_);
      open_fds_.insert(socket.native_handle());
      workers_.emplace_back([this, s = std::move(socket)]() mutable { serve(std::move(s)); });
    }
  }

  void serve(tcp::socket socket) {
    const int fd = socket.native_handle();
    try {
      boost::beast::flat_buffer buffer;
      Request req;
      boost::beast::http::read(socket, buffer, req);
      if (boost::beast::websocket::is_upgrade(req))
        serve_websocket(std::move(socket), std::move(req));
      else
        serve_http(socket, req);
    } catch (const std::exception&) {
      // Peer went away or the server is stopping.
    }
    std::lock_guard lock(mutex_);
    open_fds_.erase(fd);
  }

  static std::vector<std::string> split_path(std::string_view target) {
    std::vector<std::string> parts;
    target = target.substr(0, target.find('?'));
    std::size_t i = 0;
    while (i < target.size()) {
      const auto j = target.find('/', i);
      const auto part = target.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i);
      if (!part.empty()) parts.emplace_back(part);
      if (j == std::string_view::npos) break;
      i = j + 1;
    }
    return parts;
  }

  void serve_http(tcp::socket& socket, const Request& req) {
    namespace http = boost::beast::http;
    http::response<http::string_body> res;
    res.version(req.version());
    res.keep_alive(false);
    res.set(http::field::server, "tapstroop");
    auto reply = [&](http::status status, std::string content_type, std::string body) {
      res.result(status);
      res.set(http::field::content_type, content_type);
      res.body() = std::move(body);
      res.prepare_payload();
    };

    const auto parts = split_path(std::string_view(req.target().data(), req.target().size()));
    if (req.method() != http::verb::get) {
      reply(http::status::method_not_allowed, "text/plain", "method not allowed\n");
    } else if (parts == std::vector<std::string>{"healthz"}) {
      reply(http::status::ok, "text/plain", "ok\n");
    } else if (parts.size() == 3 && parts[0] == "session" && parts[2] == "log") {
      if (auto log = registry_.log_for(parts[1]))
        reply(http::status::ok, "application/x-ndjson", std::move(*log));
      else
        reply(http::status::not_found, "text/plain", "no finished session with that id\n");
    } else if (parts.size() == 4 && parts[0] == "session" && parts[2] == "transient") {
      std::optional<std::vector<std::uint8_t>> wav;
      try {
        wav = registry_.transient_wav(parts[1], std::stoul(parts[3]));
      } catch (const std::logic_error&) {
      }
      if (wav)
        reply(http::status::ok, "audio/wav", std::string(wav->begin(), wav->end()));
      else
        reply(http::status::not_found, "text/plain", "no transient for that trial\n");
    } else {
      reply(http::status::not_found, "text/plain", "not found\n");
    }
    http::write(socket, res);
    boost::system::error_code ec;
    socket.shutdown(tcp::socket::shutdown_send, ec);
  }

  void serve_websocket(tcp::socket socket, Request req) {
    namespace http = boost::beast::http;
    namespace websocket = boost::beast::websocket;
    const auto parts = split_path(std::string_view(req.target().data(), req.target().size()));
    std::unique_ptr<SessionHost> host;
    if (parts.size() == 3 && parts[0] == "session" && parts[2] == "ws")
      host = registry_.open(parts[1], [this] { return now_us(); });
    if (!host) {
      http::response<http::string_body> res{http::status::forbidden, req.version()};
      res.set(http::field::content_type, "text/plain");
      res.body() = "unknown, used or busy session token\n";
      res.prepare_payload();
      http::write(socket, res);
      return;
    }

    websocket::stream<tcp::socket> ws(std::move(socket));
    try {
      ws.accept(req);
      ws.text(true);
      while (!host->closed()) {
        boost::beast::flat_buffer frame;
        ws.read(frame);
        for (const auto& msg : host->handle(boost::beast::buffers_to_string(frame.data())))
          ws.write(boost::asio::buffer(to_text(msg)));
      }
      boost::system::error_code ec;
      ws.close(websocket::close_code::normal, ec);
    } catch (const std::exception&) {
      // Disconnect mid-session: finalized below as partial.
    }
    registry_.finalize(*host);
    if (on_end_) on_end_(host->id(), host->finished());
  }

  SessionRegistry& registry_;
  std::string host_;
  unsigned short port_;
  boost::asio::io_context io_;
  tcp::acceptor acceptor_;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex mutex_;
  std::vector<std::thread> workers_;
  std::set<int> open_fds_;
  SessionEndHook on_end_;
  const std::chrono::steady_clock::time_point epoch_ = std::chrono::steady_clock::now();
};

}  // namespace tapstroop
