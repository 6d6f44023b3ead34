#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "laser/net/wire.hpp"
#include "seqvault/store.hpp"

namespace laser::net {

struct ScoreResult {
    float probability = 0.0f;
    std::uint32_t fused_crc = 0;
};

// Scoring callback: (user_id, history n, target item id). The server does
// not know the model; the CLI wires one in.
using ScoreFn = std::function<ScoreResult(std::uint64_t, std::uint32_t, std::uint64_t)>;

// Stream server over the length-prefixed frame protocol. Each connection's
// requests are handled in arrival order; store access follows the store's
// own locking. A framing desync drops the connection; any other bad
// request answers with an Error frame echoing the request id.
class Server {
  public:
    Server(seqvault::Store& store, ScoreFn score_fn = nullptr);
    ~Server();

    /// Binds and starts accepting. Port 0 picks an ephemeral port.
    void start(const std::string& host, std::uint16_t port);
    std::uint16_t port() const { return port_; }
    void stop();

  private:
    void accept_loop();
    void serve_connection(int fd);
    WireFrame handle(const WireFrame& request);

    seqvault::Store& store_;
    ScoreFn score_fn_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::mutex conn_mu_;
    std::vector<std::thread> conn_threads_;
};

/// Parses "host:port"; host defaults to 127.0.0.1 when absent.
std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr);

}  // namespace laser::net
