#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laser/net/wire.hpp"
#include "seqvault/schema.hpp"
#include "seqvault/store.hpp"

namespace laser::net {

// Blocking client for the frame protocol; one request in flight unless
// the caller pipelines through send_frame/recv_frame directly.
class Client {
  public:
    Client(const std::string& host, std::uint16_t port);
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    void put_event(std::uint64_t user, const seqvault::BehaviorEvent& ev,
                   const seqvault::SequenceSchema& schema);
    std::vector<seqvault::BehaviorEvent> get_last_n(std::uint64_t user, std::uint32_t n,
                                                    const seqvault::SequenceSchema& schema);
    std::pair<std::uint64_t, std::uint64_t> merge();  // users, events
    seqvault::StoreStats stats();
    std::pair<float, std::uint32_t> score(std::uint64_t user, std::uint32_t n,
                                          std::uint64_t item);

    // Low-level access for pipelining and fuzz tests.
    void send_frame(const WireFrame& frame);
    WireFrame recv_frame();
    void send_raw(const std::vector<std::uint8_t>& bytes);
    std::uint64_t next_request_id() { return next_id_++; }

  private:
    WireFrame roundtrip(WireFrame frame);

    int fd_ = -1;
    std::uint64_t next_id_ = 1;
    std::vector<std::uint8_t> rx_;
};

}  // namespace laser::net
