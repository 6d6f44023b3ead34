#include "laser/net/server.hpp"

#include <cstring>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "seqvault/codec.hpp"

namespace laser::net {

namespace {

bool write_all(int fd, const std::uint8_t* data, std::size_t len) {
    while (len > 0) {
        const ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
        if (n <= 0) return false;
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

WireFrame error_frame(std::uint64_t request_id, ErrCode code, const std::string& message) {
    WireFrame f;
    f.op = Op::Error;
    f.request_id = request_id;
    f.payload.push_back(static_cast<std::uint8_t>(code));
    f.payload.insert(f.payload.end(), message.begin(), message.end());
    return f;
}

}  // namespace

std::pair<std::string, std::uint16_t> parse_addr(const std::string& addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos)
        return {"127.0.0.1", static_cast<std::uint16_t>(std::stoi(addr))};
    const std::string host = colon == 0 ? "127.0.0.1" : addr.substr(0, colon);
    return {host, static_cast<std::uint16_t>(std::stoi(addr.substr(colon + 1)))};
}

Server::Server(seqvault::Store& store, ScoreFn score_fn)
    : store_(store), score_fn_(std::move(score_fn)) {}

Server::~Server() { stop(); }

void Server::start(const std::string& host, std::uint16_t port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("server: socket() failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
        throw std::runtime_error("server: bad host " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
        throw std::runtime_error("server: bind failed on " + host + ":" + std::to_string(port));
    if (::listen(listen_fd_, 64) != 0) throw std::runtime_error("server: listen failed");

    socklen_t len = sizeof sa;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);

    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
    if (!running_.exchange(false)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> conns;
    {
        std::lock_guard lock(conn_mu_);
        conns.swap(conn_threads_);
    }
    for (auto& t : conns)
        if (t.joinable()) t.join();
}

void Server::accept_loop() {
    while (running_) {
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) break;
        std::lock_guard lock(conn_mu_);
        conn_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void Server::serve_connection(int fd) {
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    std::vector<std::uint8_t> buf;
    std::uint8_t chunk[16384];
    bool alive = true;
    while (alive && running_) {
        const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n <= 0) break;
        buf.insert(buf.end(), chunk, chunk + n);

        // Drain every complete frame in arrival order.
        while (alive) {
            DecodeResult dec = decode_frame(buf);
            if (dec.status == DecodeStatus::Incomplete) break;
            if (dec.status == DecodeStatus::Bad && dec.consumed == 0) {
                // Length prefix is garbage: the stream cannot be resynced.
                alive = false;
                break;
            }
            WireFrame response;
            if (dec.status == DecodeStatus::Bad) {
                response = error_frame(dec.frame.request_id, ErrCode::BadOp, dec.error);
            } else {
                response = handle(dec.frame);
            }
            buf.erase(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(dec.consumed));
            maybe_compress_into(response);
            const auto bytes = encode_frame(response);
            if (!write_all(fd, bytes.data(), bytes.size())) {
                alive = false;
                break;
            }
        }
        if (buf.size() > kMaxFrame + 4) alive = false;  // bounded memory
    }
    ::close(fd);
}

WireFrame Server::handle(const WireFrame& request) {
    std::vector<std::uint8_t> payload;
    try {
        payload = frame_payload(request);
    } catch (const ProtocolError& e) {
        return error_frame(request.request_id, ErrCode::DecompressError, e.what());
    }

    WireFrame resp;
    resp.op = request.op;
    resp.request_id = request.request_id;
    const std::span<const std::uint8_t> body(payload);
    try {
        switch (request.op) {
            case Op::PutEvent: {
                std::size_t at = 0;
                const std::uint64_t user = get_u64(body, at);
                auto events = seqvault::codec::unpack_events(
                    store_.schema(), body.subspan(at), 1);
                store_.append_event(user, events.at(0));
                return resp;
            }
            case Op::GetLastN: {
                std::size_t at = 0;
                const std::uint64_t user = get_u64(body, at);
                const std::uint32_t n = get_u32(body, at);
                auto events = store_.get_last_n(user, n);
                put_u32(resp.payload, static_cast<std::uint32_t>(events.size()));
                const auto packed = seqvault::codec::pack_events(store_.schema(), events);
                resp.payload.insert(resp.payload.end(), packed.begin(), packed.end());
                return resp;
            }
            case Op::Merge: {
                std::size_t at = 0;
                const std::uint32_t count = body.empty() ? 0 : get_u32(body, at);
                seqvault::MergeStats stats;
                if (count == 0) {
                    stats = store_.run_merge();
                } else {
                    std::vector<std::uint64_t> users;
                    for (std::uint32_t i = 0; i < count; ++i) users.push_back(get_u64(body, at));
                    stats = store_.run_merge(&users);
                }
                put_u64(resp.payload, stats.users_merged);
                put_u64(resp.payload, stats.events_merged);
                return resp;
            }
            case Op::Stats: {
                const auto st = store_.stats();
                put_u64(resp.payload, st.disk_bytes);
                put_u64(resp.payload, st.live_bytes);
                put_u64(resp.payload, st.index_entries);
                put_u64(resp.payload, st.tail_events);
                put_u64(resp.payload, st.journal_bytes);
                return resp;
            }
            case Op::Score: {
                if (!score_fn_)
                    return error_frame(request.request_id, ErrCode::ModelUnavailable,
                                       "no checkpoint loaded");
                std::size_t at = 0;
                const std::uint64_t user = get_u64(body, at);
                const std::uint32_t n = get_u32(body, at);
                const std::uint64_t item = get_u64(body, at);
                const ScoreResult score = score_fn_(user, n, item);
                put_f32(resp.payload, score.probability);
                put_u32(resp.payload, score.fused_crc);
                return resp;
            }
            case Op::Error:
                return error_frame(request.request_id, ErrCode::BadOp,
                                   "client sent an error frame");
        }
        return error_frame(request.request_id, ErrCode::BadOp, "unhandled op");
    } catch (const ProtocolError& e) {
        return error_frame(request.request_id, ErrCode::BadPayload, e.what());
    } catch (const std::exception& e) {
        return error_frame(request.request_id, ErrCode::StoreError, e.what());
    }
}

}  // namespace laser::net
