#include "laser/net/client.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include "seqvault/codec.hpp"

namespace laser::net {

Client::Client(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("client: socket() failed");
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &sa.sin_addr) != 1)
        throw std::runtime_error("client: bad host " + host);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
        throw std::runtime_error("client: connect to " + host + ":" + std::to_string(port) +
                                 " failed");
    const int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Client::~Client() {
    if (fd_ >= 0) ::close(fd_);
}

void Client::send_raw(const std::vector<std::uint8_t>& bytes) {
    const std::uint8_t* data = bytes.data();
    std::size_t len = bytes.size();
    while (len > 0) {
        const ssize_t n = ::send(fd_, data, len, MSG_NOSIGNAL);
        if (n <= 0) throw std::runtime_error("client: send failed");
        data += n;
        len -= static_cast<std::size_t>(n);
    }
}

void Client::send_frame(const WireFrame& frame) { send_raw(encode_frame(frame)); }

WireFrame Client::recv_frame() {
    std::uint8_t chunk[16384];
    for (;;) {
        DecodeResult dec = decode_frame(rx_);
        if (dec.status == DecodeStatus::Ok) {
            rx_.erase(rx_.begin(), rx_.begin() + static_cast<std::ptrdiff_t>(dec.consumed));
            return dec.frame;
        }
        if (dec.status == DecodeStatus::Bad)
            throw ProtocolError("client: bad frame from server: " + dec.error);
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n <= 0) throw std::runtime_error("client: connection closed");
        rx_.insert(rx_.end(), chunk, chunk + n);
    }
}

WireFrame Client::roundtrip(WireFrame frame) {
    frame.request_id = next_id_++;
    maybe_compress_into(frame);
    send_frame(frame);
    WireFrame resp = recv_frame();
    if (resp.request_id != frame.request_id)
        throw ProtocolError("client: response id mismatch");
    if (resp.op == Op::Error) {
        const auto body = frame_payload(resp);
        const std::string msg(body.begin() + (body.empty() ? 0 : 1), body.end());
        throw std::runtime_error("server error: " + msg);
    }
    return resp;
}

void Client::put_event(std::uint64_t user, const seqvault::BehaviorEvent& ev,
                       const seqvault::SequenceSchema& schema) {
    WireFrame f;
    f.op = Op::PutEvent;
    put_u64(f.payload, user);
    const auto packed = seqvault::codec::pack_events(schema, {ev});
    f.payload.insert(f.payload.end(), packed.begin(), packed.end());
    roundtrip(std::move(f));
}

std::vector<seqvault::BehaviorEvent> Client::get_last_n(
    std::uint64_t user, std::uint32_t n, const seqvault::SequenceSchema& schema) {
    WireFrame f;
    f.op = Op::GetLastN;
    put_u64(f.payload, user);
    put_u32(f.payload, n);
    const WireFrame resp = roundtrip(std::move(f));
    const auto body = frame_payload(resp);
    std::size_t at = 0;
    const std::uint32_t count = get_u32(body, at);
    return seqvault::codec::unpack_events(
        schema, std::span<const std::uint8_t>(body).subspan(at), count);
}

std::pair<std::uint64_t, std::uint64_t> Client::merge() {
    WireFrame f;
    f.op = Op::Merge;
    const WireFrame resp = roundtrip(std::move(f));
    const auto body = frame_payload(resp);
    std::size_t at = 0;
    const std::uint64_t users = get_u64(body, at);
    const std::uint64_t events = get_u64(body, at);
    return {users, events};
}

seqvault::StoreStats Client::stats() {
    WireFrame f;
    f.op = Op::Stats;
    const WireFrame resp = roundtrip(std::move(f));
    const auto body = frame_payload(resp);
    std::size_t at = 0;
    seqvault::StoreStats st;
    st.disk_bytes = get_u64(body, at);
    st.live_bytes = get_u64(body, at);
    st.index_entries = get_u64(body, at);
    st.tail_events = get_u64(body, at);
    st.journal_bytes = get_u64(body, at);
    return st;
}

std::pair<float, std::uint32_t> Client::score(std::uint64_t user, std::uint32_t n,
                                              std::uint64_t item) {
    WireFrame f;
    f.op = Op::Score;
    put_u64(f.payload, user);
    put_u32(f.payload, n);
    put_u64(f.payload, item);
    const WireFrame resp = roundtrip(std::move(f));
    const auto body = frame_payload(resp);
    std::size_t at = 0;
    const float prob = get_f32(body, at);
    const std::uint32_t crc = get_u32(body, at);
    return {prob, crc};
}

}  // namespace laser::net
