#include "laser/net/wire.hpp"

#include <cstring>

#include <zlib.h>

namespace laser::net {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}
std::uint32_t get_u32(std::span<const std::uint8_t> buf, std::size_t& at) {
    if (at + 4 > buf.size()) throw ProtocolError("payload: truncated u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[at + i]) << (8 * i);
    at += 4;
    return v;
}
std::uint64_t get_u64(std::span<const std::uint8_t> buf, std::size_t& at) {
    if (at + 8 > buf.size()) throw ProtocolError("payload: truncated u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[at + i]) << (8 * i);
    at += 8;
    return v;
}
float get_f32(std::span<const std::uint8_t> buf, std::size_t& at) {
    const std::uint32_t bits = get_u32(buf, at);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

namespace {

bool valid_op(std::uint8_t op) {
    return op <= static_cast<std::uint8_t>(Op::Score) ||
           op == static_cast<std::uint8_t>(Op::Error);
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const WireFrame& frame) {
    const std::uint32_t len = static_cast<std::uint32_t>(1 + 1 + 8 + frame.payload.size());
    if (len > kMaxFrame) throw ProtocolError("encode_frame: payload too large");
    std::vector<std::uint8_t> out;
    out.reserve(4 + len);
    put_u32(out, len);
    out.push_back(static_cast<std::uint8_t>(frame.op));
    out.push_back(frame.flags);
    put_u64(out, frame.request_id);
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

DecodeResult decode_frame(std::span<const std::uint8_t> bytes) {
    DecodeResult res;
    if (bytes.size() < 4) return res;  // Incomplete
    std::size_t at = 0;
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    if (len < 10 || len > kMaxFrame) {
        res.status = DecodeStatus::Bad;
        res.error = "bad frame length " + std::to_string(len);
        return res;  // consumed 0: the stream is desynced
    }
    if (bytes.size() < 4 + static_cast<std::size_t>(len)) return res;  // Incomplete
    at = 4;
    const std::uint8_t op = bytes[at++];
    res.frame.flags = bytes[at++];
    std::uint64_t rid = 0;
    for (int i = 0; i < 8; ++i) rid |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
    at += 8;
    res.frame.request_id = rid;
    res.consumed = 4 + len;
    if (!valid_op(op)) {
        res.status = DecodeStatus::Bad;
        res.error = "bad op " + std::to_string(op);
        return res;
    }
    res.frame.op = static_cast<Op>(op);
    res.frame.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                             bytes.begin() + static_cast<std::ptrdiff_t>(4 + len));
    res.status = DecodeStatus::Ok;
    return res;
}

std::vector<std::uint8_t> compress_payload(std::span<const std::uint8_t> raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(4 + bound);
    for (int i = 0; i < 4; ++i)
        out[i] = static_cast<std::uint8_t>(raw.size() >> (8 * i));
    if (compress2(out.data() + 4, &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw ProtocolError("compress_payload: deflate failed");
    out.resize(4 + bound);
    return out;
}

std::vector<std::uint8_t> decompress_payload(std::span<const std::uint8_t> blob) {
    if (blob.size() < 4) throw ProtocolError("decompress_payload: missing length prefix");
    std::uint32_t orig = 0;
    for (int i = 0; i < 4; ++i) orig |= static_cast<std::uint32_t>(blob[i]) << (8 * i);
    if (orig > kMaxFrame) throw ProtocolError("decompress_payload: original length too large");
    std::vector<std::uint8_t> out(orig);
    uLongf got = orig;
    const int rc = uncompress(out.data(), &got, blob.data() + 4,
                              static_cast<uLong>(blob.size() - 4));
    if (rc != Z_OK || got != orig)
        throw ProtocolError("decompress_payload: corrupt compressed payload");
    return out;
}

void maybe_compress_into(WireFrame& frame) {
    frame.flags &= static_cast<std::uint8_t>(~kFlagCompressed);
    if (frame.payload.size() <= kCompressThreshold) return;
    auto packed = compress_payload(frame.payload);
    if (packed.size() < frame.payload.size()) {
        frame.payload = std::move(packed);
        frame.flags |= kFlagCompressed;
    }
}

std::vector<std::uint8_t> frame_payload(const WireFrame& frame) {
    if (frame.flags & kFlagCompressed) return decompress_payload(frame.payload);
    return frame.payload;
}

}  // namespace laser::net
