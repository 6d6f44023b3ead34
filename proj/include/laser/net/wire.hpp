#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace laser::net {

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Op : std::uint8_t {
    PutEvent = 0,
    GetLastN = 1,
    Merge = 2,
    Stats = 3,
    Score = 4,
    Error = 255,
};

constexpr std::uint32_t kMaxFrame = 16u << 20;
constexpr std::uint8_t kFlagCompressed = 0x01;
constexpr std::size_t kCompressThreshold = 512;  // smaller frames go raw

// Error payload code byte.
enum class ErrCode : std::uint8_t {
    BadOp = 1,
    BadPayload = 2,
    StoreError = 3,
    ModelUnavailable = 4,
    DecompressError = 5,
};

// [length u32le][op u8][flags u8][request_id u64le][payload]; length
// counts everything after itself. An empty-payload frame is 14 bytes.
struct WireFrame {
    Op op = Op::Stats;
    std::uint8_t flags = 0;
    std::uint64_t request_id = 0;
    std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_frame(const WireFrame& frame);

enum class DecodeStatus { Ok, Incomplete, Bad };

struct DecodeResult {
    DecodeStatus status = DecodeStatus::Incomplete;
    WireFrame frame;
    std::size_t consumed = 0;  // bytes to drop from the stream buffer
    std::string error;
};

/// Never throws: malformed input comes back as Bad with a reason. A Bad
/// length prefix means framing desync (consumed stays 0); a bad op inside
/// a well-delimited frame reports consumed so the stream can continue.
DecodeResult decode_frame(std::span<const std::uint8_t> bytes);

/// Deflate with a u32le original-length prefix inside the blob.
std::vector<std::uint8_t> compress_payload(std::span<const std::uint8_t> raw);
std::vector<std::uint8_t> decompress_payload(std::span<const std::uint8_t> blob);

/// Policy wrapper: payloads above the threshold travel compressed only
/// when that actually shrinks them; flags bit0 records the choice.
void maybe_compress_into(WireFrame& frame);
std::vector<std::uint8_t> frame_payload(const WireFrame& frame);  // decompressed view

// Little-endian payload cursor helpers shared by client and server.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32(std::span<const std::uint8_t> buf, std::size_t& at);
std::uint64_t get_u64(std::span<const std::uint8_t> buf, std::size_t& at);
float get_f32(std::span<const std::uint8_t> buf, std::size_t& at);

}  // namespace laser::net
