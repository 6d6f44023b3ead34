#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqvault/schema.hpp"

namespace seqvault {

struct CorruptionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace codec {

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t get_varint(std::span<const std::uint8_t> buf, std::size_t& at);
std::uint64_t zigzag(std::int64_t v);
std::int64_t unzigzag(std::uint64_t v);

/// Column-packed payload for events sorted newest-first: ids as varints,
/// timestamps as newest-first delta varints, enums packed to their
/// narrowest fixed width, floats raw little-endian, nullable columns led
/// by a presence bitmap. No event count and no checksum; see pack_block.
std::vector<std::uint8_t> pack_events(const SequenceSchema& schema,
                                      const std::vector<BehaviorEvent>& events);

std::vector<BehaviorEvent> unpack_events(const SequenceSchema& schema,
                                         std::span<const std::uint8_t> payload,
                                         std::size_t count);

/// Self-contained block: event_count u32, payload_len u32, payload,
/// CRC32(payload). unpack_block verifies the checksum and names block_id
/// in the corruption error.
std::vector<std::uint8_t> pack_block(const SequenceSchema& schema,
                                     const std::vector<BehaviorEvent>& events);

std::vector<BehaviorEvent> unpack_block(const SequenceSchema& schema,
                                        std::span<const std::uint8_t> block,
                                        const std::string& block_id);

/// The anti-pattern baseline: every value rendered as text, tab-delimited
/// fields, newline-delimited events. Comparison target only.
std::vector<std::uint8_t> string_baseline_encode(const SequenceSchema& schema,
                                                 const std::vector<BehaviorEvent>& events);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace codec
}  // namespace seqvault
