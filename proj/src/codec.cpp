#include "seqvault/codec.hpp"

#include <cstdio>
#include <cstring>

#include <zlib.h>

namespace seqvault {
namespace codec {

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
    while (v >= 0x80) {
        out.push_back(static_cast<std::uint8_t>(v) | 0x80);
        v >>= 7;
    }
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t get_varint(std::span<const std::uint8_t> buf, std::size_t& at) {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
        if (at >= buf.size()) throw CorruptionError("varint: truncated");
        const std::uint8_t b = buf[at++];
        v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
        if (!(b & 0x80)) return v;
    }
    throw CorruptionError("varint: overlong encoding");
}

std::uint64_t zigzag(std::int64_t v) {
    return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}

std::int64_t unzigzag(std::uint64_t v) {
    return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> buf, std::size_t& at) {
    if (at + 4 > buf.size()) throw CorruptionError("u32: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[at + i]) << (8 * i);
    at += 4;
    return v;
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

float get_f32(std::span<const std::uint8_t> buf, std::size_t& at) {
    const std::uint32_t v = get_u32(buf, at);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

// Per-event presence of one nullable column, packed LSB-first.
std::vector<bool> read_bitmap(std::span<const std::uint8_t> buf, std::size_t& at,
                              std::size_t count) {
    const std::size_t bytes = (count + 7) / 8;
    if (at + bytes > buf.size()) throw CorruptionError("presence bitmap: truncated");
    std::vector<bool> present(count);
    for (std::size_t i = 0; i < count; ++i)
        present[i] = (buf[at + i / 8] >> (i % 8)) & 1u;
    at += bytes;
    return present;
}

}  // namespace

std::vector<std::uint8_t> pack_events(const SequenceSchema& schema,
                                      const std::vector<BehaviorEvent>& events) {
    const std::size_t n = events.size();
    // Contract: newest-first by the event-time key.
    for (std::size_t i = 1; i < n; ++i) {
        if (events[i].timestamp(schema) > events[i - 1].timestamp(schema))
            throw std::invalid_argument("pack_events: events not sorted newest-first");
    }

    std::vector<std::uint8_t> out;
    for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
        const auto& f = schema.fields[fi];

        std::vector<bool> present(n, true);
        if (f.nullable) {
            std::vector<std::uint8_t> bitmap((n + 7) / 8, 0);
            for (std::size_t i = 0; i < n; ++i) {
                present[i] = events[i].values[fi].has_value();
                if (present[i]) bitmap[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
            }
            out.insert(out.end(), bitmap.begin(), bitmap.end());
        }

        switch (f.kind) {
            case FieldKind::U64Id: {
                for (std::size_t i = 0; i < n; ++i)
                    if (present[i])
                        put_varint(out, std::get<std::uint64_t>(*events[i].values[fi]));
                break;
            }
            case FieldKind::I64Timestamp: {
                // Newest-first deltas are nonnegative; the first value is
                // zigzagged so any epoch works.
                std::int64_t prev = 0;
                bool first = true;
                for (std::size_t i = 0; i < n; ++i) {
                    if (!present[i]) continue;
                    const std::int64_t ts = std::get<std::int64_t>(*events[i].values[fi]);
                    if (first) {
                        put_varint(out, zigzag(ts));
                        first = false;
                    } else {
                        if (ts > prev)
                            throw std::invalid_argument("pack_events: timestamp out of order");
                        put_varint(out, static_cast<std::uint64_t>(prev - ts));
                    }
                    prev = ts;
                }
                break;
            }
            case FieldKind::U32Enum: {
                std::uint32_t max = 0;
                for (std::size_t i = 0; i < n; ++i)
                    if (present[i])
                        max = std::max(max, std::get<std::uint32_t>(*events[i].values[fi]));
                const std::uint8_t width = max < 0x100 ? 1 : (max < 0x10000 ? 2 : 4);
                out.push_back(width);
                for (std::size_t i = 0; i < n; ++i) {
                    if (!present[i]) continue;
                    const std::uint32_t v = std::get<std::uint32_t>(*events[i].values[fi]);
                    for (std::uint8_t b = 0; b < width; ++b)
                        out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
                }
                break;
            }
            case FieldKind::F32: {
                for (std::size_t i = 0; i < n; ++i)
                    if (present[i]) put_f32(out, std::get<float>(*events[i].values[fi]));
                break;
            }
            case FieldKind::F32Vec: {
                for (std::size_t i = 0; i < n; ++i) {
                    if (!present[i]) continue;
                    for (float v : std::get<std::vector<float>>(*events[i].values[fi]))
                        put_f32(out, v);
                }
                break;
            }
            case FieldKind::U16: {
                for (std::size_t i = 0; i < n; ++i) {
                    if (!present[i]) continue;
                    const std::uint16_t v = std::get<std::uint16_t>(*events[i].values[fi]);
                    out.push_back(static_cast<std::uint8_t>(v & 0xff));
                    out.push_back(static_cast<std::uint8_t>(v >> 8));
                }
                break;
            }
        }
    }
    return out;
}

std::vector<BehaviorEvent> unpack_events(const SequenceSchema& schema,
                                         std::span<const std::uint8_t> payload,
                                         std::size_t count) {
    std::vector<BehaviorEvent> events(count);
    for (auto& e : events) e.values.resize(schema.fields.size());

    std::size_t at = 0;
    for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
        const auto& f = schema.fields[fi];
        std::vector<bool> present(count, true);
        if (f.nullable) present = read_bitmap(payload, at, count);

        switch (f.kind) {
            case FieldKind::U64Id: {
                for (std::size_t i = 0; i < count; ++i)
                    if (present[i]) events[i].values[fi] = get_varint(payload, at);
                break;
            }
            case FieldKind::I64Timestamp: {
                std::int64_t prev = 0;
                bool first = true;
                for (std::size_t i = 0; i < count; ++i) {
                    if (!present[i]) continue;
                    std::int64_t ts;
                    if (first) {
                        ts = unzigzag(get_varint(payload, at));
                        first = false;
                    } else {
                        ts = prev - static_cast<std::int64_t>(get_varint(payload, at));
                    }
                    prev = ts;
                    events[i].values[fi] = ts;
                }
                break;
            }
            case FieldKind::U32Enum: {
                if (at >= payload.size()) throw CorruptionError("enum column: truncated");
                const std::uint8_t width = payload[at++];
                if (width != 1 && width != 2 && width != 4)
                    throw CorruptionError("enum column: bad width " + std::to_string(width));
                for (std::size_t i = 0; i < count; ++i) {
                    if (!present[i]) continue;
                    if (at + width > payload.size())
                        throw CorruptionError("enum column: truncated");
                    std::uint32_t v = 0;
                    for (std::uint8_t b = 0; b < width; ++b)
                        v |= static_cast<std::uint32_t>(payload[at + b]) << (8 * b);
                    at += width;
                    events[i].values[fi] = v;
                }
                break;
            }
            case FieldKind::F32: {
                for (std::size_t i = 0; i < count; ++i)
                    if (present[i]) events[i].values[fi] = get_f32(payload, at);
                break;
            }
            case FieldKind::F32Vec: {
                for (std::size_t i = 0; i < count; ++i) {
                    if (!present[i]) continue;
                    std::vector<float> vec(f.dim);
                    for (auto& v : vec) v = get_f32(payload, at);
                    events[i].values[fi] = std::move(vec);
                }
                break;
            }
            case FieldKind::U16: {
                for (std::size_t i = 0; i < count; ++i) {
                    if (!present[i]) continue;
                    if (at + 2 > payload.size()) throw CorruptionError("u16 column: truncated");
                    events[i].values[fi] = static_cast<std::uint16_t>(
                        payload[at] | (static_cast<std::uint16_t>(payload[at + 1]) << 8));
                    at += 2;
                }
                break;
            }
        }
    }
    if (at != payload.size())
        throw CorruptionError("unpack_events: " + std::to_string(payload.size() - at) +
                              " trailing bytes");
    return events;
}

std::vector<std::uint8_t> pack_block(const SequenceSchema& schema,
                                     const std::vector<BehaviorEvent>& events) {
    const auto payload = pack_events(schema, events);
    std::vector<std::uint8_t> out;
    put_u32(out, static_cast<std::uint32_t>(events.size()));
    put_u32(out, static_cast<std::uint32_t>(payload.size()));
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32(out, crc32_of(payload));
    return out;
}

std::vector<BehaviorEvent> unpack_block(const SequenceSchema& schema,
                                        std::span<const std::uint8_t> block,
                                        const std::string& block_id) {
    std::size_t at = 0;
    std::uint32_t count, payload_len;
    try {
        count = get_u32(block, at);
        payload_len = get_u32(block, at);
    } catch (const CorruptionError&) {
        throw CorruptionError("block " + block_id + ": truncated header");
    }
    if (at + payload_len + 4 > block.size())
        throw CorruptionError("block " + block_id + ": truncated payload");
    const auto payload = block.subspan(at, payload_len);
    at += payload_len;
    const std::uint32_t want = get_u32(block, at);
    const std::uint32_t got = crc32_of(payload);
    if (want != got)
        throw CorruptionError("block " + block_id + ": checksum mismatch (stored " +
                              std::to_string(want) + ", computed " + std::to_string(got) + ")");
    try {
        return unpack_events(schema, payload, count);
    } catch (const CorruptionError& e) {
        throw CorruptionError("block " + block_id + ": " + e.what());
    }
}

std::vector<std::uint8_t> string_baseline_encode(const SequenceSchema& schema,
                                                 const std::vector<BehaviorEvent>& events) {
    std::string out;
    char buf[64];
    for (const auto& e : events) {
        for (std::size_t fi = 0; fi < schema.fields.size(); ++fi) {
            if (fi) out += '\t';
            if (!e.values[fi].has_value()) continue;
            const auto& v = *e.values[fi];
            switch (schema.fields[fi].kind) {
                case FieldKind::U64Id:
                    std::snprintf(buf, sizeof buf, "%llu",
                                  static_cast<unsigned long long>(std::get<std::uint64_t>(v)));
                    out += buf;
                    break;
                case FieldKind::U32Enum:
                    std::snprintf(buf, sizeof buf, "%u", std::get<std::uint32_t>(v));
                    out += buf;
                    break;
                case FieldKind::I64Timestamp:
                    std::snprintf(buf, sizeof buf, "%lld",
                                  static_cast<long long>(std::get<std::int64_t>(v)));
                    out += buf;
                    break;
                case FieldKind::F32:
                    std::snprintf(buf, sizeof buf, "%.9g", std::get<float>(v));
                    out += buf;
                    break;
                case FieldKind::F32Vec: {
                    const auto& vec = std::get<std::vector<float>>(v);
                    for (std::size_t i = 0; i < vec.size(); ++i) {
                        if (i) out += ',';
                        std::snprintf(buf, sizeof buf, "%.9g", vec[i]);
                        out += buf;
                    }
                    break;
                }
                case FieldKind::U16:
                    std::snprintf(buf, sizeof buf, "%u", std::get<std::uint16_t>(v));
                    out += buf;
                    break;
            }
        }
        out += '\n';
    }
    return {out.begin(), out.end()};
}

}  // namespace codec
}  // namespace seqvault
