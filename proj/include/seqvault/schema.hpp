#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace seqvault {

enum class FieldKind : std::uint8_t {
    U64Id = 0,
    U32Enum = 1,
    I64Timestamp = 2,
    F32 = 3,
    F32Vec = 4,
    U16 = 5,
};

const char* field_kind_name(FieldKind kind);
FieldKind field_kind_from_name(const std::string& name);

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::U64Id;
    std::uint32_t dim = 1;  // F32Vec only
    bool nullable = false;
};

using FieldValue = std::variant<std::uint64_t, std::uint32_t, std::int64_t, float,
                                std::vector<float>, std::uint16_t>;

// Typed layout of one logged action. Immutable once a store is created;
// exactly one i64_timestamp field is the event-time key and the first
// u64_id field is the dedup item key.
struct SequenceSchema {
    std::vector<FieldSpec> fields;

    void validate() const;
    std::string canonical() const;
    std::uint64_t schema_hash() const;  // FNV-1a of the canonical text
    std::size_t timestamp_field() const;
    std::size_t item_id_field() const;

    static SequenceSchema from_json(const std::string& json_text);
    std::string to_json() const;

    /// item/scenario/action/ts/similarity: the synthetic-corpus layout.
    static SequenceSchema reference();
};

struct BehaviorEvent {
    std::vector<std::optional<FieldValue>> values;  // aligned with schema fields

    std::int64_t timestamp(const SequenceSchema& schema) const;
    std::uint64_t item_id(const SequenceSchema& schema) const;
};

/// Throws std::invalid_argument when the event does not fit the schema
/// (missing non-nullable values, wrong types, non-positive timestamp).
void validate_event(const SequenceSchema& schema, const BehaviorEvent& ev);

/// Newest-first order: (timestamp desc, item_id desc). Insertion order
/// breaks residual ties at the store layer.
bool event_after(const SequenceSchema& schema, const BehaviorEvent& a, const BehaviorEvent& b);

bool same_dedup_key(const SequenceSchema& schema, const BehaviorEvent& a, const BehaviorEvent& b);

}  // namespace seqvault
