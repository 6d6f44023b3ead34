#include "seqvault/schema.hpp"

#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace seqvault {

const char* field_kind_name(FieldKind kind) {
    switch (kind) {
        case FieldKind::U64Id: return "u64_id";
        case FieldKind::U32Enum: return "u32_enum";
        case FieldKind::I64Timestamp: return "i64_timestamp";
        case FieldKind::F32: return "f32";
        case FieldKind::F32Vec: return "f32_vec";
        case FieldKind::U16: return "u16";
    }
    return "?";
}

FieldKind field_kind_from_name(const std::string& name) {
    if (name == "u64_id") return FieldKind::U64Id;
    if (name == "u32_enum") return FieldKind::U32Enum;
    if (name == "i64_timestamp") return FieldKind::I64Timestamp;
    if (name == "f32") return FieldKind::F32;
    if (name == "f32_vec") return FieldKind::F32Vec;
    if (name == "u16") return FieldKind::U16;
    throw std::invalid_argument("schema: unknown field kind '" + name + "'");
}

void SequenceSchema::validate() const {
    if (fields.empty()) throw std::invalid_argument("schema: no fields");
    std::set<std::string> names;
    std::size_t ts = 0, ids = 0;
    for (const auto& f : fields) {
        if (f.name.empty()) throw std::invalid_argument("schema: empty field name");
        if (!names.insert(f.name).second)
            throw std::invalid_argument("schema: duplicate field name '" + f.name + "'");
        if (f.kind == FieldKind::I64Timestamp) ++ts;
        if (f.kind == FieldKind::U64Id) ++ids;
        if (f.kind == FieldKind::F32Vec && f.dim == 0)
            throw std::invalid_argument("schema: f32_vec field '" + f.name + "' with dim 0");
    }
    if (ts != 1)
        throw std::invalid_argument("schema: exactly one i64_timestamp field required, got " +
                                    std::to_string(ts));
    if (ids < 1) throw std::invalid_argument("schema: at least one u64_id field required");
}

std::string SequenceSchema::canonical() const {
    std::ostringstream os;
    for (const auto& f : fields) {
        os << f.name << ':' << field_kind_name(f.kind);
        if (f.kind == FieldKind::F32Vec) os << '(' << f.dim << ')';
        if (f.nullable) os << '?';
        os << ';';
    }
    return os.str();
}

std::uint64_t SequenceSchema::schema_hash() const {
    // FNV-1a 64.
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::size_t SequenceSchema::timestamp_field() const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].kind == FieldKind::I64Timestamp) return i;
    throw std::logic_error("schema: no timestamp field");
}

std::size_t SequenceSchema::item_id_field() const {
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].kind == FieldKind::U64Id) return i;
    throw std::logic_error("schema: no u64_id field");
}

SequenceSchema SequenceSchema::from_json(const std::string& json_text) {
    const auto doc = nlohmann::json::parse(json_text);
    if (!doc.is_array()) throw std::invalid_argument("schema json: expected an array");
    SequenceSchema schema;
    for (const auto& item : doc) {
        FieldSpec f;
        f.name = item.at("name").get<std::string>();
        f.kind = field_kind_from_name(item.at("kind").get<std::string>());
        if (item.contains("dim")) f.dim = item["dim"].get<std::uint32_t>();
        if (item.contains("nullable")) f.nullable = item["nullable"].get<bool>();
        schema.fields.push_back(std::move(f));
    }
    schema.validate();
    return schema;
}

std::string SequenceSchema::to_json() const {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& f : fields) {
        nlohmann::json item;
        item["name"] = f.name;
        item["kind"] = field_kind_name(f.kind);
        if (f.kind == FieldKind::F32Vec) item["dim"] = f.dim;
        if (f.nullable) item["nullable"] = true;
        doc.push_back(item);
    }
    return doc.dump(2);
}

SequenceSchema SequenceSchema::reference() {
    SequenceSchema schema;
    schema.fields = {
        {"item_id", FieldKind::U64Id, 1, false},
        {"scenario", FieldKind::U32Enum, 1, false},
        {"action", FieldKind::U32Enum, 1, false},
        {"ts", FieldKind::I64Timestamp, 1, false},
        {"similarity", FieldKind::F32, 1, true},
    };
    return schema;
}

std::int64_t BehaviorEvent::timestamp(const SequenceSchema& schema) const {
    return std::get<std::int64_t>(*values[schema.timestamp_field()]);
}

std::uint64_t BehaviorEvent::item_id(const SequenceSchema& schema) const {
    return std::get<std::uint64_t>(*values[schema.item_id_field()]);
}

namespace {

bool kind_matches(FieldKind kind, const FieldValue& v) {
    switch (kind) {
        case FieldKind::U64Id: return std::holds_alternative<std::uint64_t>(v);
        case FieldKind::U32Enum: return std::holds_alternative<std::uint32_t>(v);
        case FieldKind::I64Timestamp: return std::holds_alternative<std::int64_t>(v);
        case FieldKind::F32: return std::holds_alternative<float>(v);
        case FieldKind::F32Vec: return std::holds_alternative<std::vector<float>>(v);
        case FieldKind::U16: return std::holds_alternative<std::uint16_t>(v);
    }
    return false;
}

}  // namespace

void validate_event(const SequenceSchema& schema, const BehaviorEvent& ev) {
    if (ev.values.size() != schema.fields.size())
        throw std::invalid_argument("event: field count " + std::to_string(ev.values.size()) +
                                    " vs schema " + std::to_string(schema.fields.size()));
    for (std::size_t i = 0; i < schema.fields.size(); ++i) {
        const auto& f = schema.fields[i];
        if (!ev.values[i].has_value()) {
            if (!f.nullable)
                throw std::invalid_argument("event: missing value for field '" + f.name + "'");
            continue;
        }
        if (!kind_matches(f.kind, *ev.values[i]))
            throw std::invalid_argument("event: type mismatch for field '" + f.name + "'");
        if (f.kind == FieldKind::F32Vec &&
            std::get<std::vector<float>>(*ev.values[i]).size() != f.dim)
            throw std::invalid_argument("event: bad vector length for field '" + f.name + "'");
    }
    if (ev.timestamp(schema) <= 0) throw std::invalid_argument("event: timestamp must be > 0");
}

bool event_after(const SequenceSchema& schema, const BehaviorEvent& a, const BehaviorEvent& b) {
    const auto ta = a.timestamp(schema), tb = b.timestamp(schema);
    if (ta != tb) return ta > tb;
    return a.item_id(schema) > b.item_id(schema);
}

bool same_dedup_key(const SequenceSchema& schema, const BehaviorEvent& a,
                    const BehaviorEvent& b) {
    return a.timestamp(schema) == b.timestamp(schema) && a.item_id(schema) == b.item_id(schema);
}

}  // namespace seqvault
