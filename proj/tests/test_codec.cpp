#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "seqvault/codec.hpp"
#include "seqvault/schema.hpp"

using namespace seqvault;

namespace {

// Random schema-conformant events, newest-first, unique (ts, item) keys.
std::vector<BehaviorEvent> random_events(const SequenceSchema& schema, std::size_t n,
                                         std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint64_t> id_dist(1, 1u << 20);
    std::uniform_int_distribution<std::uint32_t> enum_dist(0, 11);
    std::uniform_int_distribution<std::uint16_t> u16_dist(0, 9999);
    std::uniform_real_distribution<float> f_dist(-10.0f, 10.0f);
    std::bernoulli_distribution null_coin(0.3);

    std::int64_t ts = 1700000000 + static_cast<std::int64_t>(n) * 5;
    std::vector<BehaviorEvent> events;
    for (std::size_t i = 0; i < n; ++i) {
        ts -= static_cast<std::int64_t>(rng() % 4);  // ties allowed
        BehaviorEvent e;
        for (const auto& f : schema.fields) {
            if (f.nullable && null_coin(rng)) {
                e.values.emplace_back(std::nullopt);
                continue;
            }
            switch (f.kind) {
                case FieldKind::U64Id: e.values.emplace_back(id_dist(rng)); break;
                case FieldKind::U32Enum: e.values.emplace_back(enum_dist(rng)); break;
                case FieldKind::I64Timestamp: e.values.emplace_back(ts); break;
                case FieldKind::F32: e.values.emplace_back(f_dist(rng)); break;
                case FieldKind::F32Vec: {
                    std::vector<float> v(f.dim);
                    for (auto& x : v) x = f_dist(rng);
                    e.values.emplace_back(std::move(v));
                    break;
                }
                case FieldKind::U16: e.values.emplace_back(u16_dist(rng)); break;
            }
        }
        events.push_back(std::move(e));
    }
    return events;
}

bool events_equal(const BehaviorEvent& a, const BehaviorEvent& b) {
    if (a.values.size() != b.values.size()) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        if (a.values[i].has_value() != b.values[i].has_value()) return false;
        if (a.values[i].has_value() && *a.values[i] != *b.values[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("varint round trip and corruption") {
    std::vector<std::uint64_t> values = {0, 1, 127, 128, 300, 1u << 20, 0xffffffffffffffffull};
    std::vector<std::uint8_t> buf;
    for (auto v : values) codec::put_varint(buf, v);
    std::size_t at = 0;
    for (auto v : values) CHECK(codec::get_varint(buf, at) == v);
    CHECK(at == buf.size());

    std::vector<std::uint8_t> bad = {0x80, 0x80};  // never terminates
    std::size_t b = 0;
    CHECK_THROWS_AS(codec::get_varint(bad, b), CorruptionError);

    CHECK(codec::unzigzag(codec::zigzag(-5)) == -5);
    CHECK(codec::unzigzag(codec::zigzag(1700000000)) == 1700000000);
}

TEST_CASE("schema json round trip and validation") {
    const SequenceSchema ref = SequenceSchema::reference();
    ref.validate();
    const SequenceSchema back = SequenceSchema::from_json(ref.to_json());
    CHECK(back.schema_hash() == ref.schema_hash());
    CHECK(back.canonical() == ref.canonical());
    CHECK(ref.timestamp_field() == 3);
    CHECK(ref.item_id_field() == 0);

    SequenceSchema two_ts = ref;
    two_ts.fields.push_back({"ts2", FieldKind::I64Timestamp, 1, false});
    CHECK_THROWS_AS(two_ts.validate(), std::invalid_argument);

    SequenceSchema dup = ref;
    dup.fields.push_back({"item_id", FieldKind::U64Id, 1, false});
    CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

    CHECK_THROWS_AS(SequenceSchema::from_json("[{\"name\":\"x\",\"kind\":\"nope\"}]"),
                    std::invalid_argument);
}

TEST_CASE("empty and single-event blocks round trip") {
    const SequenceSchema schema = SequenceSchema::reference();
    const auto empty_block = codec::pack_block(schema, {});
    auto back = codec::unpack_block(schema, empty_block, "t0");
    CHECK(back.empty());

    std::mt19937_64 rng(5);
    auto one = random_events(schema, 1, rng);
    const auto block = codec::pack_block(schema, one);
    auto round = codec::unpack_block(schema, block, "t1");
    REQUIRE(round.size() == 1);
    CHECK(events_equal(round[0], one[0]));
    // Bitwise: repacking gives identical bytes.
    CHECK(codec::pack_block(schema, round) == block);
}

TEST_CASE("randomized pack/unpack identity across schemas") {
    std::mt19937_64 rng(99);
    std::vector<SequenceSchema> schemas;
    schemas.push_back(SequenceSchema::reference());
    {
        SequenceSchema s;
        s.fields = {
            {"id", FieldKind::U64Id, 1, false},
            {"when", FieldKind::I64Timestamp, 1, false},
            {"emb_ref", FieldKind::U64Id, 1, true},
            {"vec", FieldKind::F32Vec, 3, true},
            {"flagword", FieldKind::U16, 1, false},
            {"channel", FieldKind::U32Enum, 1, true},
        };
        schemas.push_back(s);
    }
    for (const auto& schema : schemas) {
        for (int round = 0; round < 25; ++round) {
            const std::size_t n = rng() % 200;
            auto events = random_events(schema, n, rng);
            const auto block = codec::pack_block(schema, events);
            auto back = codec::unpack_block(schema, block, "rt");
            REQUIRE(back.size() == events.size());
            for (std::size_t i = 0; i < n; ++i) CHECK(events_equal(back[i], events[i]));
            CHECK(codec::pack_block(schema, back) == block);
        }
    }
}

TEST_CASE("unsorted events are rejected at pack time") {
    const SequenceSchema schema = SequenceSchema::reference();
    std::mt19937_64 rng(7);
    auto events = random_events(schema, 4, rng);
    std::swap(events.front(), events.back());
    CHECK_THROWS_AS(codec::pack_events(schema, events), std::invalid_argument);
}

TEST_CASE("checksum corruption names the block") {
    const SequenceSchema schema = SequenceSchema::reference();
    std::mt19937_64 rng(11);
    auto events = random_events(schema, 20, rng);
    auto block = codec::pack_block(schema, events);
    block[10] ^= 0x40;
    CHECK_THROWS_WITH_AS(codec::unpack_block(schema, block, "seg-7@128"),
                         doctest::Contains("seg-7@128"), CorruptionError);

    auto tiny = codec::pack_block(schema, events);
    tiny.resize(6);
    CHECK_THROWS_AS(codec::unpack_block(schema, tiny, "short"), CorruptionError);
}

TEST_CASE("string baseline format") {
    SequenceSchema schema;
    schema.fields = {
        {"id", FieldKind::U64Id, 1, false},
        {"ts", FieldKind::I64Timestamp, 1, false},
    };
    BehaviorEvent e;
    e.values = {std::uint64_t{42}, std::int64_t{1700000000}};
    auto bytes = codec::string_baseline_encode(schema, {e});
    const std::string text(bytes.begin(), bytes.end());
    CHECK(text == "42\t1700000000\n");

    // Size grows with digit count, not type width.
    BehaviorEvent small;
    small.values = {std::uint64_t{7}, std::int64_t{9}};
    BehaviorEvent large;
    large.values = {std::uint64_t{18446744073709551615ull}, std::int64_t{1700000000}};
    CHECK(codec::string_baseline_encode(schema, {small}).size() <
          codec::string_baseline_encode(schema, {large}).size());
}

TEST_CASE("packed reference corpus beats the string baseline two to one") {
    // 1000 events over the integral-heavy reference schema: u64 id, two
    // enums, timestamps one second apart, one f32.
    const SequenceSchema schema = SequenceSchema::reference();
    std::mt19937_64 rng(2027);
    std::uniform_int_distribution<std::uint64_t> id_dist(1, 1000000);
    std::uniform_int_distribution<std::uint32_t> enum_dist(0, 7);
    std::uniform_real_distribution<float> f_dist(0.0f, 1.0f);

    std::vector<BehaviorEvent> events;
    std::int64_t ts = 1700000000;
    for (int i = 0; i < 1000; ++i) {
        BehaviorEvent e;
        e.values = {id_dist(rng), enum_dist(rng), enum_dist(rng), ts, f_dist(rng)};
        events.push_back(std::move(e));
        ts -= 1;
    }
    const auto packed = codec::pack_events(schema, events);
    const auto text = codec::string_baseline_encode(schema, events);
    CHECK(text.size() >= packed.size());
    CHECK(static_cast<double>(packed.size()) <= 0.5 * static_cast<double>(text.size()));
}
