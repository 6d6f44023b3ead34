#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "laser/checkpoint.hpp"
#include "laser/flops.hpp"
#include "laser/ops.hpp"

using namespace laser;

namespace {

LaserConfig paper_cfg() {
    LaserConfig cfg;
    cfg.seq_len = 1000;
    cfg.embed_dim = 128;
    cfg.qk_dim = 32;
    cfg.segment_w = 10;
    cfg.gsta_layers = 2;
    cfg.ffn_ratio = 4;
    return cfg;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
    LaserConfig cfg;
    cfg.seq_len = 40;
    cfg.embed_dim = 12;
    cfg.qk_dim = 6;
    cfg.segment_w = 5;
    cfg.gsta_layers = 3;
    cfg.ffn_ratio = 2;
    cfg.recent_k = 4;
    cfg.heads = 2;
    cfg.gamma = 1.25f;
    cfg.sta_softmax = true;
    cfg.use_recency = false;

    LaserParams params = LaserParams::init(cfg, 12345);
    Checkpoint ck;
    ck.config = cfg;
    put_laser_params(ck, params);

    const auto bytes = serialize_checkpoint(ck);
    Checkpoint back = parse_checkpoint(bytes);
    const auto bytes2 = serialize_checkpoint(back);
    REQUIRE(bytes.size() == bytes2.size());
    CHECK(bytes == bytes2);

    CHECK(back.config.seq_len == cfg.seq_len);
    CHECK(back.config.heads == 2);
    CHECK(back.config.gamma == cfg.gamma);
    CHECK(back.config.sta_softmax);
    CHECK(!back.config.use_recency);
    CHECK(back.config.fuse_full);

    LaserParams p2 = get_laser_params(back);
    CHECK(p2.sta.w_q.data() == params.sta.w_q.data());
    CHECK(p2.sta.ffn_b1.data() == params.sta.ffn_b1.data());
    CHECK(p2.gsta.size() == 3);
    CHECK(p2.gsta[2].w_v.data() == params.gsta[2].w_v.data());
    CHECK(p2.recency.table.data() == params.recency.table.data());
    CHECK(p2.recency.bucket_edges == params.recency.bucket_edges);
}

TEST_CASE("checkpoint file i/o and corruption rejection") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "laser_ck_test.bin";

    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    LaserParams params = LaserParams::init(cfg, 7);
    Checkpoint ck;
    ck.config = cfg;
    put_laser_params(ck, params);
    save_checkpoint(ck, path.string());

    Checkpoint back = load_checkpoint(path.string());
    CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));

    // Magic damage is refused.
    auto bytes = serialize_checkpoint(ck);
    bytes[0] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(bytes), std::runtime_error);

    // Truncated payload is refused.
    auto cut = serialize_checkpoint(ck);
    cut.resize(cut.size() - 3);
    CHECK_THROWS_AS(parse_checkpoint(cut), std::runtime_error);

    fs::remove(path);
}

TEST_CASE("sta flops terms on the reference configuration") {
    auto rep = flops_sta(paper_cfg());
    CHECK(rep.term("proj") == doctest::Approx(2.048e7));
    CHECK(rep.term("ffn") == doctest::Approx(1.31072e7));
    CHECK(rep.term("attn") == doctest::Approx(1.6e5));
    CHECK(rep.total == doctest::Approx(3.37472e7));

    LaserConfig zero = paper_cfg();
    zero.seq_len = 0;
    auto rz = flops_sta(zero);
    CHECK(rz.total == 0.0);

    LaserConfig dbl = paper_cfg();
    dbl.seq_len = 2000;
    auto rd = flops_sta(dbl);
    for (const auto& t : rep.terms) CHECK(rd.term(t.name) == doctest::Approx(2.0 * t.value));
}

TEST_CASE("gsta flops") {
    auto rep = flops_gsta(paper_cfg());
    CHECK(rep.total == doctest::Approx(6.6048e6));

    LaserConfig m0 = paper_cfg();
    m0.gsta_layers = 4;
    CHECK(flops_gsta(m0).total == doctest::Approx(2.0 * rep.total));  // linear in M
}

TEST_CASE("laser flops closed form matches the reference budget") {
    auto rep = flops_laser(paper_cfg());
    // 1000 * 128^2 * (1 + 0.25 + 1.2)
    CHECK(rep.closed_form == doctest::Approx(4.01408e7));
    CHECK(rep.total == doctest::Approx(3.37472e7 + 6.6048e6));
    // Sum of parts and the simplified form agree within 5%.
    CHECK(std::fabs(rep.total - rep.closed_form) / rep.closed_form < 0.05);

    // Large w limit: only the projection terms remain.
    LaserConfig wide = paper_cfg();
    wide.segment_w = 1000000000;
    auto rw = flops_laser(wide);
    const double want = 1000.0 * 128 * 128 * (1.0 + 32.0 / 128.0);
    CHECK(rw.closed_form == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("self attention and target attention flops") {
    auto sa = flops_self_attention(paper_cfg());
    CHECK(sa.total == doctest::Approx(3.21536e8));

    LaserConfig one = paper_cfg();
    one.seq_len = 1;
    auto s1 = flops_self_attention(one);
    CHECK(s1.total == doctest::Approx(4.0 * 128 * 128 + 2.0 * 128));

    auto ta = flops_target_attention(paper_cfg());
    CHECK(ta.total == doctest::Approx(3.3024e7));  // 2*1000*128^2 + 2*1000*128
    LaserConfig zero = paper_cfg();
    zero.seq_len = 0;
    CHECK(flops_target_attention(zero).total == 0.0);

    // The quadratic/linear split: C_SA/C_TA doubles when L doubles, up to
    // the linear terms.
    LaserConfig dbl = paper_cfg();
    dbl.seq_len = 2000;
    const double r1 = sa.total / ta.total;
    const double r2 = flops_self_attention(dbl).total / flops_target_attention(dbl).total;
    CHECK(r2 > 1.5 * r1);
}

TEST_CASE("comparison report on the reference configuration") {
    auto cmp = compare_report(paper_cfg());
    CHECK(cmp.sa_over_laser == doctest::Approx(3.21536e8 / 4.01408e7));
    CHECK(cmp.sa_over_laser >= 7.5);
    CHECK(cmp.sa_over_laser_parts >= 7.5);
    CHECK(cmp.laser_over_ta <= 1.25);

    // Doubling d scales every total by ~4 up to the L^2 d term.
    LaserConfig big = paper_cfg();
    big.embed_dim = 256;
    big.qk_dim = 64;
    auto c2 = compare_report(big);
    CHECK(c2.laser.closed_form == doctest::Approx(4.0 * cmp.laser.closed_form));
    CHECK(c2.target_attention.total / cmp.target_attention.total ==
          doctest::Approx(4.0).epsilon(0.01));

    const std::string text = cmp.text();
    CHECK(text.find("laser.closed_form") != std::string::npos);
    CHECK(text.find("ratio self_attention/laser") != std::string::npos);
    const std::string js = cmp.json();
    CHECK(js.find("\"sa_over_laser\"") != std::string::npos);
}

TEST_CASE("totals are monotone in every dimension") {
    auto base = flops_laser(paper_cfg()).total;
    auto grow = [&](auto mutate) {
        LaserConfig c = paper_cfg();
        mutate(c);
        return flops_laser(c).total;
    };
    CHECK(grow([](LaserConfig& c) { c.seq_len += 500; }) > base);
    CHECK(grow([](LaserConfig& c) { c.embed_dim += 32; }) > base);
    CHECK(grow([](LaserConfig& c) { c.qk_dim += 8; }) > base);
    CHECK(grow([](LaserConfig& c) { c.gsta_layers += 1; }) > base);
    CHECK(grow([](LaserConfig& c) { c.ffn_ratio += 1; }) > base);
    for (const auto& t : flops_laser(paper_cfg()).terms) CHECK(t.value >= 0.0);
}

TEST_CASE("instrumented forward agrees with the cost model within 2x") {
    LaserConfig cfg = paper_cfg();
    cfg.recent_k = 2;
    LaserParams params = LaserParams::init(cfg, 51);
    std::mt19937 rng(52);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    SequenceBatchInput in;
    in.tokens = Matrix(1000, 128);
    for (auto& v : in.tokens.data()) v = dist(rng);
    in.request_time = 1.7e9;
    in.timestamps.resize(1000);
    for (std::size_t i = 0; i < 1000; ++i) in.timestamps[i] = in.request_time - 60.0 * (i + 1);
    in.valid_len = 1000;
    in.target = Vector(128);
    for (auto& v : in.target.data()) v = dist(rng);

    flopcount::reset();
    laser_forward(in, params, cfg);
    const double measured = static_cast<double>(flopcount::count());
    const double modeled = flops_laser(cfg).total;
    CHECK(measured / modeled < 2.0);
    CHECK(measured / modeled > 0.5);
}
