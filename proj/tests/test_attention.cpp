#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "laser/attention.hpp"
#include "laser/ops.hpp"

using namespace laser;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937& rng, float lo = -1.0f,
                     float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Matrix m(r, c);
    for (auto& v : m.data()) v = dist(rng);
    return m;
}

Vector random_vector(std::size_t d, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Vector v(d);
    for (auto& x : v.data()) x = dist(rng);
    return v;
}

SequenceBatchInput random_input(const LaserConfig& cfg, std::size_t len, std::size_t valid,
                                std::mt19937& rng) {
    SequenceBatchInput in;
    in.tokens = random_matrix(len, cfg.embed_dim, rng);
    in.timestamps.resize(len);
    in.request_time = 1.7e9;
    for (std::size_t i = 0; i < len; ++i)
        in.timestamps[i] = in.request_time - 60.0 * static_cast<double>(i + 1);
    in.valid_len = valid;
    in.target = random_vector(cfg.embed_dim, rng);
    return in;
}

// Fully scalar per-segment oracle for the gated compression, heads >= 1.
// Deliberately avoids the library's matmul/sigmoid helpers.
Matrix sta_oracle(const Vector& t, const Matrix& h, const StaParams& p, const LaserConfig& cfg,
                  const std::vector<bool>& mask) {
    const std::size_t d = cfg.embed_dim, w = cfg.segment_w, n_segs = h.rows() / w;
    const std::size_t dqh = cfg.qk_dim / cfg.heads, dvh = d / cfg.heads;
    const double gamma = cfg.resolved_gamma();
    std::vector<double> q(cfg.qk_dim, 0.0);
    for (std::size_t b = 0; b < cfg.qk_dim; ++b)
        for (std::size_t a = 0; a < d; ++a) q[b] += static_cast<double>(t[a]) * p.w_q(a, b);

    Matrix out(n_segs, d);
    for (std::size_t s = 0; s < n_segs; ++s) {
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t pos = s * w + j;
                if (!mask[pos]) continue;
                double dot = 0.0;
                for (std::size_t c = 0; c < dqh; ++c) {
                    double k = 0.0;
                    for (std::size_t a = 0; a < d; ++a)
                        k += static_cast<double>(h(pos, a)) * p.w_k(a, head * dqh + c);
                    dot += q[head * dqh + c] * k;
                }
                const double score = 1.0 / (1.0 + std::exp(-dot / gamma));
                for (std::size_t c = 0; c < dvh; ++c) {
                    double v = 0.0;
                    for (std::size_t a = 0; a < d; ++a)
                        v += static_cast<double>(h(pos, a)) * p.w_v(a, head * dvh + c);
                    out(s, head * dvh + c) += static_cast<float>(score * v);
                }
            }
        }
    }
    return out;
}

}  // namespace

TEST_CASE("recency table bucketing") {
    RecencyTable table;
    table.table = Matrix(3, 4);
    table.bucket_edges = {60.0f, 3600.0f};
    CHECK(table.bucket_for(0.0) == 0);
    CHECK(table.bucket_for(59.9) == 0);
    CHECK(table.bucket_for(60.0) == 1);  // tie goes to the higher bucket
    CHECK(table.bucket_for(3599.0) == 1);
    CHECK(table.bucket_for(3600.0) == 2);
    CHECK(table.bucket_for(1e12) == 2);  // overflow clamps to the last bucket
    CHECK(table.bucket_for(-5.0) == 0);

    auto edges = RecencyTable::default_edges(32);
    CHECK(edges.size() == 31);
    CHECK(edges.front() == doctest::Approx(1.0f));
    CHECK(edges.back() == doctest::Approx(365.0f * 24 * 3600).epsilon(1e-4));
    for (std::size_t i = 1; i < edges.size(); ++i) CHECK(edges[i] > edges[i - 1]);
}

TEST_CASE("apply_recency") {
    std::mt19937 rng(17);
    LaserConfig cfg;
    cfg.embed_dim = 4;
    SequenceBatchInput in = random_input(cfg, 6, 4, rng);

    RecencyTable zero;
    zero.table = Matrix(8, 4);
    zero.bucket_edges = RecencyTable::default_edges(8);
    auto rz = apply_recency(in, zero, in.valid_len);
    for (std::size_t i = 0; i < in.tokens.data().size(); ++i)
        CHECK(rz.tokens.data()[i] == in.tokens.data()[i]);

    RecencyTable table;
    table.table = random_matrix(8, 4, rng);
    table.bucket_edges = RecencyTable::default_edges(8);
    auto r = apply_recency(in, table, in.valid_len);
    // Valid rows move by their bucket row; padding rows pass through.
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t b = table.bucket_for(in.request_time - in.timestamps[i]);
        for (std::size_t c = 0; c < 4; ++c)
            CHECK(r.tokens(i, c) == doctest::Approx(in.tokens(i, c) + table.table(b, c)));
    }
    for (std::size_t i = 4; i < 6; ++i)
        for (std::size_t c = 0; c < 4; ++c) CHECK(r.tokens(i, c) == in.tokens(i, c));

    // Two deltas in the same bucket get the identical additive vector.
    SequenceBatchInput twin = in;
    twin.timestamps[0] = twin.request_time - 61.0;
    twin.timestamps[1] = twin.request_time - 62.0;
    auto rt = apply_recency(twin, table, 2);
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(rt.tokens(0, c) - twin.tokens(0, c) ==
              doctest::Approx(rt.tokens(1, c) - twin.tokens(1, c)));

    // Clock skew: future timestamp clamps to bucket 0 and counts a warning.
    SequenceBatchInput skew = in;
    skew.timestamps[0] = skew.request_time + 100.0;
    auto rs = apply_recency(skew, table, 1);
    CHECK(rs.clamped == 1);
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(rs.tokens(0, c) == doctest::Approx(skew.tokens(0, c) + table.table(0, c)));
}

TEST_CASE("split_seq partition") {
    std::mt19937 rng(23);
    Matrix h = random_matrix(6, 3, rng);
    auto segs = split_seq(h, 3);
    CHECK(segs.size() == 2);
    CHECK(segs[0].rows() == 3);

    auto whole = split_seq(h, 6);
    CHECK(whole.size() == 1);
    for (std::size_t i = 0; i < h.data().size(); ++i)
        CHECK(whole[0].data()[i] == h.data()[i]);

    // Round trip: concatenation reproduces h bitwise.
    auto parts = split_seq(h, 2);
    std::size_t row = 0;
    for (const auto& seg : parts)
        for (std::size_t j = 0; j < seg.rows(); ++j, ++row)
            for (std::size_t c = 0; c < 3; ++c) CHECK(seg(j, c) == h(row, c));

    CHECK_THROWS_AS(split_seq(h, 4), ShapeError);
}

TEST_CASE("sta_naive special cases") {
    LaserConfig cfg;
    cfg.embed_dim = 4;
    cfg.qk_dim = 2;
    cfg.segment_w = 3;
    cfg.heads = 1;
    std::mt19937 rng(31);

    StaParams p;
    p.w_q = random_matrix(4, 2, rng);
    p.w_k = Matrix(4, 2);  // zero keys: every unmasked gate is exactly 0.5
    p.w_v = random_matrix(4, 4, rng);

    Vector t = random_vector(4, rng);
    Matrix h = random_matrix(6, 4, rng);
    std::vector<bool> mask(6, true);
    auto res = sta_naive(t, h, p, cfg, mask);
    CHECK(res.compressed.rows() == 2);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t c = 0; c < 4; ++c) {
            double want = 0.0;
            for (std::size_t j = 0; j < 3; ++j) {
                double v = 0.0;
                for (std::size_t a = 0; a < 4; ++a) v += h(s * 3 + j, a) * p.w_v(a, c);
                want += 0.5 * v;
            }
            CHECK(res.compressed(s, c) == doctest::Approx(want).epsilon(1e-5));
        }
    for (std::size_t i = 0; i < 6; ++i) CHECK(res.scores[i] == doctest::Approx(0.5f));

    // Fully masked segment compresses to the zero vector.
    std::vector<bool> dead = {true, true, true, false, false, false};
    auto res2 = sta_naive(t, h, p, cfg, dead);
    for (std::size_t c = 0; c < 4; ++c) CHECK(res2.compressed(1, c) == 0.0f);
    for (std::size_t i = 3; i < 6; ++i) CHECK(res2.scores[i] == 0.0f);
}

TEST_CASE("sta_naive matches the scalar per-segment oracle") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    cfg.segment_w = 5;
    cfg.heads = 1;
    std::mt19937 rng(37);
    StaParams p;
    p.w_q = random_matrix(8, 4, rng);
    p.w_k = random_matrix(8, 4, rng);
    p.w_v = random_matrix(8, 8, rng);
    Vector t = random_vector(8, rng);
    Matrix h = random_matrix(20, 8, rng);
    std::vector<bool> mask(20, true);
    mask[17] = mask[18] = mask[19] = false;

    auto res = sta_naive(t, h, p, cfg, mask);
    Matrix want = sta_oracle(t, h, p, cfg, mask);
    for (std::size_t i = 0; i < want.data().size(); ++i)
        CHECK(std::fabs(res.compressed.data()[i] - want.data()[i]) < 1e-6);
}

TEST_CASE("sta_vectorized equals sta_naive across random shapes and heads") {
    std::mt19937 rng(41);
    std::uniform_int_distribution<int> wdist(1, 8), sdist(1, 12), hdist(1, 2);
    for (int it = 0; it < 60; ++it) {
        LaserConfig cfg;
        cfg.heads = static_cast<std::size_t>(hdist(rng));
        cfg.embed_dim = 2 * cfg.heads * static_cast<std::size_t>(sdist(rng));
        cfg.qk_dim = cfg.heads * static_cast<std::size_t>(1 + (sdist(rng) % 3));
        if (cfg.qk_dim > cfg.embed_dim) cfg.qk_dim = cfg.embed_dim;
        cfg.segment_w = static_cast<std::size_t>(wdist(rng));
        const std::size_t n_segs = 1 + static_cast<std::size_t>(sdist(rng));
        const std::size_t len = n_segs * cfg.segment_w;

        StaParams p;
        p.w_q = random_matrix(cfg.embed_dim, cfg.qk_dim, rng);
        p.w_k = random_matrix(cfg.embed_dim, cfg.qk_dim, rng);
        p.w_v = random_matrix(cfg.embed_dim, cfg.embed_dim, rng);
        Vector t = random_vector(cfg.embed_dim, rng);
        Matrix h = random_matrix(len, cfg.embed_dim, rng);
        std::vector<bool> mask(len);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (std::size_t i = 0; i < len; ++i) mask[i] = u(rng) > 0.2f;

        auto naive = sta_naive(t, h, p, cfg, mask);
        auto vec = sta_vectorized(t, h, p, cfg, mask);
        for (std::size_t i = 0; i < naive.compressed.data().size(); ++i) {
            const float a = naive.compressed.data()[i], b = vec.compressed.data()[i];
            CHECK(std::fabs(a - b) <= 1e-5 * (1.0 + std::fabs(a)));
        }
        for (std::size_t i = 0; i < len; ++i)
            CHECK(std::fabs(naive.scores[i] - vec.scores[i]) <= 1e-5);
    }
}

TEST_CASE("sta window of one degenerates to score-scaled value rows") {
    LaserConfig cfg;
    cfg.embed_dim = 6;
    cfg.qk_dim = 3;
    cfg.segment_w = 1;
    std::mt19937 rng(43);
    StaParams p;
    p.w_q = random_matrix(6, 3, rng);
    p.w_k = random_matrix(6, 3, rng);
    p.w_v = random_matrix(6, 6, rng);
    Vector t = random_vector(6, rng);
    Matrix h = random_matrix(7, 6, rng);
    std::vector<bool> mask(7, true);
    auto res = sta_vectorized(t, h, p, cfg, mask);
    Matrix hv = matmul(h, p.w_v);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(res.compressed(i, c) ==
                  doctest::Approx(res.scores[i] * hv(i, c)).epsilon(1e-5));
}

TEST_CASE("silence: gate suppresses a hostile segment while softmax cannot") {
    // Pre-activations pinned at -12 for every position of the segment.
    LaserConfig cfg;
    cfg.embed_dim = 4;
    cfg.qk_dim = 2;
    cfg.segment_w = 3;
    cfg.gamma = 1.0f;
    std::mt19937 rng(47);

    StaParams p;
    p.w_q = Matrix(4, 2);
    p.w_q(0, 0) = 1.0f;  // q = [t_0, 0]
    p.w_k = Matrix(4, 2);
    p.w_k(0, 0) = -12.0f;  // k = [-12*h_0, 0]
    p.w_v = random_matrix(4, 4, rng);

    Vector t(4);
    t[0] = 1.0f;
    Matrix h(3, 4);
    for (std::size_t j = 0; j < 3; ++j) {
        h(j, 0) = 1.0f;  // pre-activation = -12 <= -10 everywhere
        for (std::size_t c = 1; c < 4; ++c) h(j, c) = 0.5f + 0.1f * static_cast<float>(j);
    }
    std::vector<bool> mask(3, true);

    auto gated = sta_vectorized(t, h, p, cfg, mask);
    Matrix v = matmul(h, p.w_v);
    float vmax = 0.0f;
    for (auto x : v.data()) vmax = std::max(vmax, std::fabs(x));
    float smax = 0.0f;
    for (auto x : gated.compressed.data()) smax = std::max(smax, std::fabs(x));
    CHECK(smax <= 4.54e-5f * 3.0f * vmax);

    LaserConfig soft = cfg;
    soft.sta_softmax = true;
    auto norm = sta_vectorized(t, h, p, soft, mask);
    double wsum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) wsum += norm.scores[j];
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("monotone gate: raising one pre-activation only raises its own score") {
    LaserConfig cfg;
    cfg.embed_dim = 4;
    cfg.qk_dim = 2;
    cfg.segment_w = 4;
    cfg.gamma = 1.0f;
    std::mt19937 rng(53);
    StaParams p;
    p.w_q = random_matrix(4, 2, rng);
    p.w_k = random_matrix(4, 2, rng);
    p.w_v = random_matrix(4, 4, rng);
    Vector t = random_vector(4, rng);
    Matrix h = random_matrix(4, 4, rng);
    std::vector<bool> mask(4, true);

    auto base = sta_vectorized(t, h, p, cfg, mask);

    // Bump position 2's key projection along q.
    Matrix q(1, 4);
    for (std::size_t c = 0; c < 4; ++c) q(0, c) = t[c];
    Matrix qp = matmul(q, p.w_q);
    Matrix h2 = h;
    // Shift the row so its pre-activation strictly increases: move along w_k^T q.
    Vector dir(4);
    for (std::size_t a = 0; a < 4; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < 2; ++b) acc += qp(0, b) * p.w_k(a, b);
        dir[a] = static_cast<float>(acc);
    }
    double norm2 = 0.0;
    for (std::size_t a = 0; a < 4; ++a) norm2 += dir[a] * dir[a];
    REQUIRE(norm2 > 1e-8);
    for (std::size_t a = 0; a < 4; ++a) h2(2, a) += 0.5f * dir[a];

    auto bumped = sta_vectorized(t, h2, p, cfg, mask);
    CHECK(bumped.scores[2] > base.scores[2]);
    // Sigmoid scores are independent: the untouched positions keep theirs.
    CHECK(bumped.scores[0] == base.scores[0]);
    CHECK(bumped.scores[1] == base.scores[1]);
    CHECK(bumped.scores[3] == base.scores[3]);

    // Softmax couples them: the same bump drains the other positions.
    LaserConfig soft = cfg;
    soft.sta_softmax = true;
    auto sbase = sta_vectorized(t, h, p, soft, mask);
    auto sbump = sta_vectorized(t, h2, p, soft, mask);
    CHECK(sbump.scores[2] > sbase.scores[2]);
    CHECK(sbump.scores[0] < sbase.scores[0]);
}

TEST_CASE("segment_refine") {
    LaserConfig cfg;
    cfg.embed_dim = 4;
    cfg.ffn_ratio = 2;
    std::mt19937 rng(59);

    StaParams p;
    p.ffn_w1 = Matrix(4, 8);
    p.ffn_b1 = Vector(8);
    p.ffn_w2 = Matrix(8, 4);
    p.ffn_b2 = Vector(4);
    p.ln_gain = Vector(4, 1.0f);
    p.ln_bias = Vector(4);

    // Zero FFN: refine reduces to plain layer norm.
    Matrix x = random_matrix(3, 4, rng);
    Matrix got = segment_refine(x, p);
    Matrix want = layer_norm(x, p.ln_gain, p.ln_bias);
    for (std::size_t i = 0; i < got.data().size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]));

    // Constant row maps to the bias.
    p.ln_bias = Vector{0.5f, -1.0f, 2.0f, 0.0f};
    Matrix cst(1, 4, 3.25f);
    Matrix gc = segment_refine(cst, p);
    for (std::size_t c = 0; c < 4; ++c) CHECK(gc(0, c) == doctest::Approx(p.ln_bias[c]));

    // Random weights against the composition oracle.
    p.ffn_w1 = random_matrix(4, 8, rng);
    p.ffn_w2 = random_matrix(8, 4, rng);
    for (auto& b : p.ffn_b1.data()) b = 0.05f;
    p.ln_gain = random_vector(4, rng, 0.5f, 1.5f);
    Matrix f = ffn_forward(x, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2);
    Matrix comp = layer_norm(add(f, x), p.ln_gain, p.ln_bias);
    Matrix gr = segment_refine(x, p);
    for (std::size_t i = 0; i < gr.data().size(); ++i)
        CHECK(gr.data()[i] == doctest::Approx(comp.data()[i]).epsilon(1e-6));
}

TEST_CASE("gsta_forward") {
    const std::size_t d = 6;
    std::mt19937 rng(61);
    Matrix compressed = random_matrix(4, d, rng);
    Vector t = random_vector(d, rng);
    std::vector<bool> live(4, true);

    // Zero value projections leave the target untouched (residual identity).
    std::vector<GstaLayerParams> zl(2);
    for (auto& l : zl) {
        l.w_q = random_matrix(d, d, rng);
        l.w_k = random_matrix(d, d, rng);
        l.w_v = Matrix(d, d);
    }
    auto rz = gsta_forward(t, compressed, zl, live);
    for (std::size_t c = 0; c < d; ++c) CHECK(rz.z[c] == t[c]);

    // Single unmasked segment: softmax over one key is exactly 1.
    std::vector<GstaLayerParams> one(1);
    one[0].w_q = random_matrix(d, d, rng);
    one[0].w_k = random_matrix(d, d, rng);
    one[0].w_v = random_matrix(d, d, rng);
    std::vector<bool> solo = {false, true, false, false};
    auto rs = gsta_forward(t, compressed, one, solo);
    CHECK(rs.attn_maps[0][1] == doctest::Approx(1.0f));
    for (std::size_t c = 0; c < d; ++c) {
        double o = 0.0;
        for (std::size_t a = 0; a < d; ++a) o += compressed(1, a) * one[0].w_v(a, c);
        CHECK(rs.z[c] == doctest::Approx(t[c] + o).epsilon(1e-5));
    }

    // Attention rows sum to one over unmasked segments.
    std::vector<GstaLayerParams> two(2);
    for (auto& l : two) {
        l.w_q = random_matrix(d, d, rng);
        l.w_k = random_matrix(d, d, rng);
        l.w_v = random_matrix(d, d, rng);
    }
    std::vector<bool> partial = {true, false, true, true};
    auto rp = gsta_forward(t, compressed, two, partial);
    for (const auto& attn : rp.attn_maps) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 4; ++j) sum += attn[j];
        CHECK(std::fabs(sum - 1.0) < 1e-6);
        CHECK(attn[1] == 0.0f);
    }

    std::vector<bool> none(4, false);
    CHECK_THROWS_AS(gsta_forward(t, compressed, two, none), std::domain_error);
}

TEST_CASE("gsta_forward matches a step-by-step scalar oracle") {
    const std::size_t d = 5;
    std::mt19937 rng(67);
    Matrix compressed = random_matrix(6, d, rng);
    Vector t0 = random_vector(d, rng);
    std::vector<GstaLayerParams> layers(2);
    for (auto& l : layers) {
        l.w_q = random_matrix(d, d, rng);
        l.w_k = random_matrix(d, d, rng);
        l.w_v = random_matrix(d, d, rng);
    }
    std::vector<bool> live = {true, true, false, true, true, true};

    // Scalar oracle with its own projections and softmax.
    std::vector<double> t(d);
    for (std::size_t c = 0; c < d; ++c) t[c] = t0[c];
    for (const auto& l : layers) {
        std::vector<double> q(d, 0.0);
        for (std::size_t b = 0; b < d; ++b)
            for (std::size_t a = 0; a < d; ++a) q[b] += t[a] * l.w_q(a, b);
        std::vector<double> logits(6, 0.0);
        for (std::size_t j = 0; j < 6; ++j)
            for (std::size_t b = 0; b < d; ++b) {
                double k = 0.0;
                for (std::size_t a = 0; a < d; ++a) k += compressed(j, a) * l.w_k(a, b);
                logits[j] += q[b] * k;
            }
        for (auto& v : logits) v /= std::sqrt(static_cast<double>(d));
        double mx = -1e300;
        for (std::size_t j = 0; j < 6; ++j)
            if (live[j]) mx = std::max(mx, logits[j]);
        double sum = 0.0;
        std::vector<double> attn(6, 0.0);
        for (std::size_t j = 0; j < 6; ++j)
            if (live[j]) {
                attn[j] = std::exp(logits[j] - mx);
                sum += attn[j];
            }
        for (auto& a : attn) a /= sum;
        for (std::size_t c = 0; c < d; ++c) {
            double o = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                double v = 0.0;
                for (std::size_t a = 0; a < d; ++a) v += compressed(j, a) * l.w_v(a, c);
                o += attn[j] * v;
            }
            t[c] += o;
        }
    }

    auto got = gsta_forward(t0, compressed, layers, live);
    for (std::size_t c = 0; c < d; ++c)
        CHECK(std::fabs(got.z[c] - t[c]) < 1e-6);
}

TEST_CASE("fuse") {
    const std::size_t d = 3;
    std::mt19937 rng(71);
    Vector z = random_vector(d, rng);

    Matrix single = random_matrix(1, d, rng);
    std::vector<bool> one = {true};
    auto f1 = fuse(z, single, 1, one);
    CHECK(f1.fused.dim() == d * 3);
    for (std::size_t c = 0; c < d; ++c) {
        CHECK(f1.fused[c] == z[c]);
        CHECK(f1.fused[d + c] == single(0, c));      // max pool of one row
        CHECK(f1.fused[2 * d + c] == single(0, c));  // the same row as the recent segment
    }

    Matrix many = random_matrix(5, d, rng);
    std::vector<bool> live = {true, false, true, true, false};
    auto f2 = fuse(z, many, 4, live);
    CHECK(f2.fused.dim() == d * (2 + 4));
    for (std::size_t c = 0; c < d; ++c) {
        float best = -1e30f;
        for (std::size_t s = 0; s < 5; ++s)
            if (live[s]) best = std::max(best, many(s, c));
        CHECK(f2.max_pooled[c] == best);
    }
    // Masked recent rows contribute zero vectors.
    for (std::size_t c = 0; c < d; ++c) {
        CHECK(f2.recent_segments[0][c] == many(0, c));
        CHECK(f2.recent_segments[1][c] == 0.0f);
        CHECK(f2.recent_segments[2][c] == many(2, c));
        CHECK(f2.recent_segments[3][c] == many(3, c));
    }
}

TEST_CASE("laser_forward shape law and determinism") {
    LaserConfig cfg;
    cfg.seq_len = 1000;
    cfg.embed_dim = 16;
    cfg.qk_dim = 4;
    cfg.segment_w = 10;
    cfg.gsta_layers = 2;
    cfg.ffn_ratio = 2;
    cfg.recent_k = 3;
    std::mt19937 rng(73);
    LaserParams params = LaserParams::init(cfg, 99);
    SequenceBatchInput in = random_input(cfg, 1000, 1000, rng);

    auto out = laser_forward(in, params, cfg);
    CHECK(out.compressed.rows() == 100);  // 1000/10 compressed rows
    CHECK(out.fused.dim() == 16 * (2 + 3));
    for (auto v : out.fused.data()) CHECK(std::isfinite(v));

    auto out2 = laser_forward(in, params, cfg);
    for (std::size_t i = 0; i < out.fused.dim(); ++i)
        CHECK(out.fused[i] == out2.fused[i]);  // bitwise deterministic
}

TEST_CASE("laser_forward empty history keeps the target") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    cfg.segment_w = 5;
    cfg.recent_k = 2;
    std::mt19937 rng(79);
    LaserParams params = LaserParams::init(cfg, 7);

    SequenceBatchInput in;
    in.tokens = Matrix(0, 8);
    in.request_time = 1.7e9;
    in.valid_len = 0;
    in.target = random_vector(8, rng);

    auto out = laser_forward(in, params, cfg);
    for (std::size_t c = 0; c < 8; ++c) CHECK(out.z[c] == in.target[c]);
    for (auto v : out.fused.data()) CHECK(std::isfinite(v));
}

TEST_CASE("laser_forward padding neutrality") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    cfg.segment_w = 5;
    cfg.recent_k = 2;
    std::mt19937 rng(83);
    LaserParams params = LaserParams::init(cfg, 5);

    SequenceBatchInput base = random_input(cfg, 17, 17, rng);
    auto out1 = laser_forward(base, params, cfg);

    SequenceBatchInput padded = base;
    padded.tokens = Matrix(30, 8);
    padded.timestamps.resize(30, 0.0);
    for (std::size_t i = 0; i < 17; ++i) {
        for (std::size_t c = 0; c < 8; ++c) padded.tokens(i, c) = base.tokens(i, c);
        padded.timestamps[i] = base.timestamps[i];
    }
    // Garbage in the padding rows must not leak through the masks.
    for (std::size_t i = 17; i < 30; ++i)
        for (std::size_t c = 0; c < 8; ++c) padded.tokens(i, c) = 1e3f;
    auto out2 = laser_forward(padded, params, cfg);

    for (std::size_t i = 0; i < out1.fused.dim(); ++i)
        CHECK(std::fabs(out1.fused[i] - out2.fused[i]) < 1e-6);
}

TEST_CASE("laser_forward residual identity with zero value projections") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    cfg.segment_w = 5;
    std::mt19937 rng(89);
    LaserParams params = LaserParams::init(cfg, 3);
    for (auto& layer : params.gsta) layer.w_v = Matrix(8, 8);

    SequenceBatchInput in = random_input(cfg, 20, 20, rng);
    auto out = laser_forward(in, params, cfg);
    for (std::size_t c = 0; c < 8; ++c) CHECK(out.z[c] == in.target[c]);
}

TEST_CASE("two-head preset splits scores and value slices") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 4;
    cfg.segment_w = 2;
    cfg.heads = 2;
    std::mt19937 rng(97);
    StaParams p;
    p.w_q = random_matrix(8, 4, rng);
    p.w_k = random_matrix(8, 4, rng);
    p.w_v = random_matrix(8, 8, rng);
    Vector t = random_vector(8, rng);
    Matrix h = random_matrix(6, 8, rng);
    std::vector<bool> mask(6, true);

    auto naive = sta_naive(t, h, p, cfg, mask);
    auto vec = sta_vectorized(t, h, p, cfg, mask);
    for (std::size_t i = 0; i < naive.compressed.data().size(); ++i)
        CHECK(std::fabs(naive.compressed.data()[i] - vec.compressed.data()[i]) <=
              1e-5 * (1.0 + std::fabs(naive.compressed.data()[i])));

    // Head 0 only influences value columns [0,4); verify by zeroing its keys.
    StaParams p2 = p;
    for (std::size_t a = 0; a < 8; ++a)
        for (std::size_t b = 0; b < 2; ++b) p2.w_k(a, b) = 0.0f;
    auto half = sta_vectorized(t, h, p2, cfg, mask);
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t c = 4; c < 8; ++c)
            CHECK(half.compressed(s, c) == doctest::Approx(naive.compressed(s, c)));
}

TEST_CASE("config validation") {
    LaserConfig cfg;
    cfg.embed_dim = 8;
    cfg.qk_dim = 3;
    cfg.heads = 2;  // 3 % 2 != 0
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg.qk_dim = 4;
    cfg.embed_dim = 9;  // 9 % 2 != 0
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg.embed_dim = 8;
    cfg.gsta_layers = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg.gsta_layers = 1;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.resolved_gamma() == doctest::Approx(std::sqrt(2.0f)));
}
