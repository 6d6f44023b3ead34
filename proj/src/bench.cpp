#include "harness/bench.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <random>

#include "laser/attention.hpp"
#include "laser/net/wire.hpp"
#include "seqvault/codec.hpp"
#include "seqvault/store.hpp"

namespace fs = std::filesystem;

namespace harness {

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.empty() ? 0.0 : v[v.size() / 2];
}

}  // namespace

LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys) {
    LinearFit fit;
    const std::size_t n = xs.size();
    if (n < 2) return fit;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double dn = static_cast<double>(n);
    const double denom = dn * sxx - sx * sx;
    if (denom == 0.0) return fit;
    fit.slope = (dn * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / dn;
    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / dn;
    for (std::size_t i = 0; i < n; ++i) {
        const double pred = fit.slope * xs[i] + fit.intercept;
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    fit.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
    return fit;
}

std::vector<AttnBenchPoint> bench_attention(const std::vector<std::size_t>& lengths,
                                            std::size_t embed_dim, std::size_t qk_dim,
                                            std::size_t segment_w, std::size_t repeats) {
    using namespace laser;
    std::vector<AttnBenchPoint> points;
    std::mt19937 rng(12021);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    float sink = 0.0f;

    for (std::size_t L : lengths) {
        LaserConfig cfg;
        cfg.seq_len = L;
        cfg.embed_dim = embed_dim;
        cfg.qk_dim = qk_dim;
        cfg.segment_w = segment_w;
        cfg.gsta_layers = 2;
        cfg.ffn_ratio = 2;
        cfg.recent_k = 2;
        LaserParams params = LaserParams::init(cfg, 7);

        SequenceBatchInput in;
        in.tokens = Matrix(L, embed_dim);
        for (auto& v : in.tokens.data()) v = dist(rng);
        in.timestamps.resize(L);
        in.request_time = 1.7e9;
        for (std::size_t i = 0; i < L; ++i) in.timestamps[i] = in.request_time - 60.0 * (i + 1);
        in.valid_len = L;
        in.target = Vector(embed_dim);
        for (auto& v : in.target.data()) v = dist(rng);
        std::vector<bool> mask(L, true);

        AttnBenchPoint point;
        point.seq_len = L;
        std::vector<double> naive_times, vec_times, fwd_times;
        for (std::size_t r = 0; r < repeats; ++r) {
            double t0 = now_ms();
            auto rn = sta_naive(in.target, in.tokens, params.sta, cfg, mask);
            naive_times.push_back(now_ms() - t0);
            sink += rn.compressed(0, 0);

            t0 = now_ms();
            auto rv = sta_vectorized(in.target, in.tokens, params.sta, cfg, mask);
            vec_times.push_back(now_ms() - t0);
            sink += rv.compressed(0, 0);

            t0 = now_ms();
            auto out = laser_forward(in, params, cfg);
            fwd_times.push_back(now_ms() - t0);
            sink += out.fused[0];
        }
        point.naive_ms = median(naive_times);
        point.vectorized_ms = median(vec_times);
        point.forward_ms = median(fwd_times);
        points.push_back(point);
    }
    if (sink == 12345.678f) points.clear();  // keep the work observable
    return points;
}

StoreBenchReport bench_store(std::size_t users, std::size_t events_per_user,
                             std::size_t reads) {
    using namespace seqvault;
    const fs::path dir =
        fs::temp_directory_path() / ("bench_store_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    StoreBenchReport rep;
    {
        auto store = Store::open(dir.string(), SequenceSchema::reference());
        std::mt19937_64 rng(5150);

        const double t0 = now_ms();
        std::int64_t ts = 1700000000;
        for (std::size_t e = 0; e < events_per_user; ++e) {
            for (std::size_t u = 0; u < users; ++u) {
                BehaviorEvent ev;
                ev.values = {std::uint64_t{1 + rng() % 5000},
                             static_cast<std::uint32_t>(rng() % 3),
                             static_cast<std::uint32_t>(rng() % 4), ts,
                             static_cast<float>(rng() % 100) / 100.0f};
                store->append_event(u + 1, ev);
            }
            ++ts;
        }
        const double append_ms = now_ms() - t0;
        rep.appends_per_sec =
            1000.0 * static_cast<double>(users * events_per_user) / append_ms;

        store->run_merge();

        std::vector<double> lat;
        lat.reserve(reads);
        const double r0 = now_ms();
        for (std::size_t i = 0; i < reads; ++i) {
            const std::uint64_t user = 1 + rng() % users;
            const double s = now_ms();
            auto got = store->get_last_n(user, events_per_user);
            lat.push_back((now_ms() - s) * 1000.0);
            if (got.empty()) rep.gets_per_sec = -1.0;  // should not happen
        }
        const double read_ms = now_ms() - r0;
        rep.gets_per_sec = 1000.0 * static_cast<double>(reads) / read_ms;
        std::sort(lat.begin(), lat.end());
        rep.get_p50_us = lat[lat.size() / 2];
        rep.get_p99_us = lat[std::min(lat.size() - 1, lat.size() * 99 / 100)];
    }
    fs::remove_all(dir);
    return rep;
}

WireBenchReport bench_wire(std::size_t frames) {
    using namespace laser::net;
    const auto schema = seqvault::SequenceSchema::reference();
    std::mt19937_64 rng(99);
    std::vector<seqvault::BehaviorEvent> events;
    std::int64_t ts = 1700000000;
    for (int i = 0; i < 1000; ++i) {
        seqvault::BehaviorEvent e;
        e.values = {std::uint64_t{1 + rng() % 5000},
                    static_cast<std::uint32_t>(i % 3), static_cast<std::uint32_t>(i % 4), ts,
                    static_cast<float>(i % 10) / 10.0f};
        events.push_back(std::move(e));
        ts -= 1;
    }
    const auto payload = seqvault::codec::pack_events(schema, events);

    WireBenchReport rep;
    std::size_t sink = 0;

    const double t0 = now_ms();
    for (std::size_t i = 0; i < frames; ++i) {
        WireFrame f;
        f.op = Op::GetLastN;
        f.request_id = i;
        f.payload = payload;
        const auto bytes = encode_frame(f);
        const auto dec = decode_frame(bytes);
        sink += dec.frame.payload.size();
    }
    rep.frames_per_sec_raw = 1000.0 * static_cast<double>(frames) / (now_ms() - t0);

    const double t1 = now_ms();
    std::size_t compressed_size = 0;
    for (std::size_t i = 0; i < frames; ++i) {
        WireFrame f;
        f.op = Op::GetLastN;
        f.request_id = i;
        f.payload = payload;
        maybe_compress_into(f);
        compressed_size = f.payload.size();
        const auto bytes = encode_frame(f);
        const auto dec = decode_frame(bytes);
        sink += frame_payload(dec.frame).size();
    }
    rep.frames_per_sec_compressed = 1000.0 * static_cast<double>(frames) / (now_ms() - t1);
    if (sink == 0) rep.compressed_ratio = 0.0;  // keep the work observable
    rep.compressed_ratio =
        static_cast<double>(compressed_size) / static_cast<double>(payload.size());
    return rep;
}

}  // namespace harness
