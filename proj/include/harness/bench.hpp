#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace harness {

struct AttnBenchPoint {
    std::size_t seq_len = 0;
    double naive_ms = 0.0;
    double vectorized_ms = 0.0;
    double forward_ms = 0.0;  // full pipeline
};

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

LinearFit fit_linear(const std::vector<double>& xs, const std::vector<double>& ys);

/// Naive vs single-pass compression timing plus full-forward wall clock
/// at each length; medians over `repeats` runs.
std::vector<AttnBenchPoint> bench_attention(const std::vector<std::size_t>& lengths,
                                            std::size_t embed_dim, std::size_t qk_dim,
                                            std::size_t segment_w, std::size_t repeats = 5);

struct StoreBenchReport {
    double appends_per_sec = 0.0;
    double gets_per_sec = 0.0;
    double get_p50_us = 0.0;
    double get_p99_us = 0.0;
};

StoreBenchReport bench_store(std::size_t users, std::size_t events_per_user,
                             std::size_t reads);

struct WireBenchReport {
    double frames_per_sec_raw = 0.0;
    double frames_per_sec_compressed = 0.0;
    double compressed_ratio = 0.0;  // compressed size / raw size
};

/// Encode+decode cycles through a packed 1000-event payload, with the
/// compression policy forced off and on.
WireBenchReport bench_wire(std::size_t frames);

}  // namespace harness
