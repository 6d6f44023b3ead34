#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "laser/matrix.hpp"

namespace laser {

// Model hyperparameters. qk_dim counts all heads together; per-head query
// width is qk_dim/heads and value slices are embed_dim/heads wide.
struct LaserConfig {
    std::size_t seq_len = 1000;
    std::size_t embed_dim = 32;
    std::size_t qk_dim = 8;
    std::size_t segment_w = 10;
    std::size_t gsta_layers = 2;
    std::size_t ffn_ratio = 4;
    std::size_t recent_k = 2;
    float gamma = 0.0f;  // gate scale; <= 0 selects sqrt(qk_dim/heads)
    std::size_t heads = 1;
    std::size_t recency_buckets = 32;

    // Ablation switches exercised by the training harness.
    bool sta_softmax = false;  // per-segment softmax instead of the sigmoid gate
    bool fuse_full = true;     // false: output is the refined target vector only
    bool use_recency = true;

    float resolved_gamma() const;
    std::size_t fused_dim() const {
        return fuse_full ? embed_dim * (2 + recent_k) : embed_dim;
    }
    void validate() const;
};

// Shared across all segments; one set serves the whole sequence.
struct StaParams {
    Matrix w_q;     // d x d_q
    Matrix w_k;     // d x d_q
    Matrix w_v;     // d x d
    Matrix ffn_w1;  // d x (ffn_ratio*d)
    Vector ffn_b1;
    Matrix ffn_w2;  // (ffn_ratio*d) x d
    Vector ffn_b2;
    Vector ln_gain;
    Vector ln_bias;
};

struct GstaLayerParams {
    Matrix w_q, w_k, w_v;  // each d x d
};

// Learnable additive embedding of (request_time - event_time), bucketed on
// a log scale. Edges are strictly increasing; a delta exactly on an edge
// lands in the higher bucket.
struct RecencyTable {
    Matrix table;                     // buckets x d
    std::vector<float> bucket_edges;  // seconds

    std::size_t bucket_for(double delta_seconds) const;
    static std::vector<float> default_edges(std::size_t buckets);
};

struct LaserParams {
    StaParams sta;
    std::vector<GstaLayerParams> gsta;
    RecencyTable recency;

    static LaserParams init(const LaserConfig& cfg, std::uint64_t seed);
    static LaserParams zeros(const LaserConfig& cfg);
};

// One scoring instance. Rows are most-recent-first; rows at index >=
// valid_len are padding and masked throughout the pipeline.
struct SequenceBatchInput {
    Matrix tokens;  // L x d
    std::vector<double> timestamps;
    double request_time = 0.0;
    std::size_t valid_len = 0;
    Vector target;  // d
};

struct FusionOutput {
    Vector z;
    Vector max_pooled;
    std::vector<Vector> recent_segments;
    Vector fused;       // [z | max_pooled | recents...] in that fixed order
    Matrix compressed;  // refined segment matrix, exposed for tests
    Vector sta_scores;  // per-position gate values, mean over heads
};

struct RecencyResult {
    Matrix tokens;
    std::size_t clamped = 0;  // negative deltas clamped to zero (clock skew)
};

RecencyResult apply_recency(const SequenceBatchInput& input, const RecencyTable& table,
                            std::size_t valid_len);

/// Partition h into L/w contiguous segments; concatenation reproduces h.
std::vector<Matrix> split_seq(const Matrix& h, std::size_t w);

struct StaResult {
    Matrix compressed;  // L' x d, pre-refine
    Vector scores;      // padded length, mean over heads, masked forced to 0
};

/// Per-segment iterative form: projects and gates one segment at a time.
StaResult sta_naive(const Vector& target, const Matrix& h, const StaParams& params,
                    const LaserConfig& cfg, const std::vector<bool>& pos_mask);

/// Single-pass form: global projections, global gate scores, then a
/// segment-reshaped weighted sum. Agrees with sta_naive within 1e-5
/// relative on any valid input.
StaResult sta_vectorized(const Vector& target, const Matrix& h, const StaParams& params,
                         const LaserConfig& cfg, const std::vector<bool>& pos_mask);

/// Per-row FFN with residual add, then LayerNorm.
Matrix segment_refine(const Matrix& compressed, const StaParams& params);

struct GstaResult {
    Vector z;
    std::vector<Vector> attn_maps;
};

/// Stacked target attention over the compressed rows. Keys/values come
/// from the fixed compressed matrix at every layer; only the target stream
/// carries residual updates.
GstaResult gsta_forward(const Vector& target, const Matrix& compressed,
                        const std::vector<GstaLayerParams>& layers,
                        const std::vector<bool>& seg_mask);

/// Concatenate [z | max over unmasked rows | first recent_k rows]. Masked
/// or absent recent rows contribute zero vectors so the output width is
/// always d*(2+recent_k).
FusionOutput fuse(const Vector& z, const Matrix& compressed, std::size_t recent_k,
                  const std::vector<bool>& seg_mask);

// Everything laser_backward needs from the forward pass.
struct LaserForwardCache {
    bool valid = false;
    LaserConfig cfg;
    std::size_t input_len = 0, padded_len = 0, n_segs = 0, valid_len = 0;
    std::vector<bool> pos_mask, seg_mask;
    std::vector<int> bucket_of;  // per input row; -1 when recency skipped
    Vector target;
    Matrix x;       // recency-applied, padded
    Matrix k_glob;  // padded x d_q
    Matrix v_glob;  // padded x d
    Vector q;       // d_q
    Matrix head_scores;      // heads x padded
    Matrix compressed_raw;   // L' x d
    Matrix ffn_a1;           // L' x (r*d), pre-relu
    Matrix ln_in;            // ffn output + residual
    std::vector<double> ln_mean, ln_inv;
    Matrix refined;
    std::vector<Vector> t_stream;  // t_0..t_M
    std::vector<Vector> gsta_q;
    std::vector<Matrix> gsta_k, gsta_v;
    std::vector<Vector> gsta_attn;
    std::vector<std::size_t> max_src;  // argmax row per column
    std::size_t recency_clamped = 0;
};

/// Full pipeline: recency -> pad -> gated compression -> refine -> stacked
/// attention -> fusion. Deterministic given inputs. Pass a cache to enable
/// laser_backward.
FusionOutput laser_forward(const SequenceBatchInput& input, const LaserParams& params,
                           const LaserConfig& cfg, LaserForwardCache* cache = nullptr);

struct LaserGrads {
    StaParams sta;
    std::vector<GstaLayerParams> gsta;
    Matrix recency_table;
    Matrix tokens;  // input-length rows
    Vector target;
};

/// Analytic gradients for every parameter tensor, the recency table, the
/// input tokens and the target, given d(loss)/d(fused). Requires the cache
/// of a prior forward.
LaserGrads laser_backward(const LaserParams& params, const LaserForwardCache& cache,
                          const Vector& fused_grad);

/// Central finite differences over each scalar in `params`; the loss
/// callback re-reads the mutated values. Test oracle.
std::vector<double> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<float> params, float h);

}  // namespace laser
