#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "laser/attention.hpp"
#include "laser/checkpoint.hpp"
#include "seqvault/schema.hpp"

namespace harness {

enum class EncoderKind : int {
    Laser = 0,
    MeanPool = 1,
    DinTargetAttention = 2,
    TinySelfAttention = 3,
};

const char* encoder_name(EncoderKind kind);
EncoderKind encoder_from_name(const std::string& name);

struct ModelConfig {
    laser::LaserConfig laser;
    std::size_t n_items = 10000;
    std::size_t head_hidden = 32;
    EncoderKind encoder = EncoderKind::Laser;

    std::size_t head_input_dim() const;
    void validate() const;
};

struct HeadParams {
    laser::Matrix w1;  // head_input x hidden
    laser::Vector b1;
    laser::Matrix w2;  // hidden x 1
    laser::Vector b2;  // 1
};

// Single softmax target-attention / self-attention blocks used by the
// comparison encoders; both share the low-dim query/key trick.
struct AttnBlockParams {
    laser::Matrix w_q;  // d x d_q
    laser::Matrix w_k;  // d x d_q
    laser::Matrix w_v;  // d x d
};

// Embedding table + sequence encoder + MLP head ending in a sigmoid.
struct CtrModel {
    ModelConfig cfg;
    laser::Matrix embeddings;  // n_items x d
    laser::LaserParams laser_params;
    AttnBlockParams din;
    AttnBlockParams self_attn;
    HeadParams head;

    static CtrModel init(const ModelConfig& cfg, std::uint64_t seed);
};

struct ModelGrads {
    laser::Matrix embeddings;
    laser::LaserGrads laser_grads;
    AttnBlockParams din;
    AttnBlockParams self_attn;
    HeadParams head;

    static ModelGrads zeros(const ModelConfig& cfg);
    void accumulate(const ModelGrads& other, double scale);
    double squared_norm() const;
};

// Forward cache for one sample.
struct ModelForward {
    double prob = 0.0;
    double logit = 0.0;
    laser::Vector enc_out;
    laser::Vector head_pre;  // hidden pre-activation
    laser::LaserForwardCache laser_cache;
    laser::SequenceBatchInput input;
    std::vector<std::uint64_t> history_items;
    std::uint64_t target_item = 0;
    // DIN / self-attention caches.
    laser::Matrix attn_k, attn_v, attn_q;
    std::vector<float> attn_weights;        // DIN: L; self-attn unused
    laser::Matrix self_attn_weights;        // valid x valid
    std::size_t valid = 0;
};

/// Tokens are embedding rows with any similarity side-info folded into
/// component 0; timestamps/request time drive the recency feature.
laser::SequenceBatchInput build_input(const CtrModel& model,
                                      std::span<const seqvault::BehaviorEvent> newest_first,
                                      const seqvault::SequenceSchema& schema,
                                      std::uint64_t target_item, double request_time);

double model_forward(const CtrModel& model, const laser::SequenceBatchInput& input,
                     std::span<const std::uint64_t> history_items, std::uint64_t target_item,
                     ModelForward* cache);

/// d(loss)/d(logit) in, parameter gradients out (embedding rows included).
ModelGrads model_backward(const CtrModel& model, const ModelForward& cache, double g_logit);

void sgd_apply(CtrModel& model, const ModelGrads& grads, double lr, double clip_norm);

// Adagrad state mirrors the parameter layout; opt-in alternative to SGD.
struct AdagradState {
    ModelGrads acc;
    static AdagradState init(const ModelConfig& cfg);
};
void adagrad_apply(CtrModel& model, AdagradState& state, const ModelGrads& grads, double lr,
                   double clip_norm);

void save_model(const CtrModel& model, const std::string& path);
CtrModel load_model(const std::string& path);

}  // namespace harness
