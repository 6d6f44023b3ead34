#include "harness/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "laser/ops.hpp"

using laser::Matrix;
using laser::Vector;

namespace harness {

const char* encoder_name(EncoderKind kind) {
    switch (kind) {
        case EncoderKind::Laser: return "laser";
        case EncoderKind::MeanPool: return "mean_pool";
        case EncoderKind::DinTargetAttention: return "din_target_attention";
        case EncoderKind::TinySelfAttention: return "tiny_self_attention";
    }
    return "?";
}

EncoderKind encoder_from_name(const std::string& name) {
    if (name == "laser") return EncoderKind::Laser;
    if (name == "mean_pool") return EncoderKind::MeanPool;
    if (name == "din_target_attention") return EncoderKind::DinTargetAttention;
    if (name == "tiny_self_attention") return EncoderKind::TinySelfAttention;
    throw std::invalid_argument("unknown encoder '" + name + "'");
}

std::size_t ModelConfig::head_input_dim() const {
    return encoder == EncoderKind::Laser ? laser.fused_dim() : 2 * laser.embed_dim;
}

void ModelConfig::validate() const {
    laser.validate();
    if (n_items == 0) throw std::invalid_argument("model: n_items == 0");
    if (head_hidden == 0) throw std::invalid_argument("model: head_hidden == 0");
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, std::mt19937& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(rows + cols));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = dist(rng);
    return m;
}

// Matching parameter/gradient walk so the optimizers stay one loop.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
    auto& lz = [&m]() -> auto& {
        if constexpr (std::is_same_v<std::decay_t<Model>, CtrModel>) return m.laser_params;
        else return m.laser_grads;
    }();
    fn(m.embeddings.data());
    fn(lz.sta.w_q.data());
    fn(lz.sta.w_k.data());
    fn(lz.sta.w_v.data());
    fn(lz.sta.ffn_w1.data());
    fn(lz.sta.ffn_b1.data());
    fn(lz.sta.ffn_w2.data());
    fn(lz.sta.ffn_b2.data());
    fn(lz.sta.ln_gain.data());
    fn(lz.sta.ln_bias.data());
    for (auto& layer : lz.gsta) {
        fn(layer.w_q.data());
        fn(layer.w_k.data());
        fn(layer.w_v.data());
    }
    if constexpr (std::is_same_v<std::decay_t<Model>, CtrModel>)
        fn(m.laser_params.recency.table.data());
    else
        fn(m.laser_grads.recency_table.data());
    fn(m.din.w_q.data());
    fn(m.din.w_k.data());
    fn(m.din.w_v.data());
    fn(m.self_attn.w_q.data());
    fn(m.self_attn.w_k.data());
    fn(m.self_attn.w_v.data());
    fn(m.head.w1.data());
    fn(m.head.b1.data());
    fn(m.head.w2.data());
    fn(m.head.b2.data());
}

AttnBlockParams attn_block_init(const laser::LaserConfig& cfg, std::mt19937& rng) {
    AttnBlockParams p;
    p.w_q = xavier(cfg.embed_dim, cfg.qk_dim, rng);
    p.w_k = xavier(cfg.embed_dim, cfg.qk_dim, rng);
    p.w_v = xavier(cfg.embed_dim, cfg.embed_dim, rng);
    return p;
}

AttnBlockParams attn_block_zeros(const laser::LaserConfig& cfg) {
    AttnBlockParams p;
    p.w_q = Matrix(cfg.embed_dim, cfg.qk_dim);
    p.w_k = Matrix(cfg.embed_dim, cfg.qk_dim);
    p.w_v = Matrix(cfg.embed_dim, cfg.embed_dim);
    return p;
}

}  // namespace

CtrModel CtrModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CtrModel m;
    m.cfg = cfg;
    std::mt19937 rng(static_cast<std::uint32_t>(seed * 2654435761ull + 17));
    std::uniform_real_distribution<float> emb_dist(-0.05f, 0.05f);
    m.embeddings = Matrix(cfg.n_items, cfg.laser.embed_dim);
    for (auto& v : m.embeddings.data()) v = emb_dist(rng);
    m.laser_params = laser::LaserParams::init(cfg.laser, seed + 1);
    m.din = attn_block_init(cfg.laser, rng);
    m.self_attn = attn_block_init(cfg.laser, rng);
    m.head.w1 = xavier(cfg.head_input_dim(), cfg.head_hidden, rng);
    m.head.b1 = Vector(cfg.head_hidden);
    m.head.w2 = xavier(cfg.head_hidden, 1, rng);
    m.head.b2 = Vector(1);
    return m;
}

ModelGrads ModelGrads::zeros(const ModelConfig& cfg) {
    ModelGrads g;
    g.embeddings = Matrix(cfg.n_items, cfg.laser.embed_dim);
    const auto zp = laser::LaserParams::zeros(cfg.laser);
    g.laser_grads.sta = zp.sta;
    g.laser_grads.sta.ln_gain = Vector(cfg.laser.embed_dim);  // gradient slot, not a gain
    g.laser_grads.gsta = zp.gsta;
    g.laser_grads.recency_table = Matrix(cfg.laser.recency_buckets, cfg.laser.embed_dim);
    g.din = attn_block_zeros(cfg.laser);
    g.self_attn = attn_block_zeros(cfg.laser);
    g.head.w1 = Matrix(cfg.head_input_dim(), cfg.head_hidden);
    g.head.b1 = Vector(cfg.head_hidden);
    g.head.w2 = Matrix(cfg.head_hidden, 1);
    g.head.b2 = Vector(1);
    return g;
}

void ModelGrads::accumulate(const ModelGrads& other, double scale) {
    auto* self = this;
    std::vector<std::vector<float>*> mine, theirs;
    for_each_tensor(*self, [&mine](std::vector<float>& v) { mine.push_back(&v); });
    for_each_tensor(const_cast<ModelGrads&>(other),
                    [&theirs](std::vector<float>& v) { theirs.push_back(&v); });
    for (std::size_t t = 0; t < mine.size(); ++t)
        for (std::size_t i = 0; i < mine[t]->size(); ++i)
            (*mine[t])[i] += static_cast<float>(scale * (*theirs[t])[i]);
}

double ModelGrads::squared_norm() const {
    double sum = 0.0;
    for_each_tensor(const_cast<ModelGrads&>(*this), [&sum](std::vector<float>& v) {
        for (float x : v) sum += static_cast<double>(x) * x;
    });
    return sum;
}

laser::SequenceBatchInput build_input(const CtrModel& model,
                                      std::span<const seqvault::BehaviorEvent> newest_first,
                                      const seqvault::SequenceSchema& schema,
                                      std::uint64_t target_item, double request_time) {
    const std::size_t d = model.cfg.laser.embed_dim;
    const std::size_t L = std::min<std::size_t>(newest_first.size(), model.cfg.laser.seq_len);

    int sim_field = -1;
    for (std::size_t i = 0; i < schema.fields.size(); ++i)
        if (schema.fields[i].name == "similarity" &&
            schema.fields[i].kind == seqvault::FieldKind::F32)
            sim_field = static_cast<int>(i);

    laser::SequenceBatchInput in;
    in.tokens = Matrix(L, d);
    in.timestamps.resize(L);
    in.request_time = request_time;
    in.valid_len = L;
    for (std::size_t i = 0; i < L; ++i) {
        const auto item = newest_first[i].item_id(schema) % model.cfg.n_items;
        const float* row = model.embeddings.row(item);
        for (std::size_t c = 0; c < d; ++c) in.tokens(i, c) = row[c];
        if (sim_field >= 0 && newest_first[i].values[sim_field].has_value())
            in.tokens(i, 0) += std::get<float>(*newest_first[i].values[sim_field]);
        in.timestamps[i] = static_cast<double>(newest_first[i].timestamp(schema));
    }
    in.target = Vector(d);
    const float* trow = model.embeddings.row(target_item % model.cfg.n_items);
    for (std::size_t c = 0; c < d; ++c) in.target[c] = trow[c];
    return in;
}

namespace {

void head_forward(const CtrModel& model, const Vector& enc, ModelForward& cache) {
    const std::size_t hidden = model.cfg.head_hidden;
    cache.head_pre = Vector(hidden);
    for (std::size_t h = 0; h < hidden; ++h) {
        double acc = model.head.b1[h];
        for (std::size_t i = 0; i < enc.dim(); ++i)
            acc += static_cast<double>(enc[i]) * model.head.w1(i, h);
        cache.head_pre[h] = static_cast<float>(acc);
    }
    double logit = model.head.b2[0];
    for (std::size_t h = 0; h < hidden; ++h) {
        const float a = cache.head_pre[h] > 0.0f ? cache.head_pre[h] : 0.0f;
        logit += static_cast<double>(a) * model.head.w2(h, 0);
    }
    cache.logit = logit;
    cache.prob = 1.0 / (1.0 + std::exp(-logit));
}

}  // namespace

double model_forward(const CtrModel& model, const laser::SequenceBatchInput& input,
                     std::span<const std::uint64_t> history_items, std::uint64_t target_item,
                     ModelForward* cache) {
    ModelForward local;
    ModelForward& cc = cache ? *cache : local;
    cc = ModelForward{};
    cc.input = input;
    cc.history_items.assign(history_items.begin(), history_items.end());
    cc.target_item = target_item % model.cfg.n_items;
    cc.valid = std::min(input.valid_len, input.tokens.rows());

    const std::size_t d = model.cfg.laser.embed_dim;
    const std::size_t dq = model.cfg.laser.qk_dim;
    const std::size_t valid = cc.valid;

    switch (model.cfg.encoder) {
        case EncoderKind::Laser: {
            const auto out = laser_forward(input, model.laser_params, model.cfg.laser,
                                           &cc.laser_cache);
            cc.enc_out = out.fused;
            break;
        }
        case EncoderKind::MeanPool: {
            cc.enc_out = Vector(2 * d);
            if (valid > 0) {
                for (std::size_t c = 0; c < d; ++c) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < valid; ++i) acc += input.tokens(i, c);
                    cc.enc_out[c] = static_cast<float>(acc / static_cast<double>(valid));
                }
            }
            for (std::size_t c = 0; c < d; ++c) cc.enc_out[d + c] = input.target[c];
            break;
        }
        case EncoderKind::DinTargetAttention: {
            cc.enc_out = Vector(2 * d);
            for (std::size_t c = 0; c < d; ++c) cc.enc_out[d + c] = input.target[c];
            if (valid == 0) break;
            Matrix tmat(1, d);
            for (std::size_t c = 0; c < d; ++c) tmat(0, c) = input.target[c];
            cc.attn_q = laser::matmul(tmat, model.din.w_q);
            Matrix hist(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) hist(i, c) = input.tokens(i, c);
            cc.attn_k = laser::matmul(hist, model.din.w_k);
            cc.attn_v = laser::matmul(hist, model.din.w_v);
            const double scale = 1.0 / std::sqrt(static_cast<double>(dq));
            Matrix logits(1, valid);
            for (std::size_t i = 0; i < valid; ++i) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dq; ++c)
                    dot += static_cast<double>(cc.attn_q(0, c)) * cc.attn_k(i, c);
                logits(0, i) = static_cast<float>(dot * scale);
            }
            const Matrix attn = laser::softmax_rows(logits);
            cc.attn_weights.resize(valid);
            for (std::size_t i = 0; i < valid; ++i) cc.attn_weights[i] = attn(0, i);
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < valid; ++i)
                    acc += static_cast<double>(cc.attn_weights[i]) * cc.attn_v(i, c);
                cc.enc_out[c] = static_cast<float>(acc);
            }
            break;
        }
        case EncoderKind::TinySelfAttention: {
            cc.enc_out = Vector(2 * d);
            for (std::size_t c = 0; c < d; ++c) cc.enc_out[d + c] = input.target[c];
            if (valid == 0) break;
            Matrix hist(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) hist(i, c) = input.tokens(i, c);
            cc.attn_q = laser::matmul(hist, model.self_attn.w_q);
            cc.attn_k = laser::matmul(hist, model.self_attn.w_k);
            cc.attn_v = laser::matmul(hist, model.self_attn.w_v);
            const double scale = 1.0 / std::sqrt(static_cast<double>(dq));
            Matrix logits(valid, valid);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t j = 0; j < valid; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dq; ++c)
                        dot += static_cast<double>(cc.attn_q(i, c)) * cc.attn_k(j, c);
                    logits(i, j) = static_cast<float>(dot * scale);
                }
            laser::flopcount::add(static_cast<std::uint64_t>(valid) * valid * dq);
            cc.self_attn_weights = laser::softmax_rows(logits);
            // Mean-pool the attended rows.
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < valid; ++i) {
                    double o = 0.0;
                    for (std::size_t j = 0; j < valid; ++j)
                        o += static_cast<double>(cc.self_attn_weights(i, j)) * cc.attn_v(j, c);
                    acc += o;
                }
                cc.enc_out[c] = static_cast<float>(acc / static_cast<double>(valid));
            }
            laser::flopcount::add(static_cast<std::uint64_t>(valid) * valid * d);
            break;
        }
    }
    head_forward(model, cc.enc_out, cc);
    return cc.prob;
}

namespace {

// Gradients through one softmax attention block shared by DIN and the
// tiny self-attention encoder.
void attn_block_backward(const AttnBlockParams& params, const Matrix& hist, const Matrix& q,
                         const Matrix& k, const Matrix& v, const Matrix& g_q_rows,
                         const Matrix& g_k_rows, const Matrix& g_v_rows, AttnBlockParams& g_out,
                         Matrix& g_hist) {
    const std::size_t d = hist.cols(), dq = params.w_q.cols();
    for (std::size_t i = 0; i < hist.rows(); ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const float x = hist(i, a);
            for (std::size_t b = 0; b < dq; ++b) {
                g_out.w_q(a, b) += x * g_q_rows(i, b);
                g_out.w_k(a, b) += x * g_k_rows(i, b);
            }
            for (std::size_t b = 0; b < d; ++b) g_out.w_v(a, b) += x * g_v_rows(i, b);
            double acc = 0.0;
            for (std::size_t b = 0; b < dq; ++b)
                acc += static_cast<double>(g_q_rows(i, b)) * params.w_q(a, b) +
                       static_cast<double>(g_k_rows(i, b)) * params.w_k(a, b);
            for (std::size_t b = 0; b < d; ++b)
                acc += static_cast<double>(g_v_rows(i, b)) * params.w_v(a, b);
            g_hist(i, a) += static_cast<float>(acc);
        }
    }
    (void)q;
    (void)k;
    (void)v;
}

}  // namespace

ModelGrads model_backward(const CtrModel& model, const ModelForward& cache, double g_logit) {
    ModelGrads g = ModelGrads::zeros(model.cfg);
    const std::size_t d = model.cfg.laser.embed_dim;
    const std::size_t dq = model.cfg.laser.qk_dim;
    const std::size_t hidden = model.cfg.head_hidden;
    const std::size_t valid = cache.valid;

    // Head backward.
    Vector g_enc(cache.enc_out.dim());
    g.head.b2[0] = static_cast<float>(g_logit);
    for (std::size_t h = 0; h < hidden; ++h) {
        const float act = cache.head_pre[h] > 0.0f ? cache.head_pre[h] : 0.0f;
        g.head.w2(h, 0) = static_cast<float>(g_logit * act);
        const double g_hidden =
            cache.head_pre[h] > 0.0f ? g_logit * model.head.w2(h, 0) : 0.0;
        if (g_hidden == 0.0) continue;
        g.head.b1[h] = static_cast<float>(g_hidden);
        for (std::size_t i = 0; i < cache.enc_out.dim(); ++i) {
            g.head.w1(i, h) += static_cast<float>(g_hidden * cache.enc_out[i]);
            g_enc[i] += static_cast<float>(g_hidden * model.head.w1(i, h));
        }
    }

    Matrix g_tokens(cache.input.tokens.rows(), d);
    Vector g_target(d);

    switch (model.cfg.encoder) {
        case EncoderKind::Laser: {
            const auto lg = laser_backward(model.laser_params, cache.laser_cache, g_enc);
            g.laser_grads = lg;
            g_tokens = lg.tokens;
            g_target = lg.target;
            break;
        }
        case EncoderKind::MeanPool: {
            if (valid > 0) {
                for (std::size_t c = 0; c < d; ++c) {
                    const float share = g_enc[c] / static_cast<float>(valid);
                    for (std::size_t i = 0; i < valid; ++i) g_tokens(i, c) += share;
                }
            }
            for (std::size_t c = 0; c < d; ++c) g_target[c] = g_enc[d + c];
            break;
        }
        case EncoderKind::DinTargetAttention: {
            for (std::size_t c = 0; c < d; ++c) g_target[c] = g_enc[d + c];
            if (valid == 0) break;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dq));

            Vector g_attn(valid);
            Matrix g_v_rows(valid, d);
            for (std::size_t i = 0; i < valid; ++i) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += static_cast<double>(g_enc[c]) * cache.attn_v(i, c);
                    g_v_rows(i, c) += cache.attn_weights[i] * g_enc[c];
                }
                g_attn[i] = static_cast<float>(dot);
            }
            double inner = 0.0;
            for (std::size_t i = 0; i < valid; ++i)
                inner += static_cast<double>(g_attn[i]) * cache.attn_weights[i];
            Vector g_q(dq);
            Matrix g_k_rows(valid, dq);
            for (std::size_t i = 0; i < valid; ++i) {
                const double gu = cache.attn_weights[i] * (g_attn[i] - inner) * scale;
                if (gu == 0.0) continue;
                for (std::size_t c = 0; c < dq; ++c) {
                    g_q[c] += static_cast<float>(gu * cache.attn_k(i, c));
                    g_k_rows(i, c) += static_cast<float>(gu * cache.attn_q(0, c));
                }
            }
            // q = t w_q.
            for (std::size_t a = 0; a < d; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b < dq; ++b) {
                    g.din.w_q(a, b) += cache.input.target[a] * g_q[b];
                    acc += static_cast<double>(g_q[b]) * model.din.w_q(a, b);
                }
                g_target[a] += static_cast<float>(acc);
            }
            Matrix hist(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) hist(i, c) = cache.input.tokens(i, c);
            Matrix g_hist(valid, d);
            Matrix g_q_rows(valid, dq);  // zero: DIN's query ignores history rows
            AttnBlockParams g_blk = attn_block_zeros(model.cfg.laser);
            attn_block_backward(model.din, hist, cache.attn_q, cache.attn_k, cache.attn_v,
                                g_q_rows, g_k_rows, g_v_rows, g_blk, g_hist);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < dq; ++b) g.din.w_k(a, b) += g_blk.w_k(a, b);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t b = 0; b < d; ++b) g.din.w_v(a, b) += g_blk.w_v(a, b);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) g_tokens(i, c) += g_hist(i, c);
            break;
        }
        case EncoderKind::TinySelfAttention: {
            for (std::size_t c = 0; c < d; ++c) g_target[c] = g_enc[d + c];
            if (valid == 0) break;
            const double scale = 1.0 / std::sqrt(static_cast<double>(dq));

            // pooled = mean_i O_i; O = A V.
            Matrix g_o(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c)
                    g_o(i, c) = g_enc[c] / static_cast<float>(valid);
            Matrix g_a(valid, valid);
            Matrix g_v_rows(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t j = 0; j < valid; ++j) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        dot += static_cast<double>(g_o(i, c)) * cache.attn_v(j, c);
                        g_v_rows(j, c) += cache.self_attn_weights(i, j) * g_o(i, c);
                    }
                    g_a(i, j) = static_cast<float>(dot);
                }
            Matrix g_q_rows(valid, dq);
            Matrix g_k_rows(valid, dq);
            for (std::size_t i = 0; i < valid; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < valid; ++j)
                    inner += static_cast<double>(g_a(i, j)) * cache.self_attn_weights(i, j);
                for (std::size_t j = 0; j < valid; ++j) {
                    const double gu =
                        cache.self_attn_weights(i, j) * (g_a(i, j) - inner) * scale;
                    if (gu == 0.0) continue;
                    for (std::size_t c = 0; c < dq; ++c) {
                        g_q_rows(i, c) += static_cast<float>(gu * cache.attn_k(j, c));
                        g_k_rows(j, c) += static_cast<float>(gu * cache.attn_q(i, c));
                    }
                }
            }
            Matrix hist(valid, d);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) hist(i, c) = cache.input.tokens(i, c);
            Matrix g_hist(valid, d);
            attn_block_backward(model.self_attn, hist, cache.attn_q, cache.attn_k, cache.attn_v,
                                g_q_rows, g_k_rows, g_v_rows, g.self_attn, g_hist);
            for (std::size_t i = 0; i < valid; ++i)
                for (std::size_t c = 0; c < d; ++c) g_tokens(i, c) += g_hist(i, c);
            break;
        }
    }

    // Scatter token/target gradients into the embedding table.
    for (std::size_t i = 0; i < valid && i < cache.history_items.size(); ++i) {
        float* row = g.embeddings.row(cache.history_items[i] % model.cfg.n_items);
        for (std::size_t c = 0; c < d; ++c) row[c] += g_tokens(i, c);
    }
    float* trow = g.embeddings.row(cache.target_item);
    for (std::size_t c = 0; c < d; ++c) trow[c] += g_target[c];
    return g;
}

void sgd_apply(CtrModel& model, const ModelGrads& grads, double lr, double clip_norm) {
    double scale = 1.0;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(grads.squared_norm());
        if (norm > clip_norm) scale = clip_norm / norm;
    }
    std::vector<std::vector<float>*> params, gs;
    for_each_tensor(model, [&params](std::vector<float>& v) { params.push_back(&v); });
    for_each_tensor(const_cast<ModelGrads&>(grads),
                    [&gs](std::vector<float>& v) { gs.push_back(&v); });
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t]->size(); ++i)
            (*params[t])[i] -= static_cast<float>(lr * scale * (*gs[t])[i]);
}

AdagradState AdagradState::init(const ModelConfig& cfg) {
    return AdagradState{ModelGrads::zeros(cfg)};
}

void adagrad_apply(CtrModel& model, AdagradState& state, const ModelGrads& grads, double lr,
                   double clip_norm) {
    double scale = 1.0;
    if (clip_norm > 0.0) {
        const double norm = std::sqrt(grads.squared_norm());
        if (norm > clip_norm) scale = clip_norm / norm;
    }
    std::vector<std::vector<float>*> params, gs, accs;
    for_each_tensor(model, [&params](std::vector<float>& v) { params.push_back(&v); });
    for_each_tensor(const_cast<ModelGrads&>(grads),
                    [&gs](std::vector<float>& v) { gs.push_back(&v); });
    for_each_tensor(state.acc, [&accs](std::vector<float>& v) { accs.push_back(&v); });
    for (std::size_t t = 0; t < params.size(); ++t)
        for (std::size_t i = 0; i < params[t]->size(); ++i) {
            const double gval = scale * (*gs[t])[i];
            (*accs[t])[i] += static_cast<float>(gval * gval);
            (*params[t])[i] -=
                static_cast<float>(lr * gval / (std::sqrt((*accs[t])[i]) + 1e-8));
        }
}

void save_model(const CtrModel& model, const std::string& path) {
    laser::Checkpoint ck;
    ck.config = model.cfg.laser;
    put_laser_params(ck, model.laser_params);
    ck.add_matrix("emb.table", model.embeddings);
    ck.add_matrix("din.w_q", model.din.w_q);
    ck.add_matrix("din.w_k", model.din.w_k);
    ck.add_matrix("din.w_v", model.din.w_v);
    ck.add_matrix("sa.w_q", model.self_attn.w_q);
    ck.add_matrix("sa.w_k", model.self_attn.w_k);
    ck.add_matrix("sa.w_v", model.self_attn.w_v);
    ck.add_matrix("head.w1", model.head.w1);
    ck.add_vector("head.b1", model.head.b1);
    ck.add_matrix("head.w2", model.head.w2);
    ck.add_vector("head.b2", model.head.b2);
    auto& meta = ck.add("harness.meta", {3});
    meta.data = {static_cast<float>(model.cfg.n_items),
                 static_cast<float>(model.cfg.head_hidden),
                 static_cast<float>(static_cast<int>(model.cfg.encoder))};
    laser::save_checkpoint(ck, path);
}

CtrModel load_model(const std::string& path) {
    const laser::Checkpoint ck = laser::load_checkpoint(path);
    const laser::NamedTensor* meta = ck.find("harness.meta");
    if (!meta || meta->data.size() != 3)
        throw std::runtime_error("model checkpoint: missing harness.meta");
    CtrModel m;
    m.cfg.laser = ck.config;
    m.cfg.n_items = static_cast<std::size_t>(meta->data[0]);
    m.cfg.head_hidden = static_cast<std::size_t>(meta->data[1]);
    m.cfg.encoder = static_cast<EncoderKind>(static_cast<int>(meta->data[2]));
    m.cfg.validate();
    m.laser_params = get_laser_params(ck);
    m.embeddings = ck.matrix("emb.table");
    m.din.w_q = ck.matrix("din.w_q");
    m.din.w_k = ck.matrix("din.w_k");
    m.din.w_v = ck.matrix("din.w_v");
    m.self_attn.w_q = ck.matrix("sa.w_q");
    m.self_attn.w_k = ck.matrix("sa.w_k");
    m.self_attn.w_v = ck.matrix("sa.w_v");
    m.head.w1 = ck.matrix("head.w1");
    m.head.b1 = ck.vector("head.b1");
    m.head.w2 = ck.matrix("head.w2");
    m.head.b2 = ck.vector("head.b2");
    return m;
}

}  // namespace harness
