#include "laser/attention.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "laser/ops.hpp"

namespace laser {

float LaserConfig::resolved_gamma() const {
    if (gamma > 0.0f) return gamma;
    return std::sqrt(static_cast<float>(qk_dim) / static_cast<float>(heads));
}

void LaserConfig::validate() const {
    if (embed_dim == 0 || segment_w == 0 || qk_dim == 0)
        throw std::invalid_argument("config: zero dimension");
    if (qk_dim > embed_dim) throw std::invalid_argument("config: qk_dim > embed_dim");
    if (gsta_layers < 1) throw std::invalid_argument("config: gsta_layers must be >= 1");
    if (heads < 1 || qk_dim % heads != 0)
        throw std::invalid_argument("config: qk_dim must divide evenly across heads");
    if (embed_dim % heads != 0)
        throw std::invalid_argument("config: embed_dim must divide evenly across heads");
    if (resolved_gamma() <= 0.0f) throw std::invalid_argument("config: gamma must be positive");
    if (recency_buckets == 0) throw std::invalid_argument("config: recency_buckets == 0");
}

std::size_t RecencyTable::bucket_for(double delta_seconds) const {
    if (delta_seconds < 0.0) delta_seconds = 0.0;
    // Ties go to the higher bucket: count edges <= delta.
    std::size_t idx = 0;
    for (float e : bucket_edges) {
        if (delta_seconds >= static_cast<double>(e))
            ++idx;
        else
            break;
    }
    const std::size_t buckets = table.rows();
    return std::min(idx, buckets == 0 ? idx : buckets - 1);
}

std::vector<float> RecencyTable::default_edges(std::size_t buckets) {
    // Log-scale spans 1 second .. 1 year; bucket 0 is [0, 1s).
    constexpr double kYearSeconds = 365.0 * 24 * 3600;
    std::vector<float> edges;
    if (buckets <= 1) return edges;
    const std::size_t n = buckets - 1;
    for (std::size_t j = 0; j < n; ++j) {
        const double expo = (n == 1) ? 0.0 : static_cast<double>(j) / static_cast<double>(n - 1);
        edges.push_back(static_cast<float>(std::pow(kYearSeconds, expo)));
    }
    return edges;
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, std::mt19937& rng) {
    const float bound = std::sqrt(6.0f / static_cast<float>(rows + cols));
    std::uniform_real_distribution<float> dist(-bound, bound);
    Matrix m(rows, cols);
    for (auto& v : m.data()) v = dist(rng);
    return m;
}

}  // namespace

LaserParams LaserParams::init(const LaserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    const std::size_t d = cfg.embed_dim, dq = cfg.qk_dim, rd = cfg.ffn_ratio * d;
    LaserParams p;
    p.sta.w_q = xavier(d, dq, rng);
    p.sta.w_k = xavier(d, dq, rng);
    p.sta.w_v = xavier(d, d, rng);
    p.sta.ffn_w1 = xavier(d, rd, rng);
    p.sta.ffn_b1 = Vector(rd);
    p.sta.ffn_w2 = xavier(rd, d, rng);
    p.sta.ffn_b2 = Vector(d);
    p.sta.ln_gain = Vector(d, 1.0f);
    p.sta.ln_bias = Vector(d);
    for (std::size_t l = 0; l < cfg.gsta_layers; ++l) {
        GstaLayerParams layer;
        layer.w_q = xavier(d, d, rng);
        layer.w_k = xavier(d, d, rng);
        layer.w_v = xavier(d, d, rng);
        p.gsta.push_back(std::move(layer));
    }
    p.recency.table = Matrix(cfg.recency_buckets, d);  // zero: recency starts as a no-op
    p.recency.bucket_edges = RecencyTable::default_edges(cfg.recency_buckets);
    return p;
}

LaserParams LaserParams::zeros(const LaserConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, dq = cfg.qk_dim, rd = cfg.ffn_ratio * d;
    LaserParams p;
    p.sta.w_q = Matrix(d, dq);
    p.sta.w_k = Matrix(d, dq);
    p.sta.w_v = Matrix(d, d);
    p.sta.ffn_w1 = Matrix(d, rd);
    p.sta.ffn_b1 = Vector(rd);
    p.sta.ffn_w2 = Matrix(rd, d);
    p.sta.ffn_b2 = Vector(d);
    p.sta.ln_gain = Vector(d, 1.0f);
    p.sta.ln_bias = Vector(d);
    p.gsta.assign(cfg.gsta_layers, GstaLayerParams{Matrix(d, d), Matrix(d, d), Matrix(d, d)});
    p.recency.table = Matrix(cfg.recency_buckets, d);
    p.recency.bucket_edges = RecencyTable::default_edges(cfg.recency_buckets);
    return p;
}

RecencyResult apply_recency(const SequenceBatchInput& input, const RecencyTable& table,
                            std::size_t valid_len) {
    if (table.table.cols() != input.tokens.cols())
        throw ShapeError("apply_recency: table width vs tokens " + input.tokens.shape_str());
    RecencyResult res;
    res.tokens = input.tokens;
    const std::size_t n = std::min<std::size_t>(valid_len, input.tokens.rows());
    for (std::size_t i = 0; i < n; ++i) {
        double delta = input.request_time - input.timestamps[i];
        if (delta < 0.0) {
            delta = 0.0;
            ++res.clamped;
        }
        const std::size_t b = table.bucket_for(delta);
        const float* trow = table.table.row(b);
        float* out = res.tokens.row(i);
        for (std::size_t c = 0; c < res.tokens.cols(); ++c) out[c] += trow[c];
    }
    return res;
}

std::vector<Matrix> split_seq(const Matrix& h, std::size_t w) {
    if (w == 0 || h.rows() % w != 0)
        throw ShapeError("split_seq: rows " + std::to_string(h.rows()) +
                         " not divisible by window " + std::to_string(w));
    std::vector<Matrix> segs;
    segs.reserve(h.rows() / w);
    for (std::size_t s = 0; s < h.rows() / w; ++s) {
        Matrix seg(w, h.cols());
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t c = 0; c < h.cols(); ++c) seg(j, c) = h(s * w + j, c);
        segs.push_back(std::move(seg));
    }
    return segs;
}

namespace {

// Gate weights for one segment of one head, honoring the mask. In softmax
// mode the weights of a fully masked segment are all zero.
void segment_gate(const LaserConfig& cfg, const std::vector<double>& pre,
                  const std::vector<bool>& live, std::vector<float>& out) {
    const std::size_t w = pre.size();
    out.assign(w, 0.0f);
    if (!cfg.sta_softmax) {
        for (std::size_t j = 0; j < w; ++j)
            if (live[j]) out[j] = sigmoidf(static_cast<float>(pre[j]));
        return;
    }
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < w; ++j)
        if (live[j]) {
            any = true;
            mx = std::max(mx, pre[j]);
        }
    if (!any) return;
    double sum = 0.0;
    for (std::size_t j = 0; j < w; ++j)
        if (live[j]) sum += std::exp(pre[j] - mx);
    for (std::size_t j = 0; j < w; ++j)
        if (live[j]) out[j] = static_cast<float>(std::exp(pre[j] - mx) / sum);
}

}  // namespace

StaResult sta_naive(const Vector& target, const Matrix& h, const StaParams& params,
                    const LaserConfig& cfg, const std::vector<bool>& pos_mask) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, w = cfg.segment_w;
    if (h.cols() != d || target.dim() != d)
        throw ShapeError("sta_naive: input dims vs config embed_dim");
    if (h.rows() % w != 0)
        throw ShapeError("sta_naive: rows " + std::to_string(h.rows()) + " not divisible by w");
    if (pos_mask.size() != h.rows()) throw ShapeError("sta_naive: mask length");

    const std::size_t n_segs = h.rows() / w;
    const std::size_t dq_h = cfg.qk_dim / cfg.heads, dv_h = d / cfg.heads;
    const float gamma = cfg.resolved_gamma();

    Matrix tmat(1, d);
    for (std::size_t c = 0; c < d; ++c) tmat(0, c) = target[c];
    const Matrix q = matmul(tmat, params.w_q);  // 1 x d_q

    StaResult res;
    res.compressed = Matrix(n_segs, d);
    res.scores = Vector(h.rows());

    std::vector<double> pre(w);
    std::vector<bool> live(w);
    std::vector<float> gate(w);
    for (std::size_t s = 0; s < n_segs; ++s) {
        // Slice this segment and project it in isolation.
        Matrix seg(w, d);
        for (std::size_t j = 0; j < w; ++j)
            for (std::size_t c = 0; c < d; ++c) seg(j, c) = h(s * w + j, c);
        const Matrix k = matmul(seg, params.w_k);
        const Matrix v = matmul(seg, params.w_v);
        for (std::size_t j = 0; j < w; ++j) live[j] = pos_mask[s * w + j];

        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const std::size_t q0 = head * dq_h, v0 = head * dv_h;
            for (std::size_t j = 0; j < w; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dq_h; ++c)
                    dot += static_cast<double>(q(0, q0 + c)) * k(j, q0 + c);
                pre[j] = dot / gamma;
            }
            segment_gate(cfg, pre, live, gate);
            for (std::size_t c = 0; c < dv_h; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < w; ++j)
                    acc += static_cast<double>(gate[j]) * v(j, v0 + c);
                res.compressed(s, v0 + c) = static_cast<float>(acc);
            }
            for (std::size_t j = 0; j < w; ++j)
                res.scores[s * w + j] += gate[j] / static_cast<float>(cfg.heads);
        }
    }
    return res;
}

StaResult sta_vectorized(const Vector& target, const Matrix& h, const StaParams& params,
                         const LaserConfig& cfg, const std::vector<bool>& pos_mask) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, w = cfg.segment_w, len = h.rows();
    if (h.cols() != d || target.dim() != d)
        throw ShapeError("sta_vectorized: input dims vs config embed_dim");
    if (len % w != 0)
        throw ShapeError("sta_vectorized: rows " + std::to_string(len) + " not divisible by w");
    if (pos_mask.size() != len) throw ShapeError("sta_vectorized: mask length");

    const std::size_t n_segs = len / w;
    const std::size_t dq_h = cfg.qk_dim / cfg.heads, dv_h = d / cfg.heads;
    const float gamma = cfg.resolved_gamma();

    // Global projections in a single pass each.
    Matrix tmat(1, d);
    for (std::size_t c = 0; c < d; ++c) tmat(0, c) = target[c];
    const Matrix q = matmul(tmat, params.w_q);
    const Matrix k = matmul(h, params.w_k);
    const Matrix v = matmul(h, params.w_v);

    // Global per-head gate scores over the whole sequence.
    Matrix head_scores(cfg.heads, len);
    std::vector<double> pre(w);
    std::vector<bool> live(w);
    std::vector<float> gate(w);
    for (std::size_t head = 0; head < cfg.heads; ++head) {
        const std::size_t q0 = head * dq_h;
        for (std::size_t s = 0; s < n_segs; ++s) {
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t pos = s * w + j;
                live[j] = pos_mask[pos];
                double dot = 0.0;
                for (std::size_t c = 0; c < dq_h; ++c)
                    dot += static_cast<double>(q(0, q0 + c)) * k(pos, q0 + c);
                pre[j] = dot / gamma;
            }
            segment_gate(cfg, pre, live, gate);
            for (std::size_t j = 0; j < w; ++j) head_scores(head, s * w + j) = gate[j];
        }
        flopcount::add(len * (dq_h + 1));
    }

    // Reshape to (L', 1, w) x (L', w, d) and batch the weighted sums.
    const SegmentView vseg = reshape_segments(v, w);
    StaResult res;
    res.compressed = Matrix(n_segs, d);
    res.scores = Vector(len);
    for (std::size_t s = 0; s < n_segs; ++s) {
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const std::size_t v0 = head * dv_h;
            for (std::size_t c = 0; c < dv_h; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < w; ++j)
                    acc += static_cast<double>(head_scores(head, s * w + j)) *
                           vseg.at(s, j, v0 + c);
                res.compressed(s, v0 + c) = static_cast<float>(acc);
            }
        }
    }
    flopcount::add(static_cast<std::uint64_t>(len) * d);
    for (std::size_t pos = 0; pos < len; ++pos) {
        float m = 0.0f;
        for (std::size_t head = 0; head < cfg.heads; ++head) m += head_scores(head, pos);
        res.scores[pos] = m / static_cast<float>(cfg.heads);
    }
    return res;
}

Matrix segment_refine(const Matrix& compressed, const StaParams& params) {
    Matrix f = ffn_forward(compressed, params.ffn_w1, params.ffn_b1, params.ffn_w2, params.ffn_b2);
    return layer_norm(add(f, compressed), params.ln_gain, params.ln_bias);
}

GstaResult gsta_forward(const Vector& target, const Matrix& compressed,
                        const std::vector<GstaLayerParams>& layers,
                        const std::vector<bool>& seg_mask) {
    const std::size_t d = target.dim(), n = compressed.rows();
    if (compressed.cols() != d) throw ShapeError("gsta_forward: dims");
    if (seg_mask.size() != n) throw ShapeError("gsta_forward: mask length");
    if (layers.empty()) throw std::invalid_argument("gsta_forward: no layers");
    if (std::none_of(seg_mask.begin(), seg_mask.end(), [](bool b) { return b; }))
        throw std::domain_error("gsta_forward: all segments masked");

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    GstaResult res;
    Vector t = target;
    Matrix tmat(1, d);
    for (const auto& layer : layers) {
        for (std::size_t c = 0; c < d; ++c) tmat(0, c) = t[c];
        const Matrix q = matmul(tmat, layer.w_q);
        const Matrix k = matmul(compressed, layer.w_k);
        const Matrix v = matmul(compressed, layer.w_v);

        Matrix logits(1, n);
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c)
                dot += static_cast<double>(q(0, c)) * k(j, c);
            logits(0, j) = static_cast<float>(dot * scale);
        }
        std::vector<bool> mask(seg_mask.begin(), seg_mask.end());
        const Matrix attn = softmax_rows(logits, &mask);

        Vector attn_row(n);
        for (std::size_t j = 0; j < n; ++j) attn_row[j] = attn(0, j);
        res.attn_maps.push_back(attn_row);

        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                acc += static_cast<double>(attn(0, j)) * v(j, c);
            t[c] = static_cast<float>(t[c] + acc);
        }
        flopcount::add(n * (d + 1) * 2);
    }
    res.z = t;
    return res;
}

FusionOutput fuse(const Vector& z, const Matrix& compressed, std::size_t recent_k,
                  const std::vector<bool>& seg_mask) {
    const std::size_t d = z.dim(), n = compressed.rows();
    if (compressed.cols() != d) throw ShapeError("fuse: dims");
    if (seg_mask.size() != n) throw ShapeError("fuse: mask length");

    FusionOutput out;
    out.z = z;
    out.max_pooled = Vector(d);
    bool first = true;
    for (std::size_t s = 0; s < n; ++s) {
        if (!seg_mask[s]) continue;
        for (std::size_t c = 0; c < d; ++c) {
            const float v = compressed(s, c);
            if (first || v > out.max_pooled[c]) out.max_pooled[c] = v;
        }
        first = false;
    }
    for (std::size_t i = 0; i < recent_k; ++i) {
        Vector r(d);
        if (i < n && seg_mask[i])
            for (std::size_t c = 0; c < d; ++c) r[c] = compressed(i, c);
        out.recent_segments.push_back(std::move(r));
    }
    out.fused = Vector(d * (2 + recent_k));
    std::size_t at = 0;
    for (std::size_t c = 0; c < d; ++c) out.fused[at++] = z[c];
    for (std::size_t c = 0; c < d; ++c) out.fused[at++] = out.max_pooled[c];
    for (const auto& r : out.recent_segments)
        for (std::size_t c = 0; c < d; ++c) out.fused[at++] = r[c];
    return out;
}

FusionOutput laser_forward(const SequenceBatchInput& input, const LaserParams& params,
                           const LaserConfig& cfg, LaserForwardCache* cache) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim, w = cfg.segment_w;
    if (input.tokens.cols() != d && input.tokens.rows() > 0)
        throw ShapeError("laser_forward: token width vs embed_dim");
    if (input.target.dim() != d) throw ShapeError("laser_forward: target dim");
    if (input.timestamps.size() != input.tokens.rows())
        throw ShapeError("laser_forward: timestamps vs tokens");

    const std::size_t in_len = input.tokens.rows();
    const std::size_t valid = std::min(input.valid_len, in_len);

    std::size_t clamped = 0;
    std::vector<int> bucket_of(in_len, -1);
    Matrix pre_pad;
    if (cfg.use_recency) {
        RecencyResult rec = apply_recency(input, params.recency, valid);
        pre_pad = std::move(rec.tokens);
        clamped = rec.clamped;
        for (std::size_t i = 0; i < valid; ++i) {
            double delta = input.request_time - input.timestamps[i];
            if (delta < 0.0) delta = 0.0;
            bucket_of[i] = static_cast<int>(params.recency.bucket_for(delta));
        }
    } else {
        pre_pad = input.tokens;
    }

    // Pad with zero rows up to a multiple of w (at least one segment).
    const std::size_t padded = ((std::max<std::size_t>(in_len, 1) + w - 1) / w) * w;
    Matrix x(padded, d);
    for (std::size_t i = 0; i < in_len; ++i)
        for (std::size_t c = 0; c < d; ++c) x(i, c) = pre_pad(i, c);

    const std::size_t n_segs = padded / w;
    std::vector<bool> pos_mask(padded, false);
    for (std::size_t i = 0; i < valid; ++i) pos_mask[i] = true;
    std::vector<bool> seg_mask(n_segs, false);
    for (std::size_t s = 0; s < n_segs; ++s)
        for (std::size_t j = 0; j < w; ++j)
            if (pos_mask[s * w + j]) seg_mask[s] = true;
    if (valid == 0) seg_mask[0] = true;  // degenerate user: one zero segment stays live

    // Gated compression: everything the backward pass needs is computed
    // exactly once, into a local cache when the caller passed none.
    LaserForwardCache local;
    LaserForwardCache& cc = cache ? *cache : local;
    cc = LaserForwardCache{};
    cc.cfg = cfg;
    cc.input_len = in_len;
    cc.padded_len = padded;
    cc.n_segs = n_segs;
    cc.valid_len = valid;
    cc.pos_mask = pos_mask;
    cc.seg_mask = seg_mask;
    cc.bucket_of = std::move(bucket_of);
    cc.target = input.target;
    cc.x = std::move(x);
    cc.recency_clamped = clamped;

    Matrix tmat(1, d);
    for (std::size_t c = 0; c < d; ++c) tmat(0, c) = input.target[c];
    const Matrix qm = matmul(tmat, params.sta.w_q);
    cc.q = Vector(cfg.qk_dim);
    for (std::size_t c = 0; c < cfg.qk_dim; ++c) cc.q[c] = qm(0, c);
    cc.k_glob = matmul(cc.x, params.sta.w_k);
    cc.v_glob = matmul(cc.x, params.sta.w_v);

    const std::size_t dq_h = cfg.qk_dim / cfg.heads, dv_h = d / cfg.heads;
    const float gamma = cfg.resolved_gamma();
    cc.head_scores = Matrix(cfg.heads, padded);
    {
        std::vector<double> pre(w);
        std::vector<bool> live(w);
        std::vector<float> gate(w);
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const std::size_t q0 = head * dq_h;
            for (std::size_t s = 0; s < n_segs; ++s) {
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t pos = s * w + j;
                    live[j] = cc.pos_mask[pos];
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dq_h; ++c)
                        dot += static_cast<double>(cc.q[q0 + c]) * cc.k_glob(pos, q0 + c);
                    pre[j] = dot / gamma;
                }
                segment_gate(cfg, pre, live, gate);
                for (std::size_t j = 0; j < w; ++j) cc.head_scores(head, s * w + j) = gate[j];
            }
            flopcount::add(padded * (dq_h + 1));
        }
    }

    cc.compressed_raw = Matrix(n_segs, d);
    for (std::size_t s = 0; s < n_segs; ++s) {
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const std::size_t v0 = head * dv_h;
            for (std::size_t c = 0; c < dv_h; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < w; ++j)
                    acc += static_cast<double>(cc.head_scores(head, s * w + j)) *
                           cc.v_glob(s * w + j, v0 + c);
                cc.compressed_raw(s, v0 + c) = static_cast<float>(acc);
            }
        }
    }
    flopcount::add(static_cast<std::uint64_t>(padded) * d);

    Vector scores(padded);
    for (std::size_t pos = 0; pos < padded; ++pos) {
        float m = 0.0f;
        for (std::size_t head = 0; head < cfg.heads; ++head) m += cc.head_scores(head, pos);
        scores[pos] = m / static_cast<float>(cfg.heads);
    }

    // Refine: FFN + residual + LayerNorm, intermediates kept.
    cc.ffn_a1 = matmul(cc.compressed_raw, params.sta.ffn_w1);
    for (std::size_t r = 0; r < cc.ffn_a1.rows(); ++r)
        for (std::size_t c = 0; c < cc.ffn_a1.cols(); ++c) cc.ffn_a1(r, c) += params.sta.ffn_b1[c];
    Matrix relu_a1 = relu(cc.ffn_a1);
    Matrix f = matmul(relu_a1, params.sta.ffn_w2);
    for (std::size_t r = 0; r < f.rows(); ++r)
        for (std::size_t c = 0; c < f.cols(); ++c) f(r, c) += params.sta.ffn_b2[c];
    cc.ln_in = add(f, cc.compressed_raw);
    cc.ln_mean.assign(n_segs, 0.0);
    cc.ln_inv.assign(n_segs, 0.0);
    cc.refined = Matrix(n_segs, d);
    for (std::size_t r = 0; r < n_segs; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += cc.ln_in(r, c);
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = cc.ln_in(r, c) - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        cc.ln_mean[r] = mean;
        cc.ln_inv[r] = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t c = 0; c < d; ++c)
            cc.refined(r, c) = static_cast<float>((cc.ln_in(r, c) - mean) * cc.ln_inv[r] *
                                                       params.sta.ln_gain[c] +
                                                   params.sta.ln_bias[c]);
    }

    // Stacked target attention over the refined rows.
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vector t = input.target;
    cc.t_stream.push_back(t);
    for (const auto& layer : params.gsta) {
        Matrix tm(1, d);
        for (std::size_t c = 0; c < d; ++c) tm(0, c) = t[c];
        const Matrix qg = matmul(tm, layer.w_q);
        Vector qv(d);
        for (std::size_t c = 0; c < d; ++c) qv[c] = qg(0, c);
        cc.gsta_q.push_back(qv);
        cc.gsta_k.push_back(matmul(cc.refined, layer.w_k));
        cc.gsta_v.push_back(matmul(cc.refined, layer.w_v));
        const Matrix& kk = cc.gsta_k.back();
        const Matrix& vv = cc.gsta_v.back();

        Matrix logits(1, n_segs);
        for (std::size_t j = 0; j < n_segs; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(qv[c]) * kk(j, c);
            logits(0, j) = static_cast<float>(dot * scale);
        }
        std::vector<bool> mask(seg_mask.begin(), seg_mask.end());
        const Matrix attn = softmax_rows(logits, &mask);
        Vector arow(n_segs);
        for (std::size_t j = 0; j < n_segs; ++j) arow[j] = attn(0, j);
        cc.gsta_attn.push_back(arow);

        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n_segs; ++j)
                acc += static_cast<double>(arow[j]) * vv(j, c);
            t[c] = static_cast<float>(t[c] + acc);
        }
        flopcount::add(n_segs * (d + 1) * 2);
        cc.t_stream.push_back(t);
    }

    FusionOutput out = fuse(t, cc.refined, cfg.recent_k, seg_mask);
    if (!cfg.fuse_full) out.fused = t;
    out.compressed = cc.refined;
    out.sta_scores = scores;

    cc.max_src.assign(d, 0);
    for (std::size_t c = 0; c < d; ++c) {
        bool first = true;
        for (std::size_t s = 0; s < n_segs; ++s) {
            if (!seg_mask[s]) continue;
            if (first || cc.refined(s, c) > cc.refined(cc.max_src[c], c)) {
                cc.max_src[c] = s;
                first = false;
            }
        }
    }
    cc.valid = true;
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double()>& loss_fn,
                                     std::span<float> params, float h) {
    std::vector<double> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const float orig = params[i];
        const float hi = orig + h, lo = orig - h;
        params[i] = hi;
        const double up = loss_fn();
        params[i] = lo;
        const double down = loss_fn();
        params[i] = orig;
        // Divide by the step the float parameters actually realized.
        grads[i] = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    }
    return grads;
}

}  // namespace laser
