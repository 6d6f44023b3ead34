#include <cmath>
#include <stdexcept>

#include "laser/attention.hpp"
#include "laser/ops.hpp"

namespace laser {

namespace {

void add_outer(Matrix& acc, const Vector& a, const Vector& b) {
    // acc += a b^T
    for (std::size_t i = 0; i < a.dim(); ++i) {
        const float ai = a[i];
        if (ai == 0.0f) continue;
        float* row = acc.row(i);
        for (std::size_t j = 0; j < b.dim(); ++j) row[j] += ai * b[j];
    }
}

}  // namespace

LaserGrads laser_backward(const LaserParams& params, const LaserForwardCache& cc,
                          const Vector& fused_grad) {
    if (!cc.valid) throw std::logic_error("laser_backward: no cached forward pass");
    const LaserConfig& cfg = cc.cfg;
    const std::size_t d = cfg.embed_dim;
    const std::size_t n_segs = cc.n_segs, padded = cc.padded_len, w = cfg.segment_w;
    if (fused_grad.dim() != cfg.fused_dim())
        throw ShapeError("laser_backward: upstream gradient dim " +
                         std::to_string(fused_grad.dim()) + " vs fused dim " +
                         std::to_string(cfg.fused_dim()));

    LaserGrads g;
    g.sta.w_q = Matrix(d, cfg.qk_dim);
    g.sta.w_k = Matrix(d, cfg.qk_dim);
    g.sta.w_v = Matrix(d, d);
    g.sta.ffn_w1 = Matrix(d, cfg.ffn_ratio * d);
    g.sta.ffn_b1 = Vector(cfg.ffn_ratio * d);
    g.sta.ffn_w2 = Matrix(cfg.ffn_ratio * d, d);
    g.sta.ffn_b2 = Vector(d);
    g.sta.ln_gain = Vector(d);
    g.sta.ln_bias = Vector(d);
    g.gsta.assign(params.gsta.size(),
                  GstaLayerParams{Matrix(d, d), Matrix(d, d), Matrix(d, d)});
    g.recency_table = Matrix(params.recency.table.rows(), d);
    g.tokens = Matrix(cc.input_len, d);
    g.target = Vector(d);

    // --- fusion split ----------------------------------------------------
    Vector g_z(d);
    Matrix g_refined(n_segs, d);
    if (cfg.fuse_full) {
        for (std::size_t c = 0; c < d; ++c) g_z[c] = fused_grad[c];
        for (std::size_t c = 0; c < d; ++c)
            g_refined(cc.max_src[c], c) += fused_grad[d + c];
        for (std::size_t i = 0; i < cfg.recent_k; ++i) {
            if (i >= n_segs || !cc.seg_mask[i]) continue;  // zero rows carried no signal
            for (std::size_t c = 0; c < d; ++c)
                g_refined(i, c) += fused_grad[(2 + i) * d + c];
        }
    } else {
        for (std::size_t c = 0; c < d; ++c) g_z[c] = fused_grad[c];
    }

    // --- stacked attention, last layer first ------------------------------
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Vector g_t = g_z;
    for (std::size_t li = params.gsta.size(); li-- > 0;) {
        const Vector& attn = cc.gsta_attn[li];
        const Matrix& kmat = cc.gsta_k[li];
        const Matrix& vmat = cc.gsta_v[li];
        const Vector& q = cc.gsta_q[li];
        const Vector& t_prev = cc.t_stream[li];

        // o = attn * V
        Vector g_attn(n_segs);
        Matrix g_v(n_segs, d);
        for (std::size_t j = 0; j < n_segs; ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dot += static_cast<double>(g_t[c]) * vmat(j, c);
                g_v(j, c) += attn[j] * g_t[c];
            }
            g_attn[j] = static_cast<float>(dot);
        }

        // softmax backward over the unmasked entries
        double inner = 0.0;
        for (std::size_t j = 0; j < n_segs; ++j)
            inner += static_cast<double>(g_attn[j]) * attn[j];
        Vector g_logit(n_segs);
        for (std::size_t j = 0; j < n_segs; ++j) {
            if (!cc.seg_mask[j]) continue;
            g_logit[j] = static_cast<float>(attn[j] * (g_attn[j] - inner) * scale);
        }

        // logits_j = q . k_j (scale already folded into g_logit)
        Vector g_q(d);
        Matrix g_k(n_segs, d);
        for (std::size_t j = 0; j < n_segs; ++j) {
            const float gl = g_logit[j];
            if (gl == 0.0f) continue;
            for (std::size_t c = 0; c < d; ++c) {
                g_q[c] += gl * kmat(j, c);
                g_k(j, c) += gl * q[c];
            }
        }

        // q = t_prev W_q ; K = refined W_k ; V = refined W_v
        add_outer(g.gsta[li].w_q, t_prev, g_q);
        Vector g_t_prev(d);
        for (std::size_t a = 0; a < d; ++a) {
            double acc = 0.0;
            for (std::size_t b = 0; b < d; ++b)
                acc += static_cast<double>(g_q[b]) * params.gsta[li].w_q(a, b);
            g_t_prev[a] = static_cast<float>(acc);
        }
        for (std::size_t j = 0; j < n_segs; ++j) {
            for (std::size_t a = 0; a < d; ++a) {
                const float xr = cc.refined(j, a);
                float* wk_row = g.gsta[li].w_k.row(a);
                float* wv_row = g.gsta[li].w_v.row(a);
                for (std::size_t b = 0; b < d; ++b) {
                    wk_row[b] += xr * g_k(j, b);
                    wv_row[b] += xr * g_v(j, b);
                }
            }
            for (std::size_t a = 0; a < d; ++a) {
                double acc = 0.0;
                for (std::size_t b = 0; b < d; ++b)
                    acc += static_cast<double>(g_k(j, b)) * params.gsta[li].w_k(a, b) +
                           static_cast<double>(g_v(j, b)) * params.gsta[li].w_v(a, b);
                g_refined(j, a) += static_cast<float>(acc);
            }
        }

        // residual: t_l = t_{l-1} + o_l, so the upstream grad passes through
        // and the query path adds on top.
        for (std::size_t c = 0; c < d; ++c) g_t[c] += g_t_prev[c];
    }
    for (std::size_t c = 0; c < d; ++c) g.target[c] += g_t[c];

    // --- LayerNorm backward ----------------------------------------------
    Matrix g_ln_in(n_segs, d);
    for (std::size_t r = 0; r < n_segs; ++r) {
        const double mean = cc.ln_mean[r], inv = cc.ln_inv[r];
        double sum_gxhat = 0.0, sum_gxhat_xhat = 0.0;
        std::vector<double> xhat(d), gxhat(d);
        for (std::size_t c = 0; c < d; ++c) {
            xhat[c] = (cc.ln_in(r, c) - mean) * inv;
            gxhat[c] = static_cast<double>(g_refined(r, c)) * params.sta.ln_gain[c];
            g.sta.ln_gain[c] += static_cast<float>(g_refined(r, c) * xhat[c]);
            g.sta.ln_bias[c] += g_refined(r, c);
            sum_gxhat += gxhat[c];
            sum_gxhat_xhat += gxhat[c] * xhat[c];
        }
        const double dn = static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
            const double gx =
                inv * (gxhat[c] - sum_gxhat / dn - xhat[c] * sum_gxhat_xhat / dn);
            g_ln_in(r, c) = static_cast<float>(gx);
        }
    }

    // --- FFN + residual backward -------------------------------------------
    // ln_in = ffn_out + compressed_raw
    Matrix g_raw = g_ln_in;  // residual branch
    const std::size_t rd = cfg.ffn_ratio * d;
    Matrix g_relu(n_segs, rd);
    for (std::size_t r = 0; r < n_segs; ++r) {
        for (std::size_t c = 0; c < d; ++c) g.sta.ffn_b2[c] += g_ln_in(r, c);
        for (std::size_t a = 0; a < rd; ++a) {
            const float act = cc.ffn_a1(r, a) > 0.0f ? cc.ffn_a1(r, a) : 0.0f;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                acc += static_cast<double>(g_ln_in(r, c)) * params.sta.ffn_w2(a, c);
                g.sta.ffn_w2(a, c) += act * g_ln_in(r, c);
            }
            g_relu(r, a) = static_cast<float>(acc);
        }
    }
    for (std::size_t r = 0; r < n_segs; ++r) {
        for (std::size_t a = 0; a < rd; ++a) {
            const float ga = cc.ffn_a1(r, a) > 0.0f ? g_relu(r, a) : 0.0f;
            if (ga == 0.0f) continue;
            g.sta.ffn_b1[a] += ga;
            for (std::size_t c = 0; c < d; ++c)
                g.sta.ffn_w1(c, a) += cc.compressed_raw(r, c) * ga;
        }
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t a = 0; a < rd; ++a) {
                const float ga = cc.ffn_a1(r, a) > 0.0f ? g_relu(r, a) : 0.0f;
                acc += static_cast<double>(ga) * params.sta.ffn_w1(c, a);
            }
            g_raw(r, c) += static_cast<float>(acc);
        }
    }

    // --- gated compression backward ----------------------------------------
    const std::size_t dq_h = cfg.qk_dim / cfg.heads, dv_h = d / cfg.heads;
    const float gamma = cfg.resolved_gamma();
    Vector g_qvec(cfg.qk_dim);
    Matrix g_kglob(padded, cfg.qk_dim);
    Matrix g_vglob(padded, d);

    std::vector<double> g_gate(w), g_pre(w);
    for (std::size_t s = 0; s < n_segs; ++s) {
        for (std::size_t head = 0; head < cfg.heads; ++head) {
            const std::size_t q0 = head * dq_h, v0 = head * dv_h;
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t pos = s * w + j;
                const float gate = cc.head_scores(head, pos);
                double dot = 0.0;
                for (std::size_t c = 0; c < dv_h; ++c) {
                    dot += static_cast<double>(g_raw(s, v0 + c)) * cc.v_glob(pos, v0 + c);
                    g_vglob(pos, v0 + c) += gate * g_raw(s, v0 + c);
                }
                g_gate[j] = dot;
            }
            if (!cfg.sta_softmax) {
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t pos = s * w + j;
                    if (!cc.pos_mask[pos]) {
                        g_pre[j] = 0.0;
                        continue;
                    }
                    const double sg = cc.head_scores(head, pos);
                    g_pre[j] = g_gate[j] * sg * (1.0 - sg);
                }
            } else {
                double inner = 0.0;
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t pos = s * w + j;
                    if (cc.pos_mask[pos]) inner += g_gate[j] * cc.head_scores(head, pos);
                }
                for (std::size_t j = 0; j < w; ++j) {
                    const std::size_t pos = s * w + j;
                    g_pre[j] = cc.pos_mask[pos]
                                   ? cc.head_scores(head, pos) * (g_gate[j] - inner)
                                   : 0.0;
                }
            }
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t pos = s * w + j;
                const double gd = g_pre[j] / gamma;
                if (gd == 0.0) continue;
                for (std::size_t c = 0; c < dq_h; ++c) {
                    g_qvec[q0 + c] += static_cast<float>(gd * cc.k_glob(pos, q0 + c));
                    g_kglob(pos, q0 + c) += static_cast<float>(gd * cc.q[q0 + c]);
                }
            }
        }
    }

    // Q = t W_q ; K = x W_k ; V = x W_v
    add_outer(g.sta.w_q, cc.target, g_qvec);
    for (std::size_t a = 0; a < d; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < cfg.qk_dim; ++b)
            acc += static_cast<double>(g_qvec[b]) * params.sta.w_q(a, b);
        g.target[a] += static_cast<float>(acc);
    }
    Matrix g_x(padded, d);
    for (std::size_t pos = 0; pos < padded; ++pos) {
        bool any_k = false, any_v = false;
        for (std::size_t b = 0; b < cfg.qk_dim && !any_k; ++b)
            any_k = g_kglob(pos, b) != 0.0f;
        for (std::size_t b = 0; b < d && !any_v; ++b) any_v = g_vglob(pos, b) != 0.0f;
        if (!any_k && !any_v) continue;
        for (std::size_t a = 0; a < d; ++a) {
            const float xv = cc.x(pos, a);
            double acc = 0.0;
            if (any_k) {
                float* wk_row = g.sta.w_k.row(a);
                for (std::size_t b = 0; b < cfg.qk_dim; ++b) {
                    wk_row[b] += xv * g_kglob(pos, b);
                    acc += static_cast<double>(g_kglob(pos, b)) * params.sta.w_k(a, b);
                }
            }
            if (any_v) {
                float* wv_row = g.sta.w_v.row(a);
                for (std::size_t b = 0; b < d; ++b) {
                    wv_row[b] += xv * g_vglob(pos, b);
                    acc += static_cast<double>(g_vglob(pos, b)) * params.sta.w_v(a, b);
                }
            }
            g_x(pos, a) = static_cast<float>(acc);
        }
    }

    // --- recency / token gradients ------------------------------------------
    for (std::size_t i = 0; i < cc.input_len; ++i) {
        for (std::size_t c = 0; c < d; ++c) g.tokens(i, c) = g_x(i, c);
        if (i < cc.valid_len && cfg.use_recency && cc.bucket_of[i] >= 0) {
            float* trow = g.recency_table.row(static_cast<std::size_t>(cc.bucket_of[i]));
            for (std::size_t c = 0; c < d; ++c) trow[c] += g_x(i, c);
        }
    }
    return g;
}

}  // namespace laser
