#include "laser/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace laser {

namespace flopcount {
namespace {
thread_local std::uint64_t g_count = 0;
}
void reset() { g_count = 0; }
std::uint64_t count() { return g_count; }
void add(std::uint64_t n) { g_count += n; }
}  // namespace flopcount

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " x " + b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Matrix out(m, n);
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const float* arow = a.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const float* brow = b.row(p);
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        float* orow = out.row(i);
        for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
    }
    flopcount::add(static_cast<std::uint64_t>(m) * k * n);
    return out;
}

float sigmoidf(float x) {
    // Split on sign so exp never overflows; clamp so the float result
    // stays strictly inside (0,1) even when the double saturates.
    double y;
    if (x >= 0.0f) {
        const double e = std::exp(-static_cast<double>(x));
        y = 1.0 / (1.0 + e);
    } else {
        const double e = std::exp(static_cast<double>(x));
        y = e / (1.0 + e);
    }
    float f = static_cast<float>(y);
    if (f >= 1.0f) f = std::nextafter(1.0f, 0.0f);
    if (f <= 0.0f) f = std::numeric_limits<float>::denorm_min();
    return f;
}

Matrix sigmoid(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.data().size(); ++i) out.data()[i] = sigmoidf(x.data()[i]);
    flopcount::add(x.size());
    return out;
}

Matrix softmax_rows(const Matrix& x, const std::vector<bool>* mask) {
    if (mask && mask->size() != x.size())
        throw ShapeError("softmax_rows: mask size " + std::to_string(mask->size()) +
                         " vs matrix " + x.shape_str());
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const bool live = !mask || (*mask)[r * x.cols() + c];
            if (!live) continue;
            any = true;
            mx = std::max(mx, static_cast<double>(x(r, c)));
        }
        if (!any) throw std::domain_error("softmax_rows: fully masked row " + std::to_string(r));
        double sum = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) {
            const bool live = !mask || (*mask)[r * x.cols() + c];
            const double v = live ? std::exp(static_cast<double>(x(r, c)) - mx) : 0.0;
            out(r, c) = static_cast<float>(v);
            sum += v;
        }
        for (std::size_t c = 0; c < x.cols(); ++c) {
            out(r, c) = static_cast<float>(out(r, c) / sum);
        }
    }
    flopcount::add(3ull * x.size());
    return out;
}

Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, float eps) {
    if (gain.dim() != x.cols() || bias.dim() != x.cols())
        throw ShapeError("layer_norm: gain/bias dim vs matrix " + x.shape_str());
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const float* xr = x.row(r);
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += xr[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = xr[c] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        float* orow = out.row(r);
        for (std::size_t c = 0; c < d; ++c) {
            orow[c] = static_cast<float>((xr[c] - mean) * inv * gain[c] + bias[c]);
        }
    }
    flopcount::add(5ull * x.size());
    return out;
}

SegmentView::SegmentView(const Matrix& x, std::size_t w) : m_(&x), w_(w) {
    if (w == 0 || x.rows() % w != 0)
        throw ShapeError("reshape_segments: rows " + std::to_string(x.rows()) +
                         " not divisible by window " + std::to_string(w));
    segs_ = x.rows() / w;
}

SegmentView reshape_segments(const Matrix& x, std::size_t w) { return SegmentView(x, w); }

Vector max_pool_rows(const Matrix& x) {
    if (x.rows() == 0) throw std::domain_error("max_pool_rows: empty matrix");
    Vector out(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c) out[c] = x(0, c);
    for (std::size_t r = 1; r < x.rows(); ++r) {
        const float* xr = x.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] = std::max(out[c], xr[c]);
    }
    return out;
}

Matrix transpose(const Matrix& x) {
    Matrix out(x.cols(), x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shapes " + a.shape_str() + " vs " + b.shape_str());
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.data().size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    flopcount::add(a.size());
    return out;
}

Matrix relu(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.data().size(); ++i)
        out.data()[i] = x.data()[i] > 0.0f ? x.data()[i] : 0.0f;
    flopcount::add(x.size());
    return out;
}

namespace {
Matrix add_row_bias(const Matrix& x, const Vector& b) {
    if (b.dim() != x.cols()) throw ShapeError("bias dim vs matrix " + x.shape_str());
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) + b[c];
    flopcount::add(x.size());
    return out;
}
}  // namespace

Matrix ffn_forward(const Matrix& x, const Matrix& w1, const Vector& b1, const Matrix& w2,
                   const Vector& b2) {
    Matrix h = relu(add_row_bias(matmul(x, w1), b1));
    return add_row_bias(matmul(h, w2), b2);
}

}  // namespace laser
