#pragma once

#include <cstdint>
#include <optional>

#include "laser/matrix.hpp"

namespace laser {

// Running multiply-add count for the current thread. One unit per fused
// multiply-add in matmul inner loops, one per scalar op elsewhere, so the
// totals line up with the analytic cost model's convention.
namespace flopcount {
void reset();
std::uint64_t count();
void add(std::uint64_t n);
}  // namespace flopcount

/// Standard matrix product. Accumulates in double, stores float32.
/// Throws ShapeError when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Elementwise logistic 1/(1+exp(-x)). Saturates cleanly for |x| > 30.
Matrix sigmoid(const Matrix& x);
float sigmoidf(float x);

/// Row-wise softmax with per-row max subtraction. Masked entries (mask
/// false) get -1e9 before normalization and exactly 0 after. A fully
/// masked row is an error.
Matrix softmax_rows(const Matrix& x, const std::vector<bool>* mask = nullptr);

/// Per-row layer normalization with population variance (divide by cols)
/// followed by the affine gain/bias.
Matrix layer_norm(const Matrix& x, const Vector& gain, const Vector& bias, float eps = 1e-5f);

/// Zero-copy (L/w, w, cols) view over a row-major matrix. Element (i,j,c)
/// aliases x(i*w + j, c).
class SegmentView {
  public:
    SegmentView(const Matrix& x, std::size_t w);
    std::size_t segments() const { return segs_; }
    std::size_t window() const { return w_; }
    std::size_t cols() const { return m_->cols(); }
    float at(std::size_t i, std::size_t j, std::size_t c) const {
        return (*m_)(i * w_ + j, c);
    }
    const float* row(std::size_t i, std::size_t j) const { return m_->row(i * w_ + j); }

  private:
    const Matrix* m_;
    std::size_t w_, segs_;
};

SegmentView reshape_segments(const Matrix& x, std::size_t w);

/// Columnwise maximum. Errors on an empty matrix.
Vector max_pool_rows(const Matrix& x);

/// relu(x*w1 + b1)*w2 + b2.
Matrix ffn_forward(const Matrix& x, const Matrix& w1, const Vector& b1, const Matrix& w2,
                   const Vector& b2);

// Small helpers shared across modules.
Matrix transpose(const Matrix& x);
Matrix add(const Matrix& a, const Matrix& b);
Matrix relu(const Matrix& x);

}  // namespace laser
