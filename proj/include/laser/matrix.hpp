#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace laser {

// Thrown by kernels on incompatible operand shapes. The message always
// carries both shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major float32 matrix. data().size() == rows()*cols().
class Matrix {
  public:
    Matrix() : rows_(0), cols_(0) {}
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t r = 0;
        for (const auto& row : rows) {
            if (row.size() != m.cols_) throw ShapeError("from_rows: ragged row");
            std::size_t c = 0;
            for (float v : row) m(r, c++) = v;
            ++r;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    float* row(std::size_t r) { return data_.data() + r * cols_; }
    const float* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

  private:
    std::size_t rows_, cols_;
    std::vector<float> data_;
};

/// Flat float32 vector.
class Vector {
  public:
    Vector() = default;
    explicit Vector(std::size_t dim, float fill = 0.0f) : data_(dim, fill) {}
    Vector(std::initializer_list<float> vals) : data_(vals) {}

    std::size_t dim() const { return data_.size(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

  private:
    std::vector<float> data_;
};

}  // namespace laser
