#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ubergnn {

// Dense row-major matrix of doubles. The only tensor type in the project;
// vectors are 1xN or Nx1 matrices or plain std::vector<double> at call sites.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    void fill(double v);
    bool all_finite() const;
    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool operator==(const Matrix& other) const {
        return same_shape(other) && data_ == other.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);

// out += a * b
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix transpose(const Matrix& m);

// y += alpha * x
void axpy(double alpha, const Matrix& x, Matrix& y);

double max_abs_diff(const Matrix& a, const Matrix& b);

// Entries i.i.d. N(0, stddev^2); pure function of (rows, cols, seed, stddev).
Matrix gaussian_init(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     double stddev = 0.1);

}  // namespace ubergnn
