#include "ubergnn/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ubergnn/rng.hpp"

namespace ubergnn {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

void Matrix::fill(double v) {
    for (double& x : data_) x = v;
}

bool Matrix::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    matmul_acc(a, b, out);
    return out;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& out) {
    if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
        throw std::invalid_argument("matmul: incompatible shapes");
    }
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < m; ++j) {
                orow[j] += av * brow[j];
            }
        }
    }
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
    if (!x.same_shape(y)) {
        throw std::invalid_argument("axpy: shape mismatch");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument("max_abs_diff: shape mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

Matrix gaussian_init(std::size_t rows, std::size_t cols, std::uint64_t seed,
                     double stddev) {
    if (rows == 0 || cols == 0) {
        throw std::invalid_argument("gaussian_init: zero dimension");
    }
    Rng rng(seed);
    Matrix out(rows, cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = rng.gaussian(stddev);
    }
    return out;
}

}  // namespace ubergnn
