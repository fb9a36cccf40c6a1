#pragma once

#include <stdexcept>
#include <string>

#include "ubergnn/matrix.hpp"

namespace ubergnn {

// Trainable matrix with a gradient slot of the same shape.
struct Parameter {
    Matrix value;
    Matrix grad;
    std::string name;

    Parameter() = default;
    Parameter(Matrix v, std::string n)
        : value(std::move(v)), grad(value.rows(), value.cols()), name(std::move(n)) {}

    void zero_grad() { grad.fill(0.0); }
};

struct AdamState {
    Matrix m;
    Matrix v;
    std::size_t step = 0;

    AdamState() = default;
    explicit AdamState(const Parameter& p)
        : m(p.value.rows(), p.value.cols()), v(p.value.rows(), p.value.cols()) {}
};

struct TrainingDivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One Adam update with bias correction and decoupled-from-nothing L2
// (the penalty is folded into the gradient: g' = grad + l2 * value).
// Zeroes the gradient slot afterwards.
void adam_step(Parameter& param, AdamState& state, double lr, double l2,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// lr(e) = max(0.01, 0.1 * 0.1^floor(e/10)): epochs 0-9 train at 0.1,
// everything later at the 0.01 floor.
double lr_at_epoch(std::size_t epoch);

}  // namespace ubergnn
