#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ubergnn/optim.hpp"

namespace ubergnn {

struct OracleFailureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Central-difference gradients, (f(x+eps) - f(x-eps)) / 2eps per scalar
// entry. loss_fn must read the parameter values and be deterministic.
// Parameters are restored exactly before returning.
std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss_fn,
                                     const std::vector<Parameter*>& params,
                                     double eps);

// max_i |analytic_i - numeric_i| relative to the largest entry magnitude of
// either gradient (floored), i.e. error against the scale of the whole group.
double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                          double floor = 1e-8);

}  // namespace ubergnn
