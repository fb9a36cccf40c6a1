#include "ubergnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ubergnn {

std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss_fn,
                                     const std::vector<Parameter*>& params,
                                     double eps) {
    if (eps <= 0.0) {
        throw std::invalid_argument("finite_diff_grad: eps must be positive");
    }
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (Parameter* p : params) {
        Matrix g(p->value.rows(), p->value.cols());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + eps;
            const double up = loss_fn();
            p->value[i] = saved - eps;
            const double down = loss_fn();
            p->value[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw OracleFailureError("finite_diff_grad: non-finite loss at perturbed point of " +
                                         p->name);
            }
            g[i] = (up - down) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric,
                          double floor) {
    // Error relative to the gradient scale of the whole group, not per entry:
    // near-zero entries otherwise amplify f64 finite-difference roundoff into
    // spurious failures no analytic gradient could avoid.
    double scale = floor;
    double worst_abs = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        scale = std::max({scale, std::fabs(analytic[i]), std::fabs(numeric[i])});
        worst_abs = std::max(worst_abs, std::fabs(analytic[i] - numeric[i]));
    }
    return worst_abs / scale;
}

}  // namespace ubergnn
