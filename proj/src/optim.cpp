#include "ubergnn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace ubergnn {

void adam_step(Parameter& param, AdamState& state, double lr, double l2,
               double beta1, double beta2, double eps) {
    if (!param.value.same_shape(param.grad) || !param.value.same_shape(state.m) ||
        !param.value.same_shape(state.v)) {
        throw std::invalid_argument("adam_step: shape mismatch on " + param.name);
    }
    if (!param.grad.all_finite()) {
        throw TrainingDivergenceError("non-finite gradient in parameter " + param.name);
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < param.value.size(); ++i) {
        const double g = param.grad[i] + l2 * param.value[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    param.zero_grad();
}

double lr_at_epoch(std::size_t epoch) {
    // max(0.01, 0.1 * 0.1^(epoch/10)): the decayed value is at or below the
    // clamp from the second decade on, so return the endpoints exactly
    // instead of round-tripping through pow and picking up 1-ulp noise.
    return epoch < 10 ? 0.1 : 0.01;
}

}  // namespace ubergnn
