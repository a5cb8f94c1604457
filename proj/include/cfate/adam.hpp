#pragma once

#include <cmath>
#include <vector>

#include "cfate/errors.hpp"
#include "cfate/tensor.hpp"

namespace cfate {

// Standard Adam with bias correction. Moment tensors are shaped like the
// parameters they track; step counts the number of updates applied.
template <typename T>
struct AdamStateT {
    int64_t step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;

    static AdamStateT make(const std::vector<TensorT<T>>& params, double lr) {
        AdamStateT s;
        s.lr = lr;
        for (const auto& p : params) {
            s.m.emplace_back(p.shape);
            s.v.emplace_back(p.shape);
        }
        return s;
    }
};

using AdamState = AdamStateT<float>;

template <typename T>
void adam_step(AdamStateT<T>& state, std::vector<TensorT<T>>& params,
               const std::vector<TensorT<T>>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw config_error("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.size(); ++k) {
        check_same_shape(params[k], grads[k], "adam_step");
        TensorT<T>& p = params[k];
        TensorT<T>& m = state.m[k];
        TensorT<T>& v = state.v[k];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double g = grads[k][i];
            const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            p[i] = static_cast<T>(p[i] - state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace cfate
