#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "defocus/common.hpp"

namespace defocus {

/// Per-parameter Adam state. The step counter is incremented before the
/// bias correction, and epsilon is added outside the square root.
template <typename T>
struct AdamState {
    int64_t step = 0;
    std::vector<T> m, v;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T epsilon = T(1e-8);
    T learning_rate = T(1e-4);
};

template <typename T>
void adam_step(std::span<T> param, std::span<const T> grad, AdamState<T>& s) {
    if (param.size() != grad.size())
        throw InternalError("adam_step: param/grad size mismatch " + std::to_string(param.size()) +
                            " vs " + std::to_string(grad.size()));
    if (s.m.size() != param.size()) {
        s.m.assign(param.size(), T(0));
        s.v.assign(param.size(), T(0));
    }
    s.step += 1;
    const T c1 = T(1) - std::pow(s.beta1, static_cast<T>(s.step));
    const T c2 = T(1) - std::pow(s.beta2, static_cast<T>(s.step));
    for (size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        s.m[i] = s.beta1 * s.m[i] + (T(1) - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (T(1) - s.beta2) * g * g;
        const T mhat = s.m[i] / c1;
        const T vhat = s.v[i] / c2;
        param[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

}  // namespace defocus
