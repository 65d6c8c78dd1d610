#pragma once

// Finite-difference verification harness. Always runs in double precision:
// central differences with h = 1e-6 against the tape's analytic gradients.

#include <functional>
#include <string>
#include <vector>

#include "defocus/ops.hpp"
#include "defocus/tensor.hpp"

namespace defocus {

using GradCheckFn =
    std::function<Tensor<double>(Tape<double>*, std::vector<Tensor<double>>&)>;

/// Returns max over all input coordinates of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double gradient_check(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                             double h = 1e-6) {
    for (auto& t : inputs) {
        t.set_requires_grad(true);
        t.clear_grad();  // drop leftovers from any earlier backward
    }
    Tape<double> tape;
    Tensor<double> loss = fn(&tape, inputs);
    if (loss.numel() != 1) throw InternalError("gradient_check: fn must produce a scalar");
    tape.backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& t : inputs) {
        // inputs the graph never consumed have no buffer; their gradient is zero
        if (t.grad().empty())
            analytic.emplace_back(size_t(t.numel()), 0.0);
        else
            analytic.emplace_back(t.grad().begin(), t.grad().end());
    }

    double max_err = 0;
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
        auto& t = inputs[ti];
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double saved = t[i];
            t[i] = saved + h;
            const double fp = fn(nullptr, inputs)[0];
            t[i] = saved - h;
            const double fm = fn(nullptr, inputs)[0];
            t[i] = saved;
            const double numeric = (fp - fm) / (2 * h);
            const double a = analytic[ti][static_cast<size_t>(i)];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > max_err) max_err = err;
        }
    }
    return max_err;
}

struct GradCheckCase {
    std::string name;
    std::function<double()> run;  // returns max relative error
};

struct GradCheckResult {
    std::string name;
    double max_rel_err;
    bool ok;
};

inline constexpr double kGradCheckTolerance = 1e-4;

inline std::vector<GradCheckResult> run_gradient_checks(const std::vector<GradCheckCase>& cases) {
    std::vector<GradCheckResult> out;
    out.reserve(cases.size());
    for (const auto& c : cases) {
        const double err = c.run();
        out.push_back({c.name, err, err < kGradCheckTolerance});
    }
    return out;
}

}  // namespace defocus
