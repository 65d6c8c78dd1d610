#pragma once

// The registered gradient-check suite: every differentiable primitive and
// every composite sub-network, each on fixed seeds and small shapes. Used
// by the CLI gradcheck command and by the acceptance gate.

#include "defocus/gradcheck.hpp"
#include "defocus/loss.hpp"
#include "defocus/model.hpp"

namespace defocus {

namespace detail {

inline Tensor<double> rt(Shape s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor<double>::uniform(std::move(s), rng, lo, hi);
}

inline ModelParams<double> suite_model(Variant v, uint64_t seed) {
    const ArchConfig tiny{4, 1, 4, 6, 2};
    auto mp = init_model<double>(v, tiny, seed);
    Rng rng(mix_seed(seed, 99));
    for (auto& [name, t] : mp.params)
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-0.3, 0.3);
    return mp;
}

inline std::vector<Tensor<double>> with_params(const ModelParams<double>& mp,
                                               std::vector<Tensor<double>> extra) {
    for (const auto& [name, t] : mp.params) extra.push_back(t);
    return extra;
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_suite(bool include_corrupted = false) {
    using detail::rt;
    std::vector<GradCheckCase> cases;
    auto scalarize = [](Tape<double>* t, Tensor<double> y) { return mean_all(t, mul(t, y, y)); };

    cases.push_back({"conv2d_3x3", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, conv2d(t, in[0], in[1], in[2]));
            },
            {rt({1, 2, 5, 5}, 1), rt({3, 2, 3, 3}, 2), rt({3}, 3)});
    }});
    cases.push_back({"conv2d_1x1", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, conv2d(t, in[0], in[1], in[2]));
            },
            {rt({1, 3, 4, 4}, 4), rt({2, 3, 1, 1}, 5), rt({2}, 6)});
    }});
    cases.push_back({"conv2d_5x5", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, conv2d(t, in[0], in[1], in[2]));
            },
            {rt({1, 2, 6, 6}, 7), rt({2, 2, 5, 5}, 8), rt({2}, 9)});
    }});
    cases.push_back({"relu", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, relu(t, in[0]));
            },
            {rt({2, 8}, 10, 0.1, 1.0)});
    }});
    cases.push_back({"leaky_relu", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, leaky_relu(t, in[0], 0.1));
            },
            {rt({2, 8}, 11, 0.1, 1.0)});
    }});
    cases.push_back({"sigmoid", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, sigmoid(t, in[0]));
            },
            {rt({2, 8}, 12, -3.0, 3.0)});
    }});
    cases.push_back({"softplus", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, softplus(t, in[0]));
            },
            {rt({2, 8}, 13, -3.0, 3.0)});
    }});
    cases.push_back({"broadcast_add", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, add(t, in[0], in[1]));
            },
            {rt({2, 1, 3}, 14), rt({2, 4, 3}, 15)});
    }});
    cases.push_back({"broadcast_mul", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, mul(t, in[0], in[1]));
            },
            {rt({3, 1, 1}, 16), rt({3, 4, 4}, 17)});
    }});
    cases.push_back({"broadcast_sub", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, sub(t, in[0], in[1]));
            },
            {rt({2, 4}, 18), rt({2, 4}, 19)});
    }});
    cases.push_back({"abs", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return mean_all(t, absolute(t, in[0]));
            },
            {rt({3, 5}, 20, 0.2, 1.0)});
    }});
    cases.push_back({"scale", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, scale(t, in[0], 1.7));
            },
            {rt({3, 5}, 21)});
    }});
    cases.push_back({"global_avg_pool_spatial", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, global_avg_pool_spatial(t, in[0]));
            },
            {rt({2, 3, 4, 4}, 22)});
    }});
    cases.push_back({"mean_over_channels", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, mean_over_channels(t, in[0]));
            },
            {rt({2, 3, 4, 4}, 23)});
    }});
    cases.push_back({"concat_channels", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                return scalarize(t, concat_channels(t, in[0], in[1]));
            },
            {rt({1, 2, 3, 3}, 24), rt({1, 3, 3, 3}, 25)});
    }});
    cases.push_back({"sum_all", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                auto y = mul(t, in[0], in[0]);
                return sum_all(t, y);
            },
            {rt({3, 4}, 26)});
    }});
    cases.push_back({"mean_all", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                auto y = mul(t, in[0], in[0]);
                return mean_all(t, y);
            },
            {rt({3, 4}, 27)});
    }});
    cases.push_back({"sft_apply", [=] {
        return gradient_check(
            [&](Tape<double>* t, std::vector<Tensor<double>>& in) {
                SftParams<double> p{in[1], in[2]};
                return scalarize(t, sft_apply(t, in[0], p));
            },
            {rt({1, 3, 4, 4}, 28), rt({1, 3, 4, 4}, 29, 0.1, 1.9), rt({1, 3, 4, 4}, 30)});
    }});

    for (Variant v : {Variant::sft, Variant::sft_dec, Variant::sft_fdec}) {
        cases.push_back({std::string("sft_params_") + variant_name(v), [v] {
            auto mp = detail::suite_model(v, 40 + uint64_t(v));
            return gradient_check(
                [&mp, v](Tape<double>* t, std::vector<Tensor<double>>& in) {
                    auto p = generate_sft_params(t, in[0], 0, mp, v);
                    auto y = sft_apply(t, in[1], p);
                    return mean_all(t, mul(t, y, y));
                },
                detail::with_params(mp, {rt({1, 4, 5, 5}, 41), rt({1, 6, 5, 5}, 42)}));
        }});
    }

    for (Variant v : {Variant::baseline, Variant::sft, Variant::sft_dec, Variant::sft_fdec}) {
        cases.push_back({std::string("resblock_") + variant_name(v), [v] {
            auto mp = detail::suite_model(v, 50 + uint64_t(v));
            const int cc = v == Variant::baseline ? 1 : 4;
            return gradient_check(
                [&mp, v](Tape<double>* t, std::vector<Tensor<double>>& in) {
                    auto y = conditioned_resblock(t, in[0], in[1], 0, mp, v);
                    return mean_all(t, mul(t, y, y));
                },
                detail::with_params(mp, {rt({1, 6, 4, 4}, 51), rt({1, cc, 4, 4}, 52)}));
        }});
    }

    cases.push_back({"dme_forward", [] {
        auto mp = detail::suite_model(Variant::sft_dec, 60);
        return gradient_check(
            [&mp](Tape<double>* t, std::vector<Tensor<double>>& in) {
                auto y = dme_forward(t, in[0], mp);
                return mean_all(t, mul(t, y, y));
            },
            detail::with_params(mp, {rt({1, 3, 8, 8}, 61)}));
    }});
    cases.push_back({"condition_forward", [] {
        auto mp = detail::suite_model(Variant::sft_dec, 62);
        return gradient_check(
            [&mp](Tape<double>* t, std::vector<Tensor<double>>& in) {
                auto y = condition_forward(t, in[0], mp);
                return mean_all(t, mul(t, y, y));
            },
            detail::with_params(mp, {rt({1, 1, 6, 6}, 63)}));
    }});

    for (Variant v : {Variant::baseline, Variant::sft, Variant::sft_dec, Variant::sft_fdec}) {
        cases.push_back({std::string("deblur_path_") + variant_name(v), [v] {
            auto mp = detail::suite_model(v, 70 + uint64_t(v));
            return gradient_check(
                [&mp](Tape<double>* t, std::vector<Tensor<double>>& in) {
                    auto r = full_forward<double>(t, in[0], MapSource::estimated, std::nullopt, mp);
                    return mean_all(t, mul(t, r.deblurred, r.deblurred));
                },
                detail::with_params(mp, {rt({1, 3, 8, 8}, 71, 0.0, 1.0)}));
        }});
    }

    cases.push_back({"stage3_objective", [] {
        auto mp = detail::suite_model(Variant::sft_dec, 80);
        auto blurry = rt({1, 3, 8, 8}, 81, 0.0, 1.0);
        // place the sharp target a fixed nonzero offset away from the
        // model's own output, so the L1 terms stay clear of their kink
        // under the finite-difference perturbations
        auto base = full_forward<double>(nullptr, blurry, MapSource::estimated, std::nullopt, mp);
        Tensor<double> sharp(base.deblurred.shape());
        for (int64_t i = 0; i < sharp.numel(); ++i)
            sharp[i] = base.deblurred[i] - (i % 2 ? 0.25 : -0.25);
        // the weight map is derived from ground truth and carries no
        // gradient, so it is captured rather than perturbed
        auto dm_gt = rt({1, 1, 8, 8}, 83, 0.1, 3.0);
        return gradient_check(
            [&mp, dm_gt](Tape<double>* t, std::vector<Tensor<double>>& in) {
                auto r = full_forward<double>(t, in[0], MapSource::estimated, std::nullopt, mp);
                auto l_df = loss_df(t, r.deblurred, in[1]);
                auto l_wd = loss_wd(t, r.deblurred, in[1], dm_gt);
                return composite_loss_stage3(t, l_df, l_wd, 0.9, 0.1);
            },
            detail::with_params(mp, {blurry, sharp}));
    }});

    if (include_corrupted) {
        // test fixture: an op whose recorded derivative is deliberately wrong
        cases.push_back({"corrupted_square_fixture", [] {
            return gradient_check(
                [](Tape<double>* t, std::vector<Tensor<double>>& in) {
                    Tensor<double> x = in[0];
                    Tensor<double> y(x.shape());
                    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * x[i];
                    if (t) {
                        y.mark_tracked();
                        t->record(
                            y, {x},
                            [t, x, y]() mutable {
                                const double* g = y.payload()->grad.data();
                                auto gx = t->grad_buffer(*x.payload());
                                for (int64_t i = 0; i < x.numel(); ++i)
                                    gx[i] += 2.05 * x[i] * g[i];
                            },
                            "bad_square");
                    }
                    return mean_all(t, y);
                },
                {rt({3, 3}, 90, 0.5, 1.0)});
        }});
    }
    return cases;
}

}  // namespace defocus
