#pragma once

// Training losses: mean-reduced L1 for the defocus map and the deblurred
// image, and a defocus-weighted squared loss where each pixel's residual is
// scaled by its ground-truth blur level normalized to mean 1 per sample.

#include "defocus/ops.hpp"

namespace defocus {

namespace detail {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!shape_eq(a.shape(), b.shape()))
        throw InternalError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

}  // namespace detail

/// Mean absolute error between estimated and ground-truth defocus maps.
template <typename T>
Tensor<T> loss_dme(Tape<T>* tape, const Tensor<T>& dm_e, const Tensor<T>& dm_gt) {
    detail::check_same_shape(dm_e, dm_gt, "loss_dme");
    return mean_all(tape, absolute(tape, sub(tape, dm_e, dm_gt)));
}

/// Mean absolute error between the deblurred result and the sharp target.
template <typename T>
Tensor<T> loss_df(Tape<T>* tape, const Tensor<T>& i_df, const Tensor<T>& i_gt) {
    detail::check_same_shape(i_df, i_gt, "loss_df");
    return mean_all(tape, absolute(tape, sub(tape, i_df, i_gt)));
}

/// W = dm / mean(dm), with the mean taken per sample over its own H x W.
/// The map is ground truth, so the result carries no gradient.
template <typename T>
Tensor<T> weight_map(const Tensor<T>& dm_gt) {
    if (dm_gt.ndim() != 4 || dm_gt.dim(1) != 1)
        throw InternalError("weight_map expects [N,1,H,W], got " + shape_str(dm_gt.shape()));
    const int n = dm_gt.dim(0);
    const int64_t hw = int64_t(dm_gt.dim(2)) * dm_gt.dim(3);
    Tensor<T> w(dm_gt.shape());
    for (int ni = 0; ni < n; ++ni) {
        const T* src = dm_gt.data() + ni * hw;
        T sum = T(0);
        for (int64_t i = 0; i < hw; ++i) sum += src[i];
        const T mean = sum / static_cast<T>(hw);
        if (!(mean > T(0)))
            throw DataError("weight_map: defocus map of sample " + std::to_string(ni) +
                            " is all zero (no blur anywhere)");
        T* dst = w.data() + ni * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] / mean;
    }
    return w;
}

/// Mean over all elements of (W (.) (i_df - i_gt))^2, the single-channel
/// weight broadcast across the color channels.
template <typename T>
Tensor<T> loss_wd(Tape<T>* tape, const Tensor<T>& i_df, const Tensor<T>& i_gt,
                  const Tensor<T>& dm_gt) {
    detail::check_same_shape(i_df, i_gt, "loss_wd");
    const Tensor<T> w = weight_map(dm_gt);
    auto wd = mul(tape, w, sub(tape, i_df, i_gt));
    return mean_all(tape, mul(tape, wd, wd));
}

/// Stage 1/2 objective: lambda1 * L_dme + lambda2 * L_df.
template <typename T>
Tensor<T> composite_loss_stage12(Tape<T>* tape, const Tensor<T>& l_dme, const Tensor<T>& l_df,
                                 T lambda1, T lambda2) {
    return add(tape, scale(tape, l_dme, lambda1), scale(tape, l_df, lambda2));
}

/// Stage 3 objective: lambda2 * L_df + lambda3 * L_wd.
template <typename T>
Tensor<T> composite_loss_stage3(Tape<T>* tape, const Tensor<T>& l_df, const Tensor<T>& l_wd,
                                T lambda2, T lambda3) {
    return add(tape, scale(tape, l_df, lambda2), scale(tape, l_wd, lambda3));
}

}  // namespace defocus
