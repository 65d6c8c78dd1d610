#pragma once

// Evaluation metrics, always computed in double regardless of model
// precision. SSIM uses the canonical parameterization: 11x11 Gaussian
// window with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 1, local
// statistics over fully-valid window positions, channels averaged.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "defocus/augment.hpp"
#include "defocus/blur.hpp"
#include "defocus/common.hpp"
#include "defocus/model.hpp"

namespace defocus {

inline double mae(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DataError("mae: size mismatch");
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
    return s / double(a.size());
}

inline double mse(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw DataError("mse: size mismatch");
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        s += d * d;
    }
    return s / double(a.size());
}

inline double mae(const DefocusMapF& a, const DefocusMapF& b) {
    if (a.width != b.width || a.height != b.height)
        throw DataError("mae: defocus map dims mismatch");
    return mae(std::span<const float>(a.sigma), std::span<const float>(b.sigma));
}

inline double mse(const DefocusMapF& a, const DefocusMapF& b) {
    if (a.width != b.width || a.height != b.height)
        throw DataError("mse: defocus map dims mismatch");
    return mse(std::span<const float>(a.sigma), std::span<const float>(b.sigma));
}

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(peak^2 / MSE) over all channels, capped at 100 dB.
inline double psnr(std::span<const float> a, std::span<const float> b, double peak = 1.0) {
    const double m = mse(a, b);
    if (m <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

inline double psnr(const ImageF& a, const ImageF& b, double peak = 1.0) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DataError("psnr: image dims mismatch");
    return psnr(std::span<const float>(a.values), std::span<const float>(b.values), peak);
}

namespace detail {

inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> win(121);
        double sum = 0;
        for (int y = -5; y <= 5; ++y)
            for (int x = -5; x <= 5; ++x) {
                const double v = std::exp(-(y * y + x * x) / (2.0 * 1.5 * 1.5));
                win[size_t(y + 5) * 11 + (x + 5)] = v;
                sum += v;
            }
        for (auto& v : win) v /= sum;
        return win;
    }();
    return w;
}

}  // namespace detail

/// Mean local SSIM per channel, then averaged over channels.
inline double ssim(const ImageF& a, const ImageF& b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw DataError("ssim: image dims mismatch");
    if (a.width < 11 || a.height < 11)
        throw DataError("ssim: image " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                        " is smaller than the 11x11 window");
    constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
    constexpr double kC2 = 0.03 * 0.03;
    const auto& win = detail::ssim_window();
    const int h = a.height, w = a.width;
    double channel_sum = 0;
    for (int c = 0; c < a.channels; ++c) {
        const float* pa = a.values.data() + int64_t(c) * a.plane();
        const float* pb = b.values.data() + int64_t(c) * b.plane();
        double acc = 0;
        int64_t count = 0;
        for (int y = 5; y < h - 5; ++y)
            for (int x = 5; x < w - 5; ++x) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int dy = -5; dy <= 5; ++dy)
                    for (int dx = -5; dx <= 5; ++dx) {
                        const double wv = win[size_t(dy + 5) * 11 + (dx + 5)];
                        const double va = pa[int64_t(y + dy) * w + (x + dx)];
                        const double vb = pb[int64_t(y + dy) * w + (x + dx)];
                        mx += wv * va;
                        my += wv * vb;
                        mxx += wv * va * va;
                        myy += wv * vb * vb;
                        mxy += wv * va * vb;
                    }
                const double vx = mxx - mx * mx;
                const double vy = myy - my * my;
                const double cov = mxy - mx * my;
                acc += ((2 * mx * my + kC1) * (2 * cov + kC2)) /
                       ((mx * mx + my * my + kC1) * (vx + vy + kC2));
                ++count;
            }
        channel_sum += acc / double(count);
    }
    return channel_sum / a.channels;
}

struct EvalRecord {
    std::string id;
    double psnr = 0, ssim = 0, mae_dm = 0, mse_dm = 0;
};

struct EvalReport {
    std::string checkpoint_id, dataset_id, variant;
    std::vector<EvalRecord> rows;
    double mean_psnr = 0, mean_ssim = 0, mean_mae = 0, mean_mse = 0;

    void compute_means() {
        mean_psnr = mean_ssim = mean_mae = mean_mse = 0;
        for (const auto& r : rows) {
            mean_psnr += r.psnr;
            mean_ssim += r.ssim;
            mean_mae += r.mae_dm;
            mean_mse += r.mse_dm;
        }
        const double n = rows.empty() ? 1.0 : double(rows.size());
        mean_psnr /= n;
        mean_ssim /= n;
        mean_mae /= n;
        mean_mse /= n;
    }
};

namespace detail {

inline ImageF tensor_to_image(const Tensor<float>& t) {
    ImageF img(t.dim(2), t.dim(3), t.dim(1));
    std::copy(t.values().begin(), t.values().end(), img.values.begin());
    return img;
}

inline DefocusMapF tensor_to_map(const Tensor<float>& t) {
    DefocusMapF m(t.dim(2), t.dim(3));
    std::copy(t.values().begin(), t.values().end(), m.sigma.begin());
    return m;
}

inline Tensor<float> image_to_tensor(const ImageF& img) {
    return Tensor<float>({1, img.channels, img.height, img.width},
                         std::vector<float>(img.values.begin(), img.values.end()));
}

inline Tensor<float> map_to_tensor(const DefocusMapF& m) {
    return Tensor<float>({1, 1, m.height, m.width},
                         std::vector<float>(m.sigma.begin(), m.sigma.end()));
}

}  // namespace detail

/// Runs inference (estimated map, clamp on) over every triplet and collects
/// all four metrics. Parallelizes across images; records are written by
/// index, so the report does not depend on thread count.
inline EvalReport evaluate(const std::vector<Triplet>& dataset, const ModelParams<float>& mp,
                           const std::string& checkpoint_id, const std::string& dataset_id) {
    if (dataset.empty()) throw DataError("evaluate: empty dataset");
    EvalReport rep;
    rep.checkpoint_id = checkpoint_id;
    rep.dataset_id = dataset_id;
    rep.variant = variant_name(mp.variant);
    rep.rows.resize(dataset.size());
    parallel_for(int64_t(dataset.size()), [&](int64_t i) {
        const Triplet& t = dataset[size_t(i)];
        auto blurry = detail::image_to_tensor(t.blurry);
        auto r = full_forward<float>(nullptr, blurry, MapSource::estimated, std::nullopt, mp,
                                     /*clamp_output=*/true);
        EvalRecord rec;
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", int(i));
        rec.id = buf;
        const ImageF out = detail::tensor_to_image(r.deblurred);
        rec.psnr = psnr(out, t.sharp);
        rec.ssim = ssim(out, t.sharp);
        const DefocusMapF dm_e = detail::tensor_to_map(r.map_used);
        rec.mae_dm = mae(dm_e, t.map);
        rec.mse_dm = mse(dm_e, t.map);
        rep.rows[size_t(i)] = rec;
    });
    rep.compute_means();
    return rep;
}

}  // namespace defocus
