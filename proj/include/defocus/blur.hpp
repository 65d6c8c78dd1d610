#pragma once

// Blur formation model: I_b = K * I_c + N with an isotropic Gaussian PSF
// whose sigma varies per pixel (destination-gather semantics, reflected
// borders). Two routes are provided: a per-pixel gather oracle and a fast
// quantized approximation that blurs at a fixed set of sigma levels and
// interpolates per pixel.
//
// Horizontal taps are accumulated as matched +-dx pairs so that blurring a
// horizontally flipped image with a flipped map is exactly the flip of the
// blurred result; vertical taps are paired the same way.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "defocus/common.hpp"
#include "defocus/rng.hpp"

namespace defocus {

/// Planar float image, channel-major ([c][y][x]), values in [0,1].
struct ImageF {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> values;

    ImageF() = default;
    ImageF(int h, int w, int c) : height(h), width(w), channels(c), values(size_t(h) * w * c, 0.f) {}

    float& at(int c, int y, int x) { return values[(size_t(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return values[(size_t(c) * height + y) * width + x]; }
    int64_t plane() const { return int64_t(height) * width; }
};

/// Per-pixel blur magnitude, Gaussian sigma in pixels.
struct DefocusMapF {
    int height = 0;
    int width = 0;
    std::vector<float> sigma;

    DefocusMapF() = default;
    DefocusMapF(int h, int w) : height(h), width(w), sigma(size_t(h) * w, 0.f) {}

    float& at(int y, int x) { return sigma[size_t(y) * width + x]; }
    float at(int y, int x) const { return sigma[size_t(y) * width + x]; }
};

enum class MapModel { gaussian_field, tilted_plane };

struct BlurConfig {
    double sigma_max = 3.0;
    double noise_sigma = 0.002;
    int quantization_levels = 16;
    MapModel map_model = MapModel::gaussian_field;
    uint64_t seed = 0;

    void validate() const {
        if (!(sigma_max > 0)) throw ConfigError("sigma_max must be > 0");
        if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
        if (quantization_levels < 2) throw ConfigError("quantization_levels must be >= 2");
    }
};

// sigma below this is treated as no blur (sub-pixel Gaussian support)
inline constexpr double kDeltaSigma = 0.3;

struct Kernel1d {
    int radius = 0;
    std::vector<double> w;  // 2*radius+1 entries, sum exactly normalized to 1
};

inline Kernel1d gaussian_kernel_1d(double sigma) {
    if (sigma < 0) throw DataError("gaussian kernel: negative sigma " + std::to_string(sigma));
    Kernel1d k;
    if (sigma < kDeltaSigma) {
        k.radius = 0;
        k.w = {1.0};
        return k;
    }
    k.radius = static_cast<int>(std::ceil(3.0 * sigma));
    k.w.resize(size_t(2 * k.radius + 1));
    double sum = 0;
    for (int d = -k.radius; d <= k.radius; ++d) {
        const double v = std::exp(-(double(d) * d) / (2.0 * sigma * sigma));
        k.w[size_t(d + k.radius)] = v;
        sum += v;
    }
    for (auto& v : k.w) v /= sum;
    return k;
}

struct Kernel2d {
    int radius = 0;
    std::vector<double> w;  // (2r+1)^2, normalized to sum 1

    double at(int dy, int dx) const {
        return w[size_t(dy + radius) * (2 * radius + 1) + (dx + radius)];
    }
};

/// Isotropic Gaussian PSF: radius ceil(3*sigma), delta kernel below the
/// sub-pixel threshold, explicitly normalized to sum 1.
inline Kernel2d gaussian_kernel(double sigma) {
    if (sigma < 0) throw DataError("gaussian kernel: negative sigma " + std::to_string(sigma));
    Kernel2d k;
    if (sigma < kDeltaSigma) {
        k.radius = 0;
        k.w = {1.0};
        return k;
    }
    k.radius = static_cast<int>(std::ceil(3.0 * sigma));
    const int side = 2 * k.radius + 1;
    k.w.resize(size_t(side) * side);
    double sum = 0;
    for (int dy = -k.radius; dy <= k.radius; ++dy)
        for (int dx = -k.radius; dx <= k.radius; ++dx) {
            const double v = std::exp(-(double(dy) * dy + double(dx) * dx) / (2.0 * sigma * sigma));
            k.w[size_t(dy + k.radius) * side + (dx + k.radius)] = v;
            sum += v;
        }
    for (auto& v : k.w) v /= sum;
    return k;
}

namespace detail {

// symmetric border reflection with edge duplication; commutes with flips
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

// horizontal then vertical 1-d pass, +-d taps paired, double accumulation
inline void separable_blur_plane(const float* src, float* dst, int h, int w, const Kernel1d& k) {
    if (k.radius == 0) {
        for (int64_t i = 0; i < int64_t(h) * w; ++i) dst[i] = src[i];
        return;
    }
    const int r = k.radius;
    std::vector<double> tmp(size_t(h) * w);
    for (int y = 0; y < h; ++y) {
        const float* row = src + int64_t(y) * w;
        double* trow = tmp.data() + int64_t(y) * w;
        for (int x = 0; x < w; ++x) {
            double s = k.w[size_t(r)] * row[x];
            for (int d = 1; d <= r; ++d)
                s += k.w[size_t(r + d)] *
                     (double(row[reflect_index(x - d, w)]) + double(row[reflect_index(x + d, w)]));
            trow[x] = s;
        }
    }
    for (int y = 0; y < h; ++y) {
        float* drow = dst + int64_t(y) * w;
        for (int x = 0; x < w; ++x) {
            double s = k.w[size_t(r)] * tmp[size_t(y) * w + x];
            for (int d = 1; d <= r; ++d)
                s += k.w[size_t(r + d)] * (tmp[size_t(reflect_index(y - d, h)) * w + x] +
                                           tmp[size_t(reflect_index(y + d, h)) * w + x]);
            drow[x] = static_cast<float>(s);
        }
    }
}

inline void add_noise_and_clamp(ImageF& img, double noise_sigma, uint64_t seed) {
    if (noise_sigma > 0) {
        Rng rng(seed);
        for (auto& v : img.values) v = static_cast<float>(v + noise_sigma * rng.normal());
    }
    for (auto& v : img.values) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace detail

/// Reference formation model: each destination pixel gathers through the
/// kernel of its own sigma. Quadratic in the kernel radius per pixel; meant
/// for verification and small images.
inline ImageF apply_blur_oracle(const ImageF& img, const DefocusMapF& map, double noise_sigma,
                                uint64_t seed) {
    if (img.height != map.height || img.width != map.width)
        throw DataError("blur: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " does not match map " + std::to_string(map.width) + "x" +
                        std::to_string(map.height));
    const int h = img.height, w = img.width;
    ImageF out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Kernel2d k = gaussian_kernel(map.at(y, x));
            const int r = k.radius;
            for (int c = 0; c < img.channels; ++c) {
                double s = 0;
                for (int dy = -r; dy <= r; ++dy) {
                    const int sy = detail::reflect_index(y + dy, h);
                    s += k.at(dy, 0) * img.at(c, sy, x);
                    for (int dx = 1; dx <= r; ++dx)
                        s += k.at(dy, dx) * (double(img.at(c, sy, detail::reflect_index(x - dx, w))) +
                                             double(img.at(c, sy, detail::reflect_index(x + dx, w))));
                }
                out.at(c, y, x) = static_cast<float>(s);
            }
        }
    detail::add_noise_and_clamp(out, noise_sigma, seed);
    return out;
}

/// Fast route: blur at quantization_levels sigma values spanning
/// [0, sigma_max] with separable whole-image convolutions, then linearly
/// interpolate between the two bracketing levels per pixel.
inline ImageF apply_spatially_varying_blur(const ImageF& img, const DefocusMapF& map,
                                           const BlurConfig& cfg) {
    cfg.validate();
    if (img.height != map.height || img.width != map.width)
        throw DataError("blur: image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " does not match map " + std::to_string(map.width) + "x" +
                        std::to_string(map.height));
    const int h = img.height, w = img.width, ch = img.channels;
    const int levels = cfg.quantization_levels;
    const int64_t plane = img.plane();

    std::vector<ImageF> stack(static_cast<size_t>(levels));
    for (int i = 0; i < levels; ++i) {
        const double sigma = cfg.sigma_max * double(i) / double(levels - 1);
        const Kernel1d k = gaussian_kernel_1d(sigma);
        stack[size_t(i)] = ImageF(h, w, ch);
        for (int c = 0; c < ch; ++c)
            detail::separable_blur_plane(img.values.data() + c * plane,
                                         stack[size_t(i)].values.data() + c * plane, h, w, k);
    }

    ImageF out(h, w, ch);
    const double step = cfg.sigma_max / double(levels - 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = std::clamp(double(map.at(y, x)), 0.0, cfg.sigma_max);
            if (s < kDeltaSigma) s = 0.0;  // same no-blur rule as the kernel family
            const double t = s / step;
            int i0 = static_cast<int>(t);
            if (i0 > levels - 2) i0 = levels - 2;
            double frac = t - i0;
            // The kernel family is constant (a delta) below the no-blur
            // threshold, so when the lower bracket level sits inside that
            // flat region the interpolation ramps from the threshold, not
            // from the level's nominal sigma. Keeps the map continuous in
            // sigma and exact at grid levels.
            const double lo = i0 * step;
            if (s > 0.0 && lo < kDeltaSigma) {
                const double hi = (i0 + 1) * step;
                frac = hi > kDeltaSigma ? std::max(0.0, (s - kDeltaSigma) / (hi - kDeltaSigma)) : 0.0;
            }
            for (int c = 0; c < ch; ++c) {
                const float a = stack[size_t(i0)].at(c, y, x);
                if (frac == 0.0) {
                    out.at(c, y, x) = a;
                } else {
                    const float b = stack[size_t(i0) + 1].at(c, y, x);
                    out.at(c, y, x) = static_cast<float>((1.0 - frac) * a + frac * b);
                }
            }
        }
    detail::add_noise_and_clamp(out, cfg.noise_sigma, mix_seed(cfg.seed, 0x6e6f697365ULL));
    return out;
}

}  // namespace defocus
