#pragma once

// Geometric augmentation: one random square crop plus flips and quarter
// rotations, applied with the same draw to the sharp image, the blurry
// image, and the defocus map. Blur magnitudes are untouched by geometry,
// so map values pass through unchanged.

#include "defocus/blur.hpp"
#include "defocus/rng.hpp"

namespace defocus {

struct Triplet {
    ImageF sharp;
    ImageF blurry;
    DefocusMapF map;
};

struct AugmentDraw {
    int y0 = 0, x0 = 0;
    int crop = 0;  // square side
    bool hflip = false, vflip = false;
    int rot_quarter = 0;  // clockwise 90-degree turns, 0..3
};

inline AugmentDraw draw_augment(Rng& rng, int height, int width, int crop, bool flips,
                                bool rotations) {
    if (crop > height || crop > width)
        throw DataError("augment: crop " + std::to_string(crop) + " exceeds image " +
                        std::to_string(width) + "x" + std::to_string(height));
    AugmentDraw d;
    d.crop = crop;
    d.y0 = static_cast<int>(rng.uniform_int(height - crop + 1));
    d.x0 = static_cast<int>(rng.uniform_int(width - crop + 1));
    if (flips) {
        d.hflip = rng.coin();
        d.vflip = rng.coin();
    }
    if (rotations) d.rot_quarter = static_cast<int>(rng.uniform_int(4));
    return d;
}

namespace detail {

// crop + flips + rotation for one plane; n is the square crop side
inline void transform_plane(const float* src, int height, int width, const AugmentDraw& d,
                            float* dst) {
    const int n = d.crop;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int sy = y, sx = x;
            for (int r = 0; r < (d.rot_quarter & 3); ++r) {  // inverse of clockwise rotation
                const int t = sy;
                sy = n - 1 - sx;
                sx = t;
            }
            if (d.vflip) sy = n - 1 - sy;
            if (d.hflip) sx = n - 1 - sx;
            dst[int64_t(y) * n + x] = src[int64_t(d.y0 + sy) * width + (d.x0 + sx)];
        }
}

}  // namespace detail

inline Triplet apply_augment(const Triplet& t, const AugmentDraw& d) {
    const int n = d.crop;
    Triplet out;
    out.sharp = ImageF(n, n, t.sharp.channels);
    out.blurry = ImageF(n, n, t.blurry.channels);
    out.map = DefocusMapF(n, n);
    for (int c = 0; c < t.sharp.channels; ++c)
        detail::transform_plane(t.sharp.values.data() + c * t.sharp.plane(), t.sharp.height,
                                t.sharp.width, d, out.sharp.values.data() + int64_t(c) * n * n);
    for (int c = 0; c < t.blurry.channels; ++c)
        detail::transform_plane(t.blurry.values.data() + c * t.blurry.plane(), t.blurry.height,
                                t.blurry.width, d, out.blurry.values.data() + int64_t(c) * n * n);
    detail::transform_plane(t.map.sigma.data(), t.map.height, t.map.width, d, out.map.sigma.data());
    return out;
}

inline Triplet augment(const Triplet& t, uint64_t seed, int crop, bool flips, bool rotations) {
    Rng rng(seed);
    return apply_augment(t, draw_augment(rng, t.sharp.height, t.sharp.width, crop, flips, rotations));
}

}  // namespace defocus
