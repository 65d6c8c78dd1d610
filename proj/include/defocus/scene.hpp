#pragma once

// Procedural training content. The sharp images layer gradients, rectangles,
// circles and stripe textures so there is recoverable high-frequency detail;
// the defocus maps come from a smoothed random field or a tilted focal plane
// with an in-focus line.

#include <algorithm>
#include <cmath>

#include "defocus/blur.hpp"
#include "defocus/rng.hpp"

namespace defocus {

inline DefocusMapF generate_defocus_map(int width, int height, const BlurConfig& cfg) {
    cfg.validate();
    DefocusMapF map(height, width);
    Rng rng(mix_seed(cfg.seed, 0x6d6170ULL));
    if (cfg.map_model == MapModel::gaussian_field) {
        std::vector<float> noise(size_t(height) * width);
        for (auto& v : noise) v = static_cast<float>(rng.uniform());
        const double smooth_sigma = std::max(2.0, std::min(width, height) / 8.0);
        const Kernel1d k = gaussian_kernel_1d(smooth_sigma);
        std::vector<float> smooth(noise.size());
        detail::separable_blur_plane(noise.data(), smooth.data(), height, width, k);
        float lo = smooth[0], hi = smooth[0];
        for (float v : smooth) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double range = double(hi) - double(lo);
        for (size_t i = 0; i < smooth.size(); ++i)
            map.sigma[i] = range < 1e-12
                               ? static_cast<float>(cfg.sigma_max / 2)
                               : static_cast<float>((smooth[i] - lo) / range * cfg.sigma_max);
    } else {
        // plane through zero inside the frame, so an in-focus line exists
        const double x0 = rng.uniform(0.15, 0.85);
        const double y0 = rng.uniform(0.15, 0.85);
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double slope = rng.uniform(1.0, 2.5);
        const double cx = std::cos(theta), cy = std::sin(theta);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double xn = width > 1 ? double(x) / (width - 1) : 0.0;
                const double yn = height > 1 ? double(y) / (height - 1) : 0.0;
                const double p = slope * (cx * (xn - x0) + cy * (yn - y0));
                map.at(y, x) = static_cast<float>(cfg.sigma_max * std::min(std::abs(p), 1.0));
            }
    }
    return map;
}

inline ImageF generate_sharp_image(int width, int height, uint64_t seed) {
    ImageF img(height, width, 3);
    Rng rng(seed);

    // base gradient between two random colors
    double base[2][3];
    for (auto& c : base)
        for (double& v : c) v = rng.uniform();
    const double ga = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double gx = std::cos(ga), gy = std::sin(ga);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double xn = width > 1 ? double(x) / (width - 1) : 0.0;
            const double yn = height > 1 ? double(y) / (height - 1) : 0.0;
            const double t = std::clamp(0.5 + 0.5 * (gx * (xn - 0.5) + gy * (yn - 0.5)) * 2.0, 0.0, 1.0);
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(base[0][c] + t * (base[1][c] - base[0][c]));
        }

    const auto blend = [&](int c, int y, int x, double color, double alpha) {
        img.at(c, y, x) = static_cast<float>((1 - alpha) * img.at(c, y, x) + alpha * color);
    };

    const int rects = 4 + int(rng.uniform_int(5));
    for (int i = 0; i < rects; ++i) {
        const int rw = 2 + int(rng.uniform_int(std::max(1, width / 2)));
        const int rh = 2 + int(rng.uniform_int(std::max(1, height / 2)));
        const int x0 = int(rng.uniform_int(std::max(1, width - rw)));
        const int y0 = int(rng.uniform_int(std::max(1, height - rh)));
        double col[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        const double alpha = rng.uniform(0.6, 1.0);
        for (int y = y0; y < std::min(height, y0 + rh); ++y)
            for (int x = x0; x < std::min(width, x0 + rw); ++x)
                for (int c = 0; c < 3; ++c) blend(c, y, x, col[c], alpha);
    }

    const int circles = 3 + int(rng.uniform_int(4));
    for (int i = 0; i < circles; ++i) {
        const double cx = rng.uniform(0.0, width);
        const double cy = rng.uniform(0.0, height);
        const double r = rng.uniform(0.05, 0.25) * std::min(width, height);
        double col[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
        const double alpha = rng.uniform(0.6, 1.0);
        const int ylo = std::max(0, int(cy - r) - 1), yhi = std::min(height - 1, int(cy + r) + 1);
        const int xlo = std::max(0, int(cx - r) - 1), xhi = std::min(width - 1, int(cx + r) + 1);
        for (int y = ylo; y <= yhi; ++y)
            for (int x = xlo; x <= xhi; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                    for (int c = 0; c < 3; ++c) blend(c, y, x, col[c], alpha);
    }

    // two stripe layers keep high-frequency content everywhere
    for (int layer = 0; layer < 2; ++layer) {
        const double phi = rng.uniform(0.0, 3.14159265358979323846);
        const double freq = rng.uniform(2.0 * 3.14159265358979323846 / 10.0,
                                        2.0 * 3.14159265358979323846 / 4.0);
        const double amp = rng.uniform(0.08, 0.2);
        const double phase0 = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double sx = std::cos(phi), sy = std::sin(phi);
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const double v = amp * std::sin(freq * (sx * x + sy * y) + phase0);
                for (int c = 0; c < 3; ++c)
                    img.at(c, y, x) = static_cast<float>(img.at(c, y, x) + v);
            }
    }

    for (auto& v : img.values) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

}  // namespace defocus
