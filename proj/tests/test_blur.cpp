#include <doctest.h>

#include <cmath>
#include <vector>

#include "defocus/blur.hpp"
#include "defocus/scene.hpp"

using namespace defocus;

namespace {

int reflect_ref(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = n - (i - n) - 1;
    }
    return i;
}

// Independent brute-force gather: builds kernels inline, plain loop order.
ImageF brute_blur(const ImageF& img, const DefocusMapF& map) {
    ImageF out(img.height, img.width, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double sigma = map.at(y, x);
            int r = 0;
            if (sigma >= 0.3) r = int(std::ceil(3.0 * sigma));
            std::vector<double> k(size_t(2 * r + 1) * (2 * r + 1), 1.0);
            if (r > 0) {
                double sum = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) {
                        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                        k[size_t(dy + r) * (2 * r + 1) + dx + r] = v;
                        sum += v;
                    }
                for (auto& v : k) v /= sum;
            }
            for (int c = 0; c < img.channels; ++c) {
                double s = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx)
                        s += k[size_t(dy + r) * (2 * r + 1) + dx + r] *
                             img.at(c, reflect_ref(y + dy, img.height), reflect_ref(x + dx, img.width));
                out.at(c, y, x) = float(s);
            }
        }
    return out;
}

ImageF random_image(int h, int w, uint64_t seed) {
    ImageF img(h, w, 3);
    Rng rng(seed);
    for (auto& v : img.values) v = float(rng.uniform());
    return img;
}

DefocusMapF random_map(int h, int w, double sigma_max, uint64_t seed) {
    DefocusMapF m(h, w);
    Rng rng(seed);
    for (auto& v : m.sigma) v = float(rng.uniform(0.0, sigma_max));
    return m;
}

ImageF hflip(const ImageF& img) {
    ImageF out(img.height, img.width, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
    return out;
}

DefocusMapF hflip(const DefocusMapF& m) {
    DefocusMapF out(m.height, m.width);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
    return out;
}

double mse(const ImageF& a, const ImageF& b) {
    double s = 0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = double(a.values[i]) - b.values[i];
        s += d * d;
    }
    return s / double(a.values.size());
}

double psnr_db(const ImageF& a, const ImageF& b) { return 10.0 * std::log10(1.0 / mse(a, b)); }

}  // namespace

TEST_CASE("gaussian_kernel basics") {
    auto delta = gaussian_kernel(0.0);
    CHECK(delta.radius == 0);
    CHECK(delta.w.size() == 1);
    CHECK(delta.w[0] == 1.0);

    for (double sigma : {0.5, 1.0, 2.3, 3.0}) {
        auto k = gaussian_kernel(sigma);
        CHECK(k.radius == int(std::ceil(3 * sigma)));
        double sum = 0;
        for (double v : k.w) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-7);
    }

    auto k1 = gaussian_kernel(1.0);
    CHECK(k1.at(0, 0) / k1.at(0, 1) == doctest::Approx(std::exp(0.5)).epsilon(1e-9));

    CHECK_THROWS_AS(gaussian_kernel(-0.1), DataError);
}

TEST_CASE("oracle blur with zero map is the exact identity") {
    auto img = random_image(9, 13, 1);
    DefocusMapF map(9, 13);
    auto out = apply_blur_oracle(img, map, 0.0, 7);
    for (size_t i = 0; i < img.values.size(); ++i) CHECK(out.values[i] == img.values[i]);
}

TEST_CASE("oracle blur keeps constant images constant") {
    ImageF img(12, 12, 3);
    for (auto& v : img.values) v = 0.42f;
    auto map = random_map(12, 12, 3.0, 3);
    auto out = apply_blur_oracle(img, map, 0.0, 7);
    for (float v : out.values) CHECK(std::abs(v - 0.42f) < 1e-6);
}

TEST_CASE("oracle blur matches the independent brute-force gather") {
    auto img = random_image(16, 16, 11);
    auto map = random_map(16, 16, 3.0, 12);
    auto a = apply_blur_oracle(img, map, 0.0, 0);
    auto b = brute_blur(img, map);
    for (size_t i = 0; i < a.values.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) < 1e-6);
}

TEST_CASE("oracle blur rejects size mismatch") {
    auto img = random_image(8, 8, 1);
    DefocusMapF map(8, 9);
    CHECK_THROWS_AS(apply_blur_oracle(img, map, 0.0, 0), DataError);
}

TEST_CASE("fast blur at exact quantization levels matches the oracle") {
    BlurConfig cfg;
    cfg.noise_sigma = 0.0;
    auto img = random_image(20, 20, 21);
    for (int level : {0, 3, 9, 15}) {
        const double sigma = cfg.sigma_max * level / (cfg.quantization_levels - 1);
        DefocusMapF map(20, 20);
        for (auto& v : map.sigma) v = float(sigma);
        auto fast = apply_spatially_varying_blur(img, map, cfg);
        auto ref = apply_blur_oracle(img, map, 0.0, 0);
        double worst = 0;
        for (size_t i = 0; i < fast.values.size(); ++i)
            worst = std::max(worst, std::abs(double(fast.values[i]) - ref.values[i]));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("fast blur with zero map is a bit-exact identity") {
    BlurConfig cfg;
    cfg.noise_sigma = 0.0;
    auto img = random_image(17, 23, 31);
    DefocusMapF map(17, 23);
    auto out = apply_spatially_varying_blur(img, map, cfg);
    for (size_t i = 0; i < img.values.size(); ++i) CHECK(out.values[i] == img.values[i]);
}

TEST_CASE("fast blur stays within 0.02 of the gather oracle") {
    double worst = 0;
    for (uint64_t seed = 0; seed < 24; ++seed) {
        BlurConfig cfg;
        cfg.noise_sigma = 0.0;
        cfg.seed = seed;
        cfg.map_model = (seed % 2) ? MapModel::tilted_plane : MapModel::gaussian_field;
        auto img = generate_sharp_image(32, 32, mix_seed(seed, 1));
        auto map = generate_defocus_map(32, 32, cfg);
        auto fast = apply_spatially_varying_blur(img, map, cfg);
        auto ref = apply_blur_oracle(img, map, 0.0, 0);
        for (size_t i = 0; i < fast.values.size(); ++i)
            worst = std::max(worst, std::abs(double(fast.values[i]) - ref.values[i]));
    }
    CHECK(worst < 0.02);
}

TEST_CASE("doubling a constant blur level can only lower PSNR") {
    auto img = generate_sharp_image(32, 32, 5);
    BlurConfig cfg;
    cfg.noise_sigma = 0.0;
    for (double s1 : {0.5, 0.75, 1.0, 1.5}) {
        DefocusMapF m1(32, 32), m2(32, 32);
        for (auto& v : m1.sigma) v = float(s1);
        for (auto& v : m2.sigma) v = float(2 * s1);
        const double p1 = psnr_db(apply_spatially_varying_blur(img, m1, cfg), img);
        const double p2 = psnr_db(apply_spatially_varying_blur(img, m2, cfg), img);
        CHECK(p2 <= p1 + 0.1);
    }
}

TEST_CASE("horizontal flip symmetry is exact for both blur routes") {
    auto img = random_image(18, 22, 41);
    auto map = random_map(18, 22, 3.0, 42);
    auto fimg = hflip(img);
    auto fmap = hflip(map);

    auto a = hflip(apply_blur_oracle(img, map, 0.0, 0));
    auto b = apply_blur_oracle(fimg, fmap, 0.0, 0);
    for (size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);

    BlurConfig cfg;
    cfg.noise_sigma = 0.0;
    auto c = hflip(apply_spatially_varying_blur(img, map, cfg));
    auto d = apply_spatially_varying_blur(fimg, fmap, cfg);
    for (size_t i = 0; i < c.values.size(); ++i) CHECK(c.values[i] == d.values[i]);
}

TEST_CASE("defocus maps stay in range and are seed-deterministic") {
    for (MapModel model : {MapModel::gaussian_field, MapModel::tilted_plane}) {
        BlurConfig cfg;
        cfg.map_model = model;
        cfg.seed = 77;
        auto a = generate_defocus_map(24, 20, cfg);
        auto b = generate_defocus_map(24, 20, cfg);
        CHECK(a.sigma == b.sigma);
        for (float v : a.sigma) {
            CHECK(v >= 0.0f);
            CHECK(v <= float(cfg.sigma_max));
        }
    }
}

TEST_CASE("tilted_plane maps contain an in-focus region across 100 seeds") {
    BlurConfig cfg;
    cfg.map_model = MapModel::tilted_plane;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        cfg.seed = seed;
        auto m = generate_defocus_map(64, 64, cfg);
        float lo = m.sigma[0];
        for (float v : m.sigma) lo = std::min(lo, v);
        CHECK(lo < 0.05f * float(cfg.sigma_max));
    }
}

TEST_CASE("sharp images are deterministic, bounded, and textured") {
    auto a = generate_sharp_image(32, 32, 5);
    auto b = generate_sharp_image(32, 32, 5);
    CHECK(a.values == b.values);

    double worst_lap = 1e9;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        auto img = generate_sharp_image(32, 32, seed);
        for (float v : img.values) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
        double lap = 0;
        int64_t count = 0;
        for (int c = 0; c < 3; ++c)
            for (int y = 1; y < 31; ++y)
                for (int x = 1; x < 31; ++x) {
                    lap += std::abs(4.0 * img.at(c, y, x) - img.at(c, y - 1, x) - img.at(c, y + 1, x) -
                                    img.at(c, y, x - 1) - img.at(c, y, x + 1));
                    ++count;
                }
        worst_lap = std::min(worst_lap, lap / double(count));
    }
    CHECK(worst_lap > 0.01);
}
