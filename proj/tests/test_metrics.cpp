#include <doctest.h>

#include <cmath>

#include "defocus/loss.hpp"
#include "defocus/metrics.hpp"
#include "defocus/scene.hpp"

using namespace defocus;

namespace {

ImageF random_image(int h, int w, uint64_t seed) {
    ImageF img(h, w, 3);
    Rng rng(seed);
    for (auto& v : img.values) v = float(rng.uniform());
    return img;
}

DefocusMapF random_map(int h, int w, uint64_t seed) {
    DefocusMapF m(h, w);
    Rng rng(seed);
    for (auto& v : m.sigma) v = float(rng.uniform(0.0, 3.0));
    return m;
}

}  // namespace

TEST_CASE("map mae and mse cases with a scalar oracle") {
    auto a = random_map(6, 6, 1);
    CHECK(mae(a, a) == 0.0);
    CHECK(mse(a, a) == 0.0);

    auto b = a;
    for (auto& v : b.sigma) v += 0.2f;
    CHECK(mae(a, b) == doctest::Approx(0.2).epsilon(1e-6));
    CHECK(mse(a, b) == doctest::Approx(0.04).epsilon(1e-6));

    auto c = random_map(6, 6, 2);
    double sa = 0, ss = 0;
    for (size_t i = 0; i < a.sigma.size(); ++i) {
        const double d = double(a.sigma[i]) - double(c.sigma[i]);
        sa += std::abs(d);
        ss += d * d;
    }
    CHECK(std::abs(mae(a, c) - sa / 36) < 1e-9);
    CHECK(std::abs(mse(a, c) - ss / 36) < 1e-9);

    DefocusMapF wrong(6, 7);
    CHECK_THROWS_AS(mae(a, wrong), DataError);
}

TEST_CASE("psnr closed forms") {
    auto a = random_image(8, 8, 3);
    CHECK(psnr(a, a) == 100.0);

    // 12 of 300 values differ by exactly 0.5: MSE = 0.25 * 12/300 = 0.01
    ImageF base(10, 10, 3), off(10, 10, 3), off2(10, 10, 3);
    for (int i = 0; i < 12; ++i) {
        off.values[size_t(i * 25)] = 0.5f;
        off2.values[size_t(i * 25)] = 1.0f;  // MSE exactly 0.04
    }
    CHECK(std::abs(psnr(base, off) - 20.0) < 1e-6);
    CHECK(std::abs((psnr(base, off) - psnr(base, off2)) - 20.0 * std::log10(2.0)) < 1e-6);
}

TEST_CASE("psnr strictly decreases with growing noise variance") {
    auto img = generate_sharp_image(24, 24, 7);
    double prev = 1e9;
    for (int level = 1; level <= 5; ++level) {
        ImageF noisy = img;
        Rng rng(100 + uint64_t(level));
        const double sigma = 0.01 * level;
        for (auto& v : noisy.values)
            v = std::clamp(float(v + sigma * rng.normal()), 0.0f, 1.0f);
        const double p = psnr(img, noisy);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("ssim identity, symmetry, range, and the constant-image closed form") {
    auto a = random_image(16, 16, 11);
    CHECK(std::abs(ssim(a, a) - 1.0) < 1e-9);

    auto b = random_image(16, 16, 12);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) < 1e-9);
    CHECK(ssim(a, b) >= -1.0);
    CHECK(ssim(a, b) <= 1.0);
    CHECK(ssim(a, b) < 1.0);

    ImageF c1(12, 12, 3), c2(12, 12, 3);
    for (auto& v : c1.values) v = 0.25f;
    for (auto& v : c2.values) v = 0.75f;
    const double mx = 0.25, my = 0.75, kc1 = 1e-4, kc2 = 9e-4;
    const double want = ((2 * mx * my + kc1) * kc2) / ((mx * mx + my * my + kc1) * kc2);
    CHECK(std::abs(ssim(c1, c2) - want) < 1e-9);

    ImageF tiny(8, 8, 3);
    CHECK_THROWS_AS(ssim(tiny, tiny), DataError);
}

TEST_CASE("mse dominates squared mae on random pairs") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto a = random_map(8, 8, 300 + seed);
        auto b = random_map(8, 8, 400 + seed);
        const double m1 = mae(a, b), m2 = mse(a, b);
        CHECK(m2 + 1e-9 >= m1 * m1);
    }
}

TEST_CASE("mae matches loss_dme bit for bit under the same precision") {
    Rng rng(21);
    auto a = Tensor<double>::uniform({1, 1, 5, 5}, rng, 0.0, 3.0);
    auto b = Tensor<double>::uniform({1, 1, 5, 5}, rng, 0.0, 3.0);
    double manual = 0;
    for (int64_t i = 0; i < a.numel(); ++i) manual += std::abs(a[i] - b[i]);
    manual /= double(a.numel());
    CHECK(loss_dme<double>(nullptr, a, b)[0] == manual);
}

TEST_CASE("evaluate on a zero model reports the raw blurry-vs-sharp quality") {
    std::vector<Triplet> ds;
    for (int i = 0; i < 4; ++i) {
        BlurConfig bc;
        bc.seed = 500 + uint64_t(i);
        Triplet t;
        t.sharp = generate_sharp_image(24, 24, 600 + uint64_t(i));
        t.map = generate_defocus_map(24, 24, bc);
        t.blurry = apply_spatially_varying_blur(t.sharp, t.map, bc);
        ds.push_back(std::move(t));
    }
    ArchConfig tiny{4, 1, 4, 6, 1};
    auto mp = init_model<float>(Variant::sft_dec, tiny, 1);
    for (auto& [name, t] : mp.params)
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0.f;

    auto rep = evaluate(ds, mp, "zero", "tiny");
    REQUIRE(rep.rows.size() == 4);
    for (size_t i = 0; i < ds.size(); ++i)
        CHECK(rep.rows[i].psnr == doctest::Approx(psnr(ds[i].blurry, ds[i].sharp)).epsilon(1e-12));

    // means are the arithmetic means of the rows
    double psum = 0;
    for (const auto& r : rep.rows) psum += r.psnr;
    CHECK(std::abs(rep.mean_psnr - psum / 4) < 1e-9);

    // deterministic, including under a worker pool
    auto rep2 = evaluate(ds, mp, "zero", "tiny");
    set_thread_count(3);
    auto rep3 = evaluate(ds, mp, "zero", "tiny");
    set_thread_count(1);
    for (size_t i = 0; i < rep.rows.size(); ++i) {
        CHECK(rep.rows[i].psnr == rep2.rows[i].psnr);
        CHECK(rep.rows[i].psnr == rep3.rows[i].psnr);
        CHECK(rep.rows[i].ssim == rep3.rows[i].ssim);
        CHECK(rep.rows[i].mae_dm == rep3.rows[i].mae_dm);
    }
}
