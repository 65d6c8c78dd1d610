#include <doctest.h>

#include <filesystem>

#include "defocus/io/checkpoint.hpp"
#include "defocus/io/config_file.hpp"
#include "defocus/io/dataset.hpp"
#include "defocus/io/png_io.hpp"
#include "defocus/io/report.hpp"

using namespace defocus;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("defocus_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DefocusMapF sample_map(int h, int w, uint64_t seed) {
    DefocusMapF m(h, w);
    Rng rng(seed);
    for (auto& v : m.sigma) v = float(rng.uniform(0.0, 3.0));
    return m;
}

}  // namespace

TEST_CASE("dmf encode/decode round-trips byte for byte") {
    auto m = sample_map(7, 5, 1);
    auto bytes = io::encode_dmf(m);
    auto m2 = io::decode_dmf(bytes, "mem");
    CHECK(m2.width == 5);
    CHECK(m2.height == 7);
    CHECK(m2.sigma == m.sigma);
    CHECK(io::encode_dmf(m2) == bytes);
}

TEST_CASE("dmf rejects bad magic, size mismatch, and negative sigmas") {
    auto m = sample_map(4, 4, 2);
    auto bytes = io::encode_dmf(m);
    auto corrupt = bytes;
    corrupt[0] = 'X';
    CHECK_THROWS_AS(io::decode_dmf(corrupt, "mem"), DataError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(io::decode_dmf(truncated, "mem"), DataError);

    DefocusMapF neg(2, 2);
    neg.sigma[1] = -0.5f;
    CHECK_THROWS_AS(io::encode_dmf(neg), DataError);
}

TEST_CASE("png save/load round-trips the 8-bit quantized image") {
    const auto dir = temp_dir("png");
    ImageF img(9, 13, 3);
    Rng rng(3);
    for (auto& v : img.values) v = float(rng.uniform());
    const std::string path = (dir / "t.png").string();
    io::write_png(path, img);
    auto back = io::read_png(path);
    REQUIRE(back.width == 13);
    REQUIRE(back.height == 9);
    for (size_t i = 0; i < img.values.size(); ++i) {
        const float q = float(int(img.values[i] * 255.f + 0.5f)) / 255.f;
        CHECK(back.values[i] == doctest::Approx(q).epsilon(1e-6));
    }
}

TEST_CASE("checkpoint round-trips byte for byte and validates structure") {
    ArchConfig tiny{4, 1, 4, 6, 1};
    auto mp = init_model<float>(Variant::sft_fdec, tiny, 17);
    auto bytes = io::encode_checkpoint(mp);
    auto mp2 = io::decode_checkpoint(bytes, "mem");
    CHECK(mp2.variant == Variant::sft_fdec);
    CHECK(mp2.arch.deblur_channels == 6);
    REQUIRE(mp2.params.size() == mp.params.size());
    for (size_t i = 0; i < mp.params.size(); ++i) {
        CHECK(mp2.params[i].first == mp.params[i].first);
        for (int64_t j = 0; j < mp.params[i].second.numel(); ++j)
            CHECK(mp2.params[i].second[j] == mp.params[i].second[j]);
    }
    CHECK(io::encode_checkpoint(mp2) == bytes);
}

TEST_CASE("checkpoint CRC detects any single flipped byte") {
    ArchConfig tiny{2, 1, 2, 4, 1};
    auto mp = init_model<float>(Variant::sft_dec, tiny, 19);
    const auto bytes = io::encode_checkpoint(mp);
    Rng rng(23);
    for (int trial = 0; trial < 32; ++trial) {
        auto corrupt = bytes;
        const size_t pos = 4 + size_t(rng.uniform_int(int64_t(bytes.size()) - 4));
        corrupt[pos] ^= uint8_t(1u << rng.uniform_int(8));
        CHECK_THROWS_AS(io::decode_checkpoint(corrupt, "mem"), DataError);
    }
}

TEST_CASE("config serialize/parse is the identity") {
    io::FullConfig cfg;
    cfg.train.lambda1 = 0.2;
    cfg.train.lambda2 = 0.9;
    cfg.train.lambda3 = 0.1;
    cfg.train.epochs_stage1 = 3;
    cfg.train.epochs_stage2 = 7;
    cfg.train.epochs_stage3 = 11;
    cfg.train.batch_size = 4;
    cfg.train.crop_size = 48;
    cfg.train.learning_rate = 2.5e-4;
    cfg.train.seed = 123456789123ULL;
    cfg.train.variant = Variant::sft_fdec;
    cfg.train.flips = false;
    cfg.train.rotations = true;
    cfg.train.schedule_mode = ScheduleMode::end_to_end;
    cfg.train.arch = ArchConfig{6, 3, 7, 12, 4};
    cfg.blur.sigma_max = 2.718281828459045;
    cfg.blur.noise_sigma = 0.0015;
    cfg.blur.quantization_levels = 12;
    cfg.blur.map_model = MapModel::tilted_plane;
    cfg.blur.seed = cfg.train.seed;

    auto text = io::serialize_config(cfg);
    auto back = io::parse_config(text);
    CHECK(back == cfg);
    CHECK(io::serialize_config(back) == text);
}

TEST_CASE("config parser flags unknown keys with the line number") {
    try {
        io::parse_config("lambda1 = 0.2\nlambda9 = 1.0\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("lambda9") != std::string::npos);
    }
    CHECK_THROWS_AS(io::parse_config("variant = nonsense\n"), ConfigError);
    CHECK_THROWS_AS(io::parse_config("lambda1\n"), ConfigError);
    // comments and blank lines are fine
    auto cfg = io::parse_config("# comment\n\nlambda1 = 0.3 # trailing\n");
    CHECK(cfg.train.lambda1 == 0.3);
}

TEST_CASE("synth_dataset writes count triplets plus manifest, deterministically") {
    const auto dir1 = temp_dir("ds_a");
    const auto dir2 = temp_dir("ds_b");
    BlurConfig cfg;
    cfg.seed = 77;
    const std::string man1 = io::synth_dataset(4, 20, 16, cfg, dir1.string());
    const std::string man2 = io::synth_dataset(4, 20, 16, cfg, dir2.string());

    int files = 0;
    for (const auto& e : fs::directory_iterator(dir1)) {
        (void)e;
        ++files;
    }
    CHECK(files == 13);  // 3 per triplet + manifest

    for (int i = 0; i < 4; ++i) {
        const std::string n = io::triplet_stem(i) + "_map.dmf";
        CHECK(io::detail::read_file((dir1 / n).string()) == io::detail::read_file((dir2 / n).string()));
    }
    CHECK(io::detail::read_file(man1) == io::detail::read_file(man2));

    auto ds = io::load_dataset(man1);
    REQUIRE(ds.size() == 4);
    for (const auto& t : ds) {
        CHECK(t.sharp.width == 20);
        CHECK(t.sharp.height == 16);
        CHECK(t.map.width == 20);
        CHECK(t.blurry.channels == 3);
    }
}

TEST_CASE("dataset loader reports missing files") {
    const auto dir = temp_dir("ds_missing");
    io::detail::write_file((dir / "manifest.txt").string(),
                           {'s', 'h', 'a', 'r', 'p', ' ', 'x', '.', 'p', 'n', 'g', ' ', 'b', 'l',
                            'u', 'r', 'r', 'y', ' ', 'y', '.', 'p', 'n', 'g', ' ', 'm', 'a', 'p',
                            ' ', 'z', '.', 'd', 'm', 'f', '\n'});
    CHECK_THROWS_AS(io::load_dataset((dir / "manifest.txt").string()), DataError);
}

TEST_CASE("eval report text round-trips its means") {
    EvalReport rep;
    rep.checkpoint_id = "ck";
    rep.dataset_id = "ds";
    rep.variant = "sft_dec";
    rep.rows = {{"000", 24.125, 0.81, 0.3, 0.12}, {"001", 26.5, 0.87, 0.2, 0.05}};
    rep.compute_means();
    const std::string text = io::format_report(rep);

    // recompute the means from the per-image rows in the text
    double psum = 0;
    int count = 0;
    size_t pos = text.find("[images]");
    REQUIRE(pos != std::string::npos);
    pos = text.find('\n', pos) + 1;
    pos = text.find('\n', pos) + 1;  // skip the column header
    while (pos < text.size()) {
        const size_t eol = std::min(text.size(), text.find('\n', pos));
        char id[8];
        double p, s, ma, ms;
        if (std::sscanf(text.substr(pos, eol - pos).c_str(), "%7s %lf %lf %lf %lf", id, &p, &s, &ma,
                        &ms) == 5) {
            psum += p;
            ++count;
        }
        pos = eol + 1;
    }
    REQUIRE(count == 2);
    CHECK(std::abs(psum / 2 - rep.mean_psnr) < 1e-9);
}
