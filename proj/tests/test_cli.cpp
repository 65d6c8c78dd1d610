#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "defocus/io/checkpoint.hpp"
#include "defocus/io/config_file.hpp"
#include "defocus/io/dataset.hpp"
#include "defocus/io/dmf.hpp"
#include "defocus/io/png_io.hpp"

using namespace defocus;
namespace fs = std::filesystem;

namespace {

const char* kCli = DEFOCUS_CLI_PATH;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(kCli) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string run_cli_capture(const std::string& args, const fs::path& dir) {
    const fs::path out = dir / "cli_output.txt";
    const std::string cmd = std::string(kCli) + " " + args + " > " + out.string() + " 2>&1";
    std::system(cmd.c_str());
    std::ifstream f(out);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("defocus_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string tiny_config(const fs::path& dir, int e1, int e2, int e3) {
    io::FullConfig cfg;
    cfg.train.arch = ArchConfig{4, 1, 4, 6, 1};
    cfg.train.epochs_stage1 = e1;
    cfg.train.epochs_stage2 = e2;
    cfg.train.epochs_stage3 = e3;
    cfg.train.batch_size = 4;
    cfg.train.crop_size = 20;
    cfg.train.seed = 11;
    const std::string path = (dir / "config.txt").string();
    io::write_config(path, cfg);
    return path;
}

std::string make_dataset(const fs::path& dir, int count = 6, const std::string& size = "24x24") {
    REQUIRE(run_cli("synth --out " + dir.string() + " --count " + std::to_string(count) +
                    " --size " + size + " --seed 5") == 0);
    return (dir / "manifest.txt").string();
}

}  // namespace

TEST_CASE("cli synth writes the dataset and is deterministic") {
    const auto d1 = temp_dir("synth1");
    const auto d2 = temp_dir("synth2");
    make_dataset(d1, 4, "24x20");
    make_dataset(d2, 4, "24x20");

    auto ds = io::load_dataset((d1 / "manifest.txt").string());
    REQUIRE(ds.size() == 4);
    CHECK(ds[0].sharp.width == 24);
    CHECK(ds[0].sharp.height == 20);

    for (int i = 0; i < 4; ++i) {
        const std::string n = io::triplet_stem(i) + "_map.dmf";
        CHECK(io::detail::read_file((d1 / n).string()) == io::detail::read_file((d2 / n).string()));
    }
}

TEST_CASE("cli synth rejects bad size syntax with exit code 1") {
    const auto dir = temp_dir("synth_bad");
    CHECK(run_cli("synth --out " + dir.string() + " --count 2 --size banana") == 1);
}

TEST_CASE("cli train with zero epochs emits three identical initial checkpoints") {
    const auto data = temp_dir("train0_data");
    const auto out = temp_dir("train0_out");
    make_dataset(data);
    const std::string cfg = tiny_config(out, 0, 0, 0);
    REQUIRE(run_cli("train --data " + data.string() + " --config " + cfg + " --out " +
                    (out / "ck").string()) == 0);
    const auto s1 = io::detail::read_file((out / "ck.s1").string());
    const auto s2 = io::detail::read_file((out / "ck.s2").string());
    const auto s3 = io::detail::read_file((out / "ck.s3").string());
    CHECK(s1 == s2);
    CHECK(s1 == s3);

    // and they decode to the seeded initialization
    auto loaded = io::read_checkpoint((out / "ck.s1").string());
    auto expected = init_model<float>(Variant::sft_dec, ArchConfig{4, 1, 4, 6, 1}, 11);
    REQUIRE(loaded.params.size() == expected.params.size());
    for (size_t i = 0; i < loaded.params.size(); ++i)
        for (int64_t j = 0; j < loaded.params[i].second.numel(); ++j)
            CHECK(loaded.params[i].second[j] == expected.params[i].second[j]);
}

TEST_CASE("cli train end_to_end writes exactly one checkpoint") {
    const auto data = temp_dir("e2e_data");
    const auto out = temp_dir("e2e_out");
    make_dataset(data);
    const std::string cfg = tiny_config(out, 1, 1, 1);
    REQUIRE(run_cli("train --data " + data.string() + " --config " + cfg +
                    " --schedule end_to_end --out " + (out / "ck").string()) == 0);
    CHECK(fs::exists(out / "ck.e2e"));
    CHECK(!fs::exists(out / "ck.s1"));
    CHECK(fs::exists(out / "ck.log"));

    // log has e1+e2+e3 records, all stage 0
    std::ifstream log(out / "ck.log");
    std::string line;
    int records = 0;
    while (std::getline(log, line))
        if (line.rfind("epoch=", 0) == 0) {
            ++records;
            CHECK(line.find("stage=0") != std::string::npos);
        }
    CHECK(records == 3);
}

TEST_CASE("cli train reruns reproduce byte-identical checkpoints") {
    const auto data = temp_dir("det_data");
    const auto o1 = temp_dir("det_out1");
    const auto o2 = temp_dir("det_out2");
    make_dataset(data);
    const std::string cfg1 = tiny_config(o1, 1, 1, 1);
    const std::string cfg2 = tiny_config(o2, 1, 1, 1);
    REQUIRE(run_cli("--threads 1 train --data " + data.string() + " --config " + cfg1 + " --out " +
                    (o1 / "ck").string()) == 0);
    REQUIRE(run_cli("--threads 1 train --data " + data.string() + " --config " + cfg2 + " --out " +
                    (o2 / "ck").string()) == 0);
    CHECK(io::detail::read_file((o1 / "ck.s3").string()) ==
          io::detail::read_file((o2 / "ck.s3").string()));
}

TEST_CASE("cli train rejects an unknown variant with exit code 1") {
    const auto data = temp_dir("var_data");
    make_dataset(data);
    CHECK(run_cli("train --data " + data.string() + " --variant bogus --out /tmp/x") == 1);
}

TEST_CASE("cli eval writes a report whose means match its rows") {
    const auto data = temp_dir("eval_data");
    const auto out = temp_dir("eval_out");
    make_dataset(data);
    const std::string cfg = tiny_config(out, 1, 0, 0);
    REQUIRE(run_cli("train --data " + data.string() + " --config " + cfg + " --out " +
                    (out / "ck").string()) == 0);
    const std::string report = (out / "report.txt").string();
    REQUIRE(run_cli("eval --data " + data.string() + " --ckpt " + (out / "ck.s3").string() +
                    " --report " + report) == 0);

    std::ifstream f(report);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    double mean_psnr = -1;
    REQUIRE(std::sscanf(text.c_str() + text.find("psnr = "), "psnr = %lf", &mean_psnr) == 1);
    double sum = 0;
    int rows = 0;
    size_t pos = text.find("[images]");
    pos = text.find('\n', text.find('\n', pos) + 1) + 1;
    while (pos < text.size()) {
        const size_t eol = std::min(text.size(), text.find('\n', pos));
        char id[8];
        double p, s, ma, ms;
        if (std::sscanf(text.substr(pos, eol - pos).c_str(), "%7s %lf %lf %lf %lf", id, &p, &s, &ma,
                        &ms) == 5) {
            sum += p;
            ++rows;
        }
        pos = eol + 1;
    }
    REQUIRE(rows == 6);
    CHECK(std::abs(sum / rows - mean_psnr) < 1e-8);
}

TEST_CASE("cli eval reports missing data with exit code 2 and corrupt checkpoints too") {
    const auto out = temp_dir("eval_bad");
    CHECK(run_cli("eval --data /nonexistent_dir_xyz --ckpt /also_missing.ckpt") == 2);

    // corrupt checkpoint: flip one byte
    const auto data = temp_dir("eval_bad_data");
    make_dataset(data);
    const std::string cfg = tiny_config(out, 0, 0, 0);
    REQUIRE(run_cli("train --data " + data.string() + " --config " + cfg + " --out " +
                    (out / "ck").string()) == 0);
    auto bytes = io::detail::read_file((out / "ck.s1").string());
    bytes[bytes.size() / 2] ^= 0x10;
    io::detail::write_file((out / "ck_bad").string(), bytes);
    CHECK(run_cli("eval --data " + data.string() + " --ckpt " + (out / "ck_bad").string()) == 2);
}

TEST_CASE("cli infer keeps dimensions, dumps a valid map, and an initial model is the identity") {
    const auto data = temp_dir("infer_data");
    const auto out = temp_dir("infer_out");
    make_dataset(data, 2, "28x20");
    const std::string cfg = tiny_config(out, 0, 0, 0);
    REQUIRE(run_cli("train --data " + data.string() + " --config " + cfg + " --out " +
                    (out / "ck").string()) == 0);

    const std::string input = (data / "000_blurry.png").string();
    const std::string output = (out / "deblurred.png").string();
    const std::string map = (out / "map.dmf").string();
    REQUIRE(run_cli("infer --input " + input + " --ckpt " + (out / "ck.s1").string() + " --out " +
                    output + " --dump-map " + map) == 0);

    auto in_img = io::read_png(input);
    auto out_img = io::read_png(output);
    CHECK(out_img.width == in_img.width);
    CHECK(out_img.height == in_img.height);
    // fresh init has zeroed residual and modulation heads: identity through the global skip
    CHECK(out_img.values == in_img.values);

    auto m = io::read_dmf(map);
    CHECK(m.width == 28);
    CHECK(m.height == 20);
    for (float v : m.sigma) CHECK(v >= 0.f);

    CHECK(run_cli("infer --input /no_such.png --ckpt " + (out / "ck.s1").string() +
                  " --out /tmp/x.png") == 2);
}

TEST_CASE("cli gradcheck passes clean and fails the corrupted fixture") {
    const auto dir = temp_dir("gc");
    CHECK(run_cli("gradcheck") == 0);
    CHECK(run_cli("gradcheck --corrupt") == 3);
    const std::string text = run_cli_capture("gradcheck", dir);
    // every registered op appears exactly once
    for (const char* op : {"conv2d_3x3", "sft_apply", "dme_forward", "stage3_objective"}) {
        const size_t first = text.find(op);
        REQUIRE(first != std::string::npos);
        CHECK(text.find(op, first + 1) == std::string::npos);
    }
}

TEST_CASE("cli ablate emits the 13-row table") {
    const auto data = temp_dir("ablate_data");
    const auto out = temp_dir("ablate_out");
    make_dataset(data, 4, "20x20");
    const std::string cfg = tiny_config(out, 1, 1, 1);
    REQUIRE(run_cli("ablate --data " + data.string() + " --config " + cfg + " --out " +
                    out.string()) == 0);
    std::ifstream f(out / "ablation.txt");
    std::string line;
    int rows = 0;
    while (std::getline(f, line))
        if (!line.empty() && line[0] != '#') ++rows;
    CHECK(rows == 13);
}
