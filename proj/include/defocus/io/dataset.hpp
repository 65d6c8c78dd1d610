#pragma once

// Synthetic dataset on disk: per triplet a sharp PNG, a blurry PNG, and a
// DMF defocus map, listed by a manifest whose header echoes the generating
// configuration. The blurry image is formed from the quantized sharp image
// (what the PNG actually stores), so the loaded pair obeys the formation
// model up to the blurry side's own quantization.

#include <filesystem>
#include <string>
#include <vector>

#include "defocus/augment.hpp"
#include "defocus/io/config_file.hpp"
#include "defocus/io/dmf.hpp"
#include "defocus/io/png_io.hpp"
#include "defocus/scene.hpp"

namespace defocus::io {

namespace detail {

inline ImageF quantize8(const ImageF& img) {
    ImageF out = img;
    for (auto& v : out.values) {
        const float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        v = float(int(c * 255.0f + 0.5f)) / 255.0f;
    }
    return out;
}

}  // namespace detail

inline std::string triplet_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", index);
    return buf;
}

/// Generates `count` triplets of size width x height under cfg and writes
/// them plus manifest.txt into out_dir. Returns the manifest path.
/// Deterministic in cfg.seed; triplets draw independent derived seeds, so
/// generation parallelizes without changing any byte.
inline std::string synth_dataset(int count, int width, int height, const BlurConfig& cfg,
                                 const std::string& out_dir) {
    cfg.validate();
    if (count < 1) throw ConfigError("synth_dataset: count must be >= 1");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir))
        throw DataError("synth_dataset: cannot create directory " + out_dir);

    parallel_for(count, [&](int64_t i) {
        BlurConfig tcfg = cfg;
        tcfg.seed = mix_seed(cfg.seed, uint64_t(i));
        ImageF sharp = generate_sharp_image(width, height, mix_seed(tcfg.seed, 0x736861ULL));
        const ImageF stored_sharp = detail::quantize8(sharp);
        DefocusMapF map = generate_defocus_map(width, height, tcfg);
        ImageF blurry = apply_spatially_varying_blur(stored_sharp, map, tcfg);
        const std::string stem = (fs::path(out_dir) / triplet_stem(int(i))).string();
        write_png(stem + "_sharp.png", stored_sharp);
        write_png(stem + "_blurry.png", blurry);
        write_dmf(stem + "_map.dmf", map);
    });

    std::string manifest = "# defocus dataset manifest\n";
    manifest += "# count = " + std::to_string(count) + "\n";
    manifest += "# width = " + std::to_string(width) + "\n";
    manifest += "# height = " + std::to_string(height) + "\n";
    manifest += "# sigma_max = " + detail::fmt_double(cfg.sigma_max) + "\n";
    manifest += "# noise_sigma = " + detail::fmt_double(cfg.noise_sigma) + "\n";
    manifest += "# quantization_levels = " + std::to_string(cfg.quantization_levels) + "\n";
    manifest += std::string("# map_model = ") +
                (cfg.map_model == MapModel::gaussian_field ? "gaussian_field" : "tilted_plane") + "\n";
    manifest += "# seed = " + std::to_string(cfg.seed) + "\n";
    for (int i = 0; i < count; ++i) {
        const std::string stem = triplet_stem(i);
        manifest += "sharp " + stem + "_sharp.png blurry " + stem + "_blurry.png map " + stem +
                    "_map.dmf\n";
    }
    const std::string manifest_path = (fs::path(out_dir) / "manifest.txt").string();
    detail::write_file(manifest_path, std::vector<uint8_t>(manifest.begin(), manifest.end()));
    return manifest_path;
}

/// Loads every triplet listed by a manifest; paths resolve relative to the
/// manifest's directory.
inline std::vector<Triplet> load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const auto bytes = detail::read_file(manifest_path);
    const std::string text(bytes.begin(), bytes.end());
    const fs::path base = fs::path(manifest_path).parent_path();

    std::vector<Triplet> out;
    size_t pos = 0;
    int line_no = 0;
    while (pos < text.size()) {
        const size_t eol = std::min(text.size(), text.find('\n', pos));
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        char sharp_p[512], blurry_p[512], map_p[512];
        if (std::sscanf(line.c_str(), "sharp %511s blurry %511s map %511s", sharp_p, blurry_p,
                        map_p) != 3)
            throw DataError("manifest " + manifest_path + " line " + std::to_string(line_no) +
                            ": malformed triplet line");
        Triplet t;
        t.sharp = read_png((base / sharp_p).string());
        t.blurry = read_png((base / blurry_p).string());
        t.map = read_dmf((base / map_p).string());
        if (t.sharp.width != t.blurry.width || t.sharp.height != t.blurry.height ||
            t.sharp.width != t.map.width || t.sharp.height != t.map.height)
            throw DataError("manifest " + manifest_path + " line " + std::to_string(line_no) +
                            ": triplet dims disagree");
        out.push_back(std::move(t));
    }
    if (out.empty()) throw DataError("manifest " + manifest_path + " lists no triplets");
    return out;
}

}  // namespace defocus::io
