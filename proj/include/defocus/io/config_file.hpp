#pragma once

// Line-oriented "key = value" configuration covering the training and blur
// settings. '#' starts a comment. Unknown keys are hard errors so a typo in
// a loss weight or epoch count cannot silently change an experiment.

#include <cinttypes>
#include <cstdio>
#include <string>

#include "defocus/blur.hpp"
#include "defocus/io/dmf.hpp"
#include "defocus/train.hpp"

namespace defocus::io {

struct FullConfig {
    TrainingConfig train;
    BlurConfig blur;

    bool operator==(const FullConfig& o) const {
        const TrainingConfig &a = train, &b = o.train;
        return a.lambda1 == b.lambda1 && a.lambda2 == b.lambda2 && a.lambda3 == b.lambda3 &&
               a.epochs_stage1 == b.epochs_stage1 && a.epochs_stage2 == b.epochs_stage2 &&
               a.epochs_stage3 == b.epochs_stage3 && a.batch_size == b.batch_size &&
               a.crop_size == b.crop_size && a.learning_rate == b.learning_rate &&
               a.seed == b.seed && a.variant == b.variant && a.flips == b.flips &&
               a.rotations == b.rotations && a.schedule_mode == b.schedule_mode &&
               a.arch.dme_channels == b.arch.dme_channels && a.arch.dme_blocks == b.arch.dme_blocks &&
               a.arch.cond_channels == b.arch.cond_channels &&
               a.arch.deblur_channels == b.arch.deblur_channels &&
               a.arch.deblur_blocks == b.arch.deblur_blocks && blur.sigma_max == o.blur.sigma_max &&
               blur.noise_sigma == o.blur.noise_sigma &&
               blur.quantization_levels == o.blur.quantization_levels &&
               blur.map_model == o.blur.map_model;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace detail

inline std::string serialize_config(const FullConfig& cfg) {
    const TrainingConfig& t = cfg.train;
    std::string out = "# training\n";
    auto kv = [&out](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    kv("lambda1", detail::fmt_double(t.lambda1));
    kv("lambda2", detail::fmt_double(t.lambda2));
    kv("lambda3", detail::fmt_double(t.lambda3));
    kv("epochs_stage1", std::to_string(t.epochs_stage1));
    kv("epochs_stage2", std::to_string(t.epochs_stage2));
    kv("epochs_stage3", std::to_string(t.epochs_stage3));
    kv("batch_size", std::to_string(t.batch_size));
    kv("crop_size", std::to_string(t.crop_size));
    kv("learning_rate", detail::fmt_double(t.learning_rate));
    kv("seed", std::to_string(t.seed));
    kv("variant", variant_name(t.variant));
    kv("flips", t.flips ? "true" : "false");
    kv("rotations", t.rotations ? "true" : "false");
    kv("schedule_mode", schedule_name(t.schedule_mode));
    out += "# architecture\n";
    kv("dme_channels", std::to_string(t.arch.dme_channels));
    kv("dme_blocks", std::to_string(t.arch.dme_blocks));
    kv("cond_channels", std::to_string(t.arch.cond_channels));
    kv("deblur_channels", std::to_string(t.arch.deblur_channels));
    kv("deblur_blocks", std::to_string(t.arch.deblur_blocks));
    out += "# blur model\n";
    kv("sigma_max", detail::fmt_double(cfg.blur.sigma_max));
    kv("noise_sigma", detail::fmt_double(cfg.blur.noise_sigma));
    kv("quantization_levels", std::to_string(cfg.blur.quantization_levels));
    kv("map_model", cfg.blur.map_model == MapModel::gaussian_field ? "gaussian_field" : "tilted_plane");
    return out;
}

/// Parses config text. The blur seed mirrors the training seed; there is
/// one seed per experiment.
inline FullConfig parse_config(const std::string& text) {
    FullConfig cfg;
    int line_no = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
        const size_t eol = std::min(text.size(), text.find('\n', pos));
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) {
            if (eol == text.size()) break;
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");

        auto bad_value = [&]() {
            return ConfigError("config line " + std::to_string(line_no) + ": bad value '" + value +
                               "' for key " + key);
        };
        auto as_double = [&] {
            char* end = nullptr;
            const double v = std::strtod(value.c_str(), &end);
            if (end != value.c_str() + value.size()) throw bad_value();
            return v;
        };
        auto as_int = [&] {
            char* end = nullptr;
            const long v = std::strtol(value.c_str(), &end, 10);
            if (end != value.c_str() + value.size()) throw bad_value();
            return int(v);
        };
        auto as_bool = [&] {
            if (value == "true") return true;
            if (value == "false") return false;
            throw bad_value();
        };

        TrainingConfig& t = cfg.train;
        if (key == "lambda1") t.lambda1 = as_double();
        else if (key == "lambda2") t.lambda2 = as_double();
        else if (key == "lambda3") t.lambda3 = as_double();
        else if (key == "epochs_stage1") t.epochs_stage1 = as_int();
        else if (key == "epochs_stage2") t.epochs_stage2 = as_int();
        else if (key == "epochs_stage3") t.epochs_stage3 = as_int();
        else if (key == "batch_size") t.batch_size = as_int();
        else if (key == "crop_size") t.crop_size = as_int();
        else if (key == "learning_rate") t.learning_rate = as_double();
        else if (key == "seed") {
            char* end = nullptr;
            t.seed = std::strtoull(value.c_str(), &end, 10);
            if (end != value.c_str() + value.size()) throw bad_value();
        } else if (key == "variant") {
            auto v = parse_variant(value);
            if (!v)
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown variant '" +
                                  value + "' (expected baseline|sft|sft_dec|sft_fdec)");
            t.variant = *v;
        } else if (key == "flips") t.flips = as_bool();
        else if (key == "rotations") t.rotations = as_bool();
        else if (key == "schedule_mode") {
            if (value == "three_stage") t.schedule_mode = ScheduleMode::three_stage;
            else if (value == "end_to_end") t.schedule_mode = ScheduleMode::end_to_end;
            else
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unknown schedule_mode '" + value +
                                  "' (expected three_stage|end_to_end)");
        } else if (key == "dme_channels") t.arch.dme_channels = as_int();
        else if (key == "dme_blocks") t.arch.dme_blocks = as_int();
        else if (key == "cond_channels") t.arch.cond_channels = as_int();
        else if (key == "deblur_channels") t.arch.deblur_channels = as_int();
        else if (key == "deblur_blocks") t.arch.deblur_blocks = as_int();
        else if (key == "sigma_max") cfg.blur.sigma_max = as_double();
        else if (key == "noise_sigma") cfg.blur.noise_sigma = as_double();
        else if (key == "quantization_levels") cfg.blur.quantization_levels = as_int();
        else if (key == "map_model") {
            if (value == "gaussian_field") cfg.blur.map_model = MapModel::gaussian_field;
            else if (value == "tilted_plane") cfg.blur.map_model = MapModel::tilted_plane;
            else
                throw ConfigError("config line " + std::to_string(line_no) + ": unknown map_model '" +
                                  value + "' (expected gaussian_field|tilted_plane)");
        } else {
            throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                              "'");
        }
        if (eol == text.size()) break;
    }
    cfg.blur.seed = cfg.train.seed;
    return cfg;
}

inline FullConfig read_config(const std::string& path) {
    const auto bytes = detail::read_file(path);
    return parse_config(std::string(bytes.begin(), bytes.end()));
}

inline void write_config(const std::string& path, const FullConfig& cfg) {
    const std::string text = serialize_config(cfg);
    detail::write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

}  // namespace defocus::io
