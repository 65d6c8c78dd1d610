// defocus: synthesize blur datasets, train the three-sub-network deblurring
// model, evaluate checkpoints, run single-image inference, reproduce the
// ablation grid, and verify gradients.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
// check failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <string>

#include "defocus/gradcheck_suite.hpp"
#include "defocus/io/checkpoint.hpp"
#include "defocus/io/config_file.hpp"
#include "defocus/io/dataset.hpp"
#include "defocus/io/png_io.hpp"
#include "defocus/io/report.hpp"
#include "defocus/metrics.hpp"
#include "defocus/train.hpp"

namespace fs = std::filesystem;
using namespace defocus;

namespace {

std::string resolve_manifest(const std::string& data) {
    if (fs::is_directory(data)) return (fs::path(data) / "manifest.txt").string();
    return data;
}

bool parse_size(const std::string& s, int* w, int* h) {
    return std::sscanf(s.c_str(), "%dx%d", w, h) == 2 && *w > 0 && *h > 0;
}

void print_epoch(const EpochRecord& r) {
    std::printf("epoch=%d stage=%d l_dme=%.6f l_df=%.6f l_wd=%.6f loss=%.6f (%.1fs)\n", r.epoch,
                r.stage, r.l_dme, r.l_df, r.l_wd, r.loss, r.wall_seconds);
}

struct TrainedRun {
    ScheduleResult result;
    std::vector<std::string> checkpoint_paths;
};

TrainedRun train_and_save(const std::vector<Triplet>& dataset, const TrainingConfig& cfg,
                          const std::string& prefix) {
    TrainedRun run;
    run.result = run_schedule(dataset, cfg);
    if (cfg.schedule_mode == ScheduleMode::three_stage) {
        const char* suffix[] = {".s1", ".s2", ".s3"};
        for (size_t i = 0; i < run.result.checkpoints.size(); ++i) {
            const std::string path = prefix + suffix[i];
            io::write_checkpoint(path, run.result.checkpoints[i]);
            run.checkpoint_paths.push_back(path);
        }
    } else {
        const std::string path = prefix + ".e2e";
        io::write_checkpoint(path, run.result.checkpoints[0]);
        run.checkpoint_paths.push_back(path);
    }
    io::write_train_log(prefix + ".log", run.result.log);
    return run;
}

int cmd_synth(const std::string& out_dir, int count, const std::string& size, double sigma_max,
              double noise_sigma, int levels, const std::string& map_model, uint64_t seed) {
    int w = 0, h = 0;
    if (!parse_size(size, &w, &h)) throw ConfigError("bad --size '" + size + "', expected WxH");
    BlurConfig cfg;
    cfg.sigma_max = sigma_max;
    cfg.noise_sigma = noise_sigma;
    cfg.quantization_levels = levels;
    cfg.seed = seed;
    if (map_model == "gaussian_field") cfg.map_model = MapModel::gaussian_field;
    else if (map_model == "tilted_plane") cfg.map_model = MapModel::tilted_plane;
    else throw ConfigError("unknown --map-model '" + map_model + "'");
    const std::string manifest = io::synth_dataset(count, w, h, cfg, out_dir);
    std::printf("%s\n", manifest.c_str());
    return 0;
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& variant,
              const std::string& schedule, const std::string& out_prefix) {
    io::FullConfig cfg;
    if (!config_path.empty()) cfg = io::read_config(config_path);
    if (!variant.empty()) {
        auto v = parse_variant(variant);
        if (!v)
            throw ConfigError("unknown --variant '" + variant +
                              "' (expected baseline|sft|sft_dec|sft_fdec)");
        cfg.train.variant = *v;
    }
    if (!schedule.empty()) {
        if (schedule == "three_stage") cfg.train.schedule_mode = ScheduleMode::three_stage;
        else if (schedule == "end_to_end") cfg.train.schedule_mode = ScheduleMode::end_to_end;
        else throw ConfigError("unknown --schedule '" + schedule + "'");
    }
    const auto dataset = io::load_dataset(resolve_manifest(data));
    const TrainedRun run = train_and_save(dataset, cfg.train, out_prefix);
    for (const auto& r : run.result.log.records) print_epoch(r);
    for (const auto& p : run.checkpoint_paths) std::printf("checkpoint %s\n", p.c_str());
    return 0;
}

int cmd_eval(const std::string& data, const std::string& ckpt, const std::string& report_path) {
    const auto params = io::read_checkpoint(ckpt);
    const auto dataset = io::load_dataset(resolve_manifest(data));
    EvalReport rep = evaluate(dataset, params, ckpt, data);
    if (!report_path.empty()) io::write_report(report_path, rep);
    std::printf("psnr = %.4f\nssim = %.4f\nmae_dm = %.4f\nmse_dm = %.4f\n", rep.mean_psnr,
                rep.mean_ssim, rep.mean_mae, rep.mean_mse);
    return 0;
}

int cmd_infer(const std::string& input, const std::string& ckpt, const std::string& out,
              const std::string& dump_map) {
    const auto params = io::read_checkpoint(ckpt);
    const ImageF img = io::read_png(input);
    auto blurry = defocus::detail::image_to_tensor(img);
    auto r = full_forward<float>(nullptr, blurry, MapSource::estimated, std::nullopt, params,
                                 /*clamp_output=*/true);
    io::write_png(out, defocus::detail::tensor_to_image(r.deblurred));
    if (!dump_map.empty()) io::write_dmf(dump_map, defocus::detail::tensor_to_map(r.map_used));
    std::printf("wrote %s (%dx%d)\n", out.c_str(), img.width, img.height);
    return 0;
}

int cmd_ablate(const std::string& data, const std::string& config_path, const std::string& out_dir,
               const std::string& eval_data) {
    io::FullConfig cfg;
    if (!config_path.empty()) cfg = io::read_config(config_path);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw DataError("cannot create directory " + out_dir);

    const auto train_set = io::load_dataset(resolve_manifest(data));
    const auto eval_set = io::load_dataset(resolve_manifest(eval_data.empty() ? data : eval_data));

    struct Row {
        std::string label;
        double psnr, ssim;
    };
    std::vector<Row> rows;
    const std::pair<Variant, const char*> variants[] = {{Variant::baseline, "baseline"},
                                                        {Variant::sft, "+SFT"},
                                                        {Variant::sft_dec, "+SFT-Dec"},
                                                        {Variant::sft_fdec, "+SFT-FDec"}};

    std::vector<std::vector<EvalReport>> stage_reports(3);
    for (const auto& [variant, label] : variants) {
        TrainingConfig tc = cfg.train;
        tc.variant = variant;
        tc.schedule_mode = ScheduleMode::three_stage;
        const std::string prefix = (fs::path(out_dir) / variant_name(variant)).string();
        const TrainedRun run = train_and_save(train_set, tc, prefix);
        for (int s = 0; s < 3; ++s) {
            EvalReport rep = evaluate(eval_set, run.result.checkpoints[size_t(s)],
                                      run.checkpoint_paths[size_t(s)], data);
            stage_reports[size_t(s)].push_back(rep);
            std::printf("%s-S%d psnr=%.4f ssim=%.4f\n", label, s + 1, rep.mean_psnr, rep.mean_ssim);
        }
    }
    for (int s = 0; s < 3; ++s)
        for (size_t v = 0; v < 4; ++v)
            rows.push_back({std::string(variants[v].second) + "-S" + std::to_string(s + 1),
                            stage_reports[size_t(s)][v].mean_psnr,
                            stage_reports[size_t(s)][v].mean_ssim});

    // the end-to-end run of the final model
    TrainingConfig tc = cfg.train;
    tc.variant = Variant::sft_dec;
    tc.schedule_mode = ScheduleMode::end_to_end;
    const std::string prefix = (fs::path(out_dir) / "sft_dec_end").string();
    const TrainedRun e2e = train_and_save(train_set, tc, prefix);
    EvalReport rep = evaluate(eval_set, e2e.result.checkpoints[0], e2e.checkpoint_paths[0], data);
    std::printf("+SFT-Dec-end psnr=%.4f ssim=%.4f\n", rep.mean_psnr, rep.mean_ssim);
    rows.push_back({"+SFT-Dec-end", rep.mean_psnr, rep.mean_ssim});

    std::string table = "# ablation: variant x stage -> PSNR / SSIM\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s %.4f %.4f\n", r.label.c_str(), r.psnr, r.ssim);
        table += buf;
    }
    const std::string table_path = (fs::path(out_dir) / "ablation.txt").string();
    io::detail::write_file(table_path, std::vector<uint8_t>(table.begin(), table.end()));
    std::printf("table %s\n", table_path.c_str());
    return 0;
}

int cmd_gradcheck(bool corrupt) {
    const auto cases = gradcheck_suite(corrupt);
    const auto results = run_gradient_checks(cases);
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("%-28s max_rel_err=%.3e %s\n", r.name.c_str(), r.max_rel_err,
                    r.ok ? "ok" : "FAIL");
        all_ok = all_ok && r.ok;
    }
    std::printf("%zu checks, %s\n", results.size(), all_ok ? "all passed" : "FAILURES PRESENT");
    if (!all_ok) throw InternalError("gradient check failures");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"single-image defocus deblurring via defocus-map-conditioned feature modulation"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (1 = bit-reproducible)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic blur dataset");
    std::string s_out, s_size = "64x64", s_map = "gaussian_field";
    int s_count = 16, s_levels = 16;
    double s_sigma = 3.0, s_noise = 0.002;
    uint64_t s_seed = 1;
    synth->add_option("--out", s_out, "output directory")->required();
    synth->add_option("--count", s_count, "number of triplets");
    synth->add_option("--size", s_size, "image size WxH");
    synth->add_option("--sigma-max", s_sigma, "maximum blur sigma in pixels");
    synth->add_option("--noise-sigma", s_noise, "additive noise level");
    synth->add_option("--levels", s_levels, "blur quantization levels");
    synth->add_option("--map-model", s_map, "gaussian_field | tilted_plane");
    synth->add_option("--seed", s_seed, "generator seed");

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    std::string t_data, t_config, t_variant, t_schedule, t_out;
    train->add_option("--data", t_data, "dataset directory or manifest")->required();
    train->add_option("--config", t_config, "config file");
    train->add_option("--variant", t_variant, "baseline | sft | sft_dec | sft_fdec");
    train->add_option("--schedule", t_schedule, "three_stage | end_to_end");
    train->add_option("--out", t_out, "checkpoint prefix")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    std::string e_data, e_ckpt, e_report;
    eval->add_option("--data", e_data, "dataset directory or manifest")->required();
    eval->add_option("--ckpt", e_ckpt, "checkpoint file")->required();
    eval->add_option("--report", e_report, "report output path");

    auto* infer = app.add_subcommand("infer", "deblur one image");
    std::string i_input, i_ckpt, i_out, i_map;
    infer->add_option("--input", i_input, "input PNG")->required();
    infer->add_option("--ckpt", i_ckpt, "checkpoint file")->required();
    infer->add_option("--out", i_out, "output PNG")->required();
    infer->add_option("--dump-map", i_map, "write the estimated defocus map as DMF");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate all variants");
    std::string a_data, a_config, a_out, a_eval;
    ablate->add_option("--data", a_data, "training dataset")->required();
    ablate->add_option("--config", a_config, "config file");
    ablate->add_option("--out", a_out, "output directory")->required();
    ablate->add_option("--eval-data", a_eval, "held-out dataset (defaults to --data)");

    auto* gradcheck = app.add_subcommand("gradcheck", "run the gradient verification suite");
    bool g_corrupt = false;
    gradcheck->add_flag("--corrupt", g_corrupt,
                        "include a deliberately wrong derivative (sensitivity fixture)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    set_thread_count(threads);
    try {
        if (synth->parsed())
            return cmd_synth(s_out, s_count, s_size, s_sigma, s_noise, s_levels, s_map, s_seed);
        if (train->parsed()) return cmd_train(t_data, t_config, t_variant, t_schedule, t_out);
        if (eval->parsed()) return cmd_eval(e_data, e_ckpt, e_report);
        if (infer->parsed()) return cmd_infer(i_input, i_ckpt, i_out, i_map);
        if (ablate->parsed()) return cmd_ablate(a_data, a_config, a_out, a_eval);
        if (gradcheck->parsed()) return cmd_gradcheck(g_corrupt);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
    return 1;
}
