#pragma once

// Evaluation report and training log writers. Both are line-oriented text:
// the report has a [means] block followed by per-image rows, the log has
// one key-value record per epoch.

#include <string>

#include "defocus/io/dmf.hpp"
#include "defocus/metrics.hpp"
#include "defocus/train.hpp"

namespace defocus::io {

inline std::string format_report(const EvalReport& rep) {
    char buf[256];
    std::string out = "# defocus eval report\n";
    out += "checkpoint = " + rep.checkpoint_id + "\n";
    out += "dataset = " + rep.dataset_id + "\n";
    out += "variant = " + rep.variant + "\n";
    out += "count = " + std::to_string(rep.rows.size()) + "\n";
    out += "[means]\n";
    std::snprintf(buf, sizeof buf, "psnr = %.10f\nssim = %.10f\nmae_dm = %.10f\nmse_dm = %.10f\n",
                  rep.mean_psnr, rep.mean_ssim, rep.mean_mae, rep.mean_mse);
    out += buf;
    out += "[images]\n";
    out += "# id psnr ssim mae_dm mse_dm\n";
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof buf, "%s %.10f %.10f %.10f %.10f\n", r.id.c_str(), r.psnr, r.ssim,
                      r.mae_dm, r.mse_dm);
        out += buf;
    }
    return out;
}

inline void write_report(const std::string& path, const EvalReport& rep) {
    const std::string text = format_report(rep);
    detail::write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

inline std::string format_train_log(const TrainLog& log) {
    std::string out;
    char buf[256];
    for (const auto& r : log.records) {
        std::snprintf(buf, sizeof buf,
                      "epoch=%d stage=%d l_dme=%.8f l_df=%.8f l_wd=%.8f loss=%.8f\n", r.epoch,
                      r.stage, r.l_dme, r.l_df, r.l_wd, r.loss);
        out += buf;
    }
    return out;
}

inline void write_train_log(const std::string& path, const TrainLog& log) {
    const std::string text = format_train_log(log);
    detail::write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

}  // namespace defocus::io
