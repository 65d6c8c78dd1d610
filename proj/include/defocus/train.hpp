#pragma once

// Three-stage schedule: stage 1 trains jointly with the ground-truth map
// feeding the deblur branch, stage 2 switches the branch to the estimated
// map, stage 3 fine-tunes with the defocus-weighted objective. Optimizer
// state is reset at stage boundaries. The end-to-end mode trains once with
// the stage-1/2 objective and the estimated map for the full epoch budget.

#include <chrono>
#include <string>
#include <vector>

#include "defocus/adam.hpp"
#include "defocus/augment.hpp"
#include "defocus/loss.hpp"
#include "defocus/model.hpp"

namespace defocus {

enum class ScheduleMode { three_stage, end_to_end };

inline const char* schedule_name(ScheduleMode m) {
    return m == ScheduleMode::three_stage ? "three_stage" : "end_to_end";
}

struct TrainingConfig {
    double lambda1 = 0.2;
    double lambda2 = 0.9;
    double lambda3 = 0.1;
    int epochs_stage1 = 40;
    int epochs_stage2 = 20;
    int epochs_stage3 = 40;
    int batch_size = 8;
    int crop_size = 64;
    double learning_rate = 1e-4;
    uint64_t seed = 0;
    Variant variant = Variant::sft_dec;
    bool flips = true;
    bool rotations = true;
    ScheduleMode schedule_mode = ScheduleMode::three_stage;
    ArchConfig arch;

    void validate() const {
        if (lambda1 <= 0 || lambda2 <= 0 || lambda3 <= 0)
            throw ConfigError("loss weights must be positive");
        if (epochs_stage1 < 0 || epochs_stage2 < 0 || epochs_stage3 < 0)
            throw ConfigError("epoch counts must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (crop_size < 1) throw ConfigError("crop_size must be >= 1");
        if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
        arch.validate();
    }
};

struct EpochRecord {
    int epoch = 0;  // global across the schedule, 1-based
    int stage = 0;  // 1..3, or 0 for end_to_end
    double l_dme = 0, l_df = 0, l_wd = 0, loss = 0;
    double wall_seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> records;
};

namespace detail {

struct Batch {
    Tensor<float> blurry, sharp, map;
};

inline Batch stack_batch(const std::vector<Triplet>& samples) {
    const int n = static_cast<int>(samples.size());
    const int h = samples[0].sharp.height, w = samples[0].sharp.width;
    Batch b{Tensor<float>({n, 3, h, w}), Tensor<float>({n, 3, h, w}), Tensor<float>({n, 1, h, w})};
    const int64_t plane = int64_t(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy(samples[i].blurry.values.begin(), samples[i].blurry.values.end(),
                  b.blurry.data() + int64_t(i) * 3 * plane);
        std::copy(samples[i].sharp.values.begin(), samples[i].sharp.values.end(),
                  b.sharp.data() + int64_t(i) * 3 * plane);
        std::copy(samples[i].map.sigma.begin(), samples[i].map.sigma.end(),
                  b.map.data() + int64_t(i) * plane);
    }
    return b;
}

class AdamOptimizer {
public:
    AdamOptimizer(const ModelParams<float>& mp, double lr) {
        states_.resize(mp.params.size());
        for (auto& s : states_) s.learning_rate = static_cast<float>(lr);
    }

    void step(ModelParams<float>& mp) {
        for (size_t i = 0; i < mp.params.size(); ++i) {
            auto& t = mp.params[i].second;
            if (t.grad().size() != size_t(t.numel()))
                throw InternalError("optimizer: missing gradient for " + mp.params[i].first);
            adam_step<float>(t.values(), t.grad(), states_[i]);
        }
    }

private:
    std::vector<AdamState<float>> states_;
};

template <typename T>
ModelParams<T> clone_params(const ModelParams<T>& mp) {
    ModelParams<T> out;
    out.variant = mp.variant;
    out.arch = mp.arch;
    for (const auto& [name, t] : mp.params) out.params.emplace_back(name, t.clone());
    return out;
}

}  // namespace detail

/// Runs one stage (1, 2, 3, or 0 for the end-to-end objective) for
/// `epochs` epochs, mutating `params`. Appends one record per epoch to the
/// log, with the global epoch counter continuing from `epoch_base`.
inline void train_stage(int stage_id, int epochs, const std::vector<Triplet>& dataset,
                        ModelParams<float>& params, const TrainingConfig& cfg, TrainLog& log,
                        int epoch_base = 0) {
    cfg.validate();
    tune_allocator();
    if (dataset.empty()) throw DataError("train_stage: empty dataset");
    for (const auto& t : dataset)
        if (t.sharp.height < cfg.crop_size || t.sharp.width < cfg.crop_size)
            throw DataError("train_stage: crop_size " + std::to_string(cfg.crop_size) +
                            " exceeds a dataset image");

    const float l1 = static_cast<float>(cfg.lambda1);
    const float l2 = static_cast<float>(cfg.lambda2);
    const float l3 = static_cast<float>(cfg.lambda3);
    detail::AdamOptimizer opt(params, cfg.learning_rate);  // fresh moments per stage

    std::vector<int64_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(mix_seed(cfg.seed, (uint64_t(stage_id) << 32) | uint64_t(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[size_t(shuffle_rng.uniform_int(int64_t(i)))]);

        double sum_dme = 0, sum_df = 0, sum_wd = 0, sum_loss = 0;
        int64_t batches = 0;
        for (size_t pos = 0; pos < order.size(); pos += size_t(cfg.batch_size)) {
            const size_t end = std::min(order.size(), pos + size_t(cfg.batch_size));
            std::vector<Triplet> samples;
            samples.reserve(end - pos);
            for (size_t i = pos; i < end; ++i) {
                const uint64_t aug_seed =
                    mix_seed(cfg.seed, mix_seed((uint64_t(stage_id) << 48) | (uint64_t(epoch) << 24),
                                                uint64_t(order[i])));
                samples.push_back(
                    augment(dataset[size_t(order[i])], aug_seed, cfg.crop_size, cfg.flips, cfg.rotations));
            }
            detail::Batch b = detail::stack_batch(samples);

            Tape<float> tape;
            auto dm_e = dme_forward(&tape, b.blurry, params);
            const Tensor<float>& map_for_deblur = stage_id == 1 ? b.map : dm_e;
            const Tensor<float> cond = params.variant == Variant::baseline
                                           ? map_for_deblur
                                           : condition_forward(&tape, map_for_deblur, params);
            auto out = deblur_forward(&tape, b.blurry, cond, params, params.variant, false);

            auto l_df = loss_df(&tape, out, b.sharp);
            Tensor<float> loss;
            double v_dme, v_wd;
            if (stage_id == 3) {
                auto l_wd = loss_wd(&tape, out, b.sharp, b.map);
                loss = composite_loss_stage3(&tape, l_df, l_wd, l2, l3);
                v_wd = l_wd[0];
                v_dme = loss_dme<float>(nullptr, dm_e, b.map)[0];
            } else {
                auto l_dme = loss_dme(&tape, dm_e, b.map);
                loss = composite_loss_stage12(&tape, l_dme, l_df, l1, l2);
                v_dme = l_dme[0];
                v_wd = loss_wd<float>(nullptr, out, b.sharp, b.map)[0];
            }
            tape.backward(loss);
            opt.step(params);

            sum_dme += v_dme;
            sum_df += l_df[0];
            sum_wd += v_wd;
            sum_loss += loss[0];
            ++batches;
        }
        const auto t1 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch_base + epoch;
        rec.stage = stage_id;
        rec.l_dme = sum_dme / double(batches);
        rec.l_df = sum_df / double(batches);
        rec.l_wd = sum_wd / double(batches);
        rec.loss = sum_loss / double(batches);
        rec.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        log.records.push_back(rec);
    }
}

struct ScheduleResult {
    std::vector<ModelParams<float>> checkpoints;  // one per stage, or one for end_to_end
    TrainLog log;
};

/// Full training run from fresh initialization.
inline ScheduleResult run_schedule(const std::vector<Triplet>& dataset, const TrainingConfig& cfg) {
    cfg.validate();
    ScheduleResult r;
    ModelParams<float> params = init_model<float>(cfg.variant, cfg.arch, cfg.seed);
    if (cfg.schedule_mode == ScheduleMode::three_stage) {
        train_stage(1, cfg.epochs_stage1, dataset, params, cfg, r.log, 0);
        r.checkpoints.push_back(detail::clone_params(params));
        train_stage(2, cfg.epochs_stage2, dataset, params, cfg, r.log, cfg.epochs_stage1);
        r.checkpoints.push_back(detail::clone_params(params));
        train_stage(3, cfg.epochs_stage3, dataset, params, cfg, r.log,
                    cfg.epochs_stage1 + cfg.epochs_stage2);
        r.checkpoints.push_back(detail::clone_params(params));
    } else {
        const int total = cfg.epochs_stage1 + cfg.epochs_stage2 + cfg.epochs_stage3;
        train_stage(0, total, dataset, params, cfg, r.log, 0);
        r.checkpoints.push_back(detail::clone_params(params));
    }
    return r;
}

}  // namespace defocus
