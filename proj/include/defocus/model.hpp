#pragma once

// The three sub-networks: defocus map estimation (residual CNN ending in
// softplus), a three-conv condition encoder, and the deblurring network
// built from conditioned res-blocks. Conditioning is an affine feature
// modulation gamma (.) F + beta whose parameters are generated from the
// condition features; the decomposed variants factor gamma into a channel
// vector and a spatial map combined by broadcast product.
//
// Variants mirror the ablation grid: `baseline` drops modulation entirely
// and instead concatenates the defocus map to each block input; `sft` uses
// full per-pixel heads for gamma and beta; `sft_dec` decomposes gamma only;
// `sft_fdec` decomposes both.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "defocus/ops.hpp"

namespace defocus {

enum class Variant { baseline, sft, sft_dec, sft_fdec };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::sft: return "sft";
        case Variant::sft_dec: return "sft_dec";
        case Variant::sft_fdec: return "sft_fdec";
    }
    return "?";
}

inline std::optional<Variant> parse_variant(const std::string& s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "sft") return Variant::sft;
    if (s == "sft_dec") return Variant::sft_dec;
    if (s == "sft_fdec") return Variant::sft_fdec;
    return std::nullopt;
}

struct ArchConfig {
    int dme_channels = 8;
    int dme_blocks = 2;
    int cond_channels = 8;
    int deblur_channels = 16;
    int deblur_blocks = 2;

    void validate() const {
        if (dme_channels < 1 || dme_blocks < 0 || cond_channels < 1 || deblur_channels < 1 ||
            deblur_blocks < 0)
            throw ConfigError("architecture channel/block counts must be positive");
    }
};

template <typename T>
struct ModelParams {
    Variant variant = Variant::sft_dec;
    ArchConfig arch;
    std::vector<std::pair<std::string, Tensor<T>>> params;

    void add(std::string name, Tensor<T> t) {
        if (has(name)) throw InternalError("duplicate parameter name " + name);
        t.set_requires_grad(true);
        params.emplace_back(std::move(name), std::move(t));
    }

    bool has(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return true;
        return false;
    }

    const Tensor<T>& at(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return t;
        throw InternalError("unknown parameter " + name);
    }

    Tensor<T>& at(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return t;
        throw InternalError("unknown parameter " + name);
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (const auto& [name, t] : params) n += t.numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& [name, t] : params)
            if (!t.all_finite()) return false;
        return true;
    }
};

inline constexpr double kLeakySlope = 0.1;

// sigmoid(x) = 1/sqrt(2) at this bias; two decomposed gamma factors
// initialized here multiply to exactly 1, so modulation starts at identity
inline constexpr double kGammaIdentityBias = 0.88137358701954305;

namespace detail {

template <typename T>
Tensor<T> he_conv(Rng& rng, int cout, int cin, int k) {
    const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
    const double stddev = gain / std::sqrt(double(cin) * k * k);
    return Tensor<T>::randn({cout, cin, k, k}, rng, static_cast<T>(stddev));
}

template <typename T>
void add_conv(ModelParams<T>& mp, Rng& rng, const std::string& name, int cout, int cin, int k,
              bool zero_weight = false, double bias_value = 0.0) {
    mp.add(name + ".w", zero_weight ? Tensor<T>::zeros({cout, cin, k, k})
                                    : he_conv<T>(rng, cout, cin, k));
    mp.add(name + ".b", Tensor<T>::full({cout}, static_cast<T>(bias_value)));
}

}  // namespace detail

/// Builds and initializes all parameter tensors for a variant. Heads that
/// produce modulation parameters or final residuals start at zero so the
/// whole model is the identity map at initialization.
template <typename T>
ModelParams<T> init_model(Variant variant, const ArchConfig& arch, uint64_t seed) {
    arch.validate();
    ModelParams<T> mp;
    mp.variant = variant;
    mp.arch = arch;
    Rng rng(mix_seed(seed, 0x706172616dULL));
    const int cd = arch.dme_channels, cc = arch.cond_channels, cf = arch.deblur_channels;
    const int hh = cc;  // hidden width of the two-conv modulation heads

    detail::add_conv(mp, rng, "dme.head", cd, 3, 3);
    for (int i = 0; i < arch.dme_blocks; ++i) {
        const std::string p = "dme.rb" + std::to_string(i);
        detail::add_conv(mp, rng, p + ".c1", cd, cd, 3);
        detail::add_conv(mp, rng, p + ".c2", cd, cd, 3);
    }
    detail::add_conv(mp, rng, "dme.tail", 1, cd, 3, /*zero_weight=*/true);

    if (variant != Variant::baseline) {
        detail::add_conv(mp, rng, "cond.c1", cc, 1, 3);
        detail::add_conv(mp, rng, "cond.c2", cc, cc, 3);
        detail::add_conv(mp, rng, "cond.c3", cc, cc, 3);
    }

    detail::add_conv(mp, rng, "deblur.head", cf, 3, 3);
    const int block_in = variant == Variant::baseline ? cf + 1 : cf;
    for (int i = 0; i < arch.deblur_blocks; ++i) {
        const std::string p = "deblur.rb" + std::to_string(i);
        detail::add_conv(mp, rng, p + ".c1", cf, block_in, 3);
        detail::add_conv(mp, rng, p + ".c2", cf, cf, 3);
        if (variant == Variant::sft) {
            detail::add_conv(mp, rng, p + ".gamma.c1", hh, cc, 3);
            detail::add_conv(mp, rng, p + ".gamma.c2", cf, hh, 3, /*zero_weight=*/true);
        } else if (variant == Variant::sft_dec || variant == Variant::sft_fdec) {
            detail::add_conv(mp, rng, p + ".gamma_c", cf, cc, 1, /*zero_weight=*/true,
                             kGammaIdentityBias);
            detail::add_conv(mp, rng, p + ".gamma_s", 1, 1, 3, /*zero_weight=*/true,
                             kGammaIdentityBias);
        }
        if (variant == Variant::sft || variant == Variant::sft_dec) {
            detail::add_conv(mp, rng, p + ".beta.c1", hh, cc, 3);
            detail::add_conv(mp, rng, p + ".beta.c2", cf, hh, 3, /*zero_weight=*/true);
        } else if (variant == Variant::sft_fdec) {
            // beta_c starts at zero, beta_s keeps live weights so the
            // product has nonzero gradients from the first step
            detail::add_conv(mp, rng, p + ".beta_c", cf, cc, 1, /*zero_weight=*/true);
            detail::add_conv(mp, rng, p + ".beta_s", 1, 1, 3);
        }
    }
    detail::add_conv(mp, rng, "deblur.tail", 3, cf, 3, /*zero_weight=*/true);
    return mp;
}

template <typename T>
struct SftParams {
    Tensor<T> gamma;  // [N,C,H,W], strictly inside (0,2)
    Tensor<T> beta;   // [N,C,H,W]
};

/// SFT(F) = gamma (.) F + beta.
template <typename T>
Tensor<T> sft_apply(Tape<T>* tape, const Tensor<T>& f, const SftParams<T>& p) {
    return add(tape, mul(tape, p.gamma, f), p.beta);
}

/// Generates the modulation pair for one conditioned res-block.
/// sft: independent two-conv heads on the condition features; the gamma
/// head ends in 2*sigmoid, the beta head is linear.
/// sft_dec: gamma factored into a channel gain (pool -> 1x1 conv ->
/// 2*sigmoid) and a spatial gain (channel mean -> 3x3 conv -> sigmoid),
/// combined by broadcast product; beta as in sft.
/// sft_fdec: beta decomposed the same way, with linear factor heads.
template <typename T>
SftParams<T> generate_sft_params(Tape<T>* tape, const Tensor<T>& cond, int block_index,
                                 const ModelParams<T>& mp, Variant variant) {
    if (variant == Variant::baseline)
        throw InternalError("generate_sft_params: baseline variant has no modulation parameters");
    const std::string p = "deblur.rb" + std::to_string(block_index);
    SftParams<T> out;
    const T slope = static_cast<T>(kLeakySlope);

    if (variant == Variant::sft) {
        auto g = conv2d(tape, cond, mp.at(p + ".gamma.c1.w"), mp.at(p + ".gamma.c1.b"));
        g = conv2d(tape, leaky_relu(tape, g, slope), mp.at(p + ".gamma.c2.w"), mp.at(p + ".gamma.c2.b"));
        out.gamma = scale(tape, sigmoid(tape, g), T(2));
    } else {
        auto gc = conv2d(tape, global_avg_pool_spatial(tape, cond), mp.at(p + ".gamma_c.w"),
                         mp.at(p + ".gamma_c.b"));
        auto gs = conv2d(tape, mean_over_channels(tape, cond), mp.at(p + ".gamma_s.w"),
                         mp.at(p + ".gamma_s.b"));
        out.gamma = mul(tape, scale(tape, sigmoid(tape, gc), T(2)), sigmoid(tape, gs));
    }

    if (variant == Variant::sft_fdec) {
        auto bc = conv2d(tape, global_avg_pool_spatial(tape, cond), mp.at(p + ".beta_c.w"),
                         mp.at(p + ".beta_c.b"));
        auto bs = conv2d(tape, mean_over_channels(tape, cond), mp.at(p + ".beta_s.w"),
                         mp.at(p + ".beta_s.b"));
        out.beta = mul(tape, bc, bs);
    } else {
        auto b = conv2d(tape, cond, mp.at(p + ".beta.c1.w"), mp.at(p + ".beta.c1.b"));
        out.beta = conv2d(tape, leaky_relu(tape, b, slope), mp.at(p + ".beta.c2.w"),
                          mp.at(p + ".beta.c2.b"));
    }
    return out;
}

/// Residual block with conditioning. Modulated variants apply SFT to the
/// block input before the first conv; the skip connection adds the raw,
/// unmodulated input. The baseline concatenates the condition channel to
/// the first conv's input instead.
template <typename T>
Tensor<T> conditioned_resblock(Tape<T>* tape, const Tensor<T>& f, const Tensor<T>& cond,
                               int block_index, const ModelParams<T>& mp, Variant variant) {
    if (f.dim(2) != cond.dim(2) || f.dim(3) != cond.dim(3))
        throw InternalError("conditioned_resblock: features " + shape_str(f.shape()) +
                            " not spatially aligned with condition " + shape_str(cond.shape()));
    const std::string p = "deblur.rb" + std::to_string(block_index);
    const T slope = static_cast<T>(kLeakySlope);
    Tensor<T> h;
    if (variant == Variant::baseline) {
        h = conv2d(tape, concat_channels(tape, f, cond), mp.at(p + ".c1.w"), mp.at(p + ".c1.b"));
    } else {
        const SftParams<T> sft = generate_sft_params(tape, cond, block_index, mp, variant);
        h = conv2d(tape, sft_apply(tape, f, sft), mp.at(p + ".c1.w"), mp.at(p + ".c1.b"));
    }
    h = conv2d(tape, leaky_relu(tape, h, slope), mp.at(p + ".c2.w"), mp.at(p + ".c2.b"));
    return add(tape, f, h);
}

/// Defocus map estimation: conv -> plain res-blocks -> conv -> softplus,
/// so the map is nonnegative and keeps the input's spatial dims.
template <typename T>
Tensor<T> dme_forward(Tape<T>* tape, const Tensor<T>& blurry, const ModelParams<T>& mp) {
    const T slope = static_cast<T>(kLeakySlope);
    auto f = leaky_relu(tape, conv2d(tape, blurry, mp.at("dme.head.w"), mp.at("dme.head.b")), slope);
    for (int i = 0; i < mp.arch.dme_blocks; ++i) {
        const std::string p = "dme.rb" + std::to_string(i);
        auto h = conv2d(tape, f, mp.at(p + ".c1.w"), mp.at(p + ".c1.b"));
        h = conv2d(tape, leaky_relu(tape, h, slope), mp.at(p + ".c2.w"), mp.at(p + ".c2.b"));
        f = add(tape, f, h);
    }
    return softplus(tape, conv2d(tape, f, mp.at("dme.tail.w"), mp.at("dme.tail.b")));
}

/// Condition encoder: exactly three 3x3 convolutions on the defocus map.
template <typename T>
Tensor<T> condition_forward(Tape<T>* tape, const Tensor<T>& map, const ModelParams<T>& mp) {
    const T slope = static_cast<T>(kLeakySlope);
    auto f = leaky_relu(tape, conv2d(tape, map, mp.at("cond.c1.w"), mp.at("cond.c1.b")), slope);
    f = leaky_relu(tape, conv2d(tape, f, mp.at("cond.c2.w"), mp.at("cond.c2.b")), slope);
    return conv2d(tape, f, mp.at("cond.c3.w"), mp.at("cond.c3.b"));
}

/// Deblurring network with a global residual connection: the predicted
/// correction is added to the blurry input. Clamp only at inference.
template <typename T>
Tensor<T> deblur_forward(Tape<T>* tape, const Tensor<T>& blurry, const Tensor<T>& cond,
                         const ModelParams<T>& mp, Variant variant, bool clamp_output = false) {
    if (blurry.dim(2) != cond.dim(2) || blurry.dim(3) != cond.dim(3))
        throw InternalError("deblur_forward: input " + shape_str(blurry.shape()) +
                            " not spatially aligned with condition " + shape_str(cond.shape()));
    const T slope = static_cast<T>(kLeakySlope);
    auto f = leaky_relu(tape, conv2d(tape, blurry, mp.at("deblur.head.w"), mp.at("deblur.head.b")),
                        slope);
    for (int i = 0; i < mp.arch.deblur_blocks; ++i)
        f = conditioned_resblock(tape, f, cond, i, mp, variant);
    auto res = conv2d(tape, f, mp.at("deblur.tail.w"), mp.at("deblur.tail.b"));
    auto out = add(tape, blurry, res);
    return clamp_output ? clamp01(out) : out;
}

enum class MapSource { estimated, ground_truth };

template <typename T>
struct ForwardResult {
    Tensor<T> map_used;
    Tensor<T> deblurred;
};

/// Full pipeline. With the ground-truth source the estimation network is
/// not invoked at all, so no gradient can reach dme.* from the deblurring
/// loss while the condition path still sees a defocus map.
template <typename T>
ForwardResult<T> full_forward(Tape<T>* tape, const Tensor<T>& blurry, MapSource source,
                              const std::optional<Tensor<T>>& gt_map, const ModelParams<T>& mp,
                              bool clamp_output = false) {
    ForwardResult<T> r;
    if (source == MapSource::ground_truth) {
        if (!gt_map.has_value())
            throw InternalError("full_forward: ground_truth map source needs a map");
        if (gt_map->dim(2) != blurry.dim(2) || gt_map->dim(3) != blurry.dim(3))
            throw InternalError("full_forward: supplied map " + shape_str(gt_map->shape()) +
                                " does not match input " + shape_str(blurry.shape()));
        r.map_used = *gt_map;
    } else {
        r.map_used = dme_forward(tape, blurry, mp);
    }
    const Tensor<T> cond = mp.variant == Variant::baseline
                               ? r.map_used
                               : condition_forward(tape, r.map_used, mp);
    r.deblurred = deblur_forward(tape, blurry, cond, mp, mp.variant, clamp_output);
    return r;
}

}  // namespace defocus
