#pragma once

// Checkpoint format: "CKPT", u32 version=1, u32 tensor count, then per
// tensor (u32 name length, name, u32 ndim, dims as u32, float32 payload),
// all little-endian, closed by a CRC32 over every preceding byte.
// Pseudo-tensors meta.variant and meta.arch carry the variant id and the
// architecture so a checkpoint reconstructs its model exactly.

#include <zlib.h>

#include <cstring>
#include <string>
#include <vector>

#include "defocus/io/dmf.hpp"
#include "defocus/model.hpp"

namespace defocus::io {

inline constexpr uint32_t kCheckpointVersion = 1;

inline std::vector<uint8_t> encode_checkpoint(const ModelParams<float>& mp) {
    std::vector<std::pair<std::string, Tensor<float>>> entries(mp.params.begin(), mp.params.end());
    entries.emplace_back("meta.variant",
                         Tensor<float>({1}, {float(int(mp.variant))}));
    entries.emplace_back(
        "meta.arch",
        Tensor<float>({5}, {float(mp.arch.dme_channels), float(mp.arch.dme_blocks),
                            float(mp.arch.cond_channels), float(mp.arch.deblur_channels),
                            float(mp.arch.deblur_blocks)}));

    std::vector<uint8_t> out;
    out.insert(out.end(), {'C', 'K', 'P', 'T'});
    detail::put_u32_le(out, kCheckpointVersion);
    detail::put_u32_le(out, uint32_t(entries.size()));
    for (const auto& [name, t] : entries) {
        detail::put_u32_le(out, uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        detail::put_u32_le(out, uint32_t(t.shape().size()));
        for (int d : t.shape()) detail::put_u32_le(out, uint32_t(d));
        for (int64_t i = 0; i < t.numel(); ++i) detail::put_f32_le(out, t[i]);
    }
    const uint32_t crc = uint32_t(::crc32(0L, out.data(), uInt(out.size())));
    detail::put_u32_le(out, crc);
    return out;
}

inline ModelParams<float> decode_checkpoint(const std::vector<uint8_t>& bytes,
                                            const std::string& origin) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "CKPT", 4) != 0)
        throw DataError("checkpoint: " + origin + " has no CKPT magic");
    const uint32_t stored_crc = detail::get_u32_le(bytes.data() + bytes.size() - 4);
    const uint32_t crc = uint32_t(::crc32(0L, bytes.data(), uInt(bytes.size() - 4)));
    if (crc != stored_crc)
        throw DataError("checkpoint: " + origin + " is corrupt (CRC mismatch)");

    size_t pos = 4;
    auto need = [&](size_t n) {
        if (pos + n > bytes.size() - 4) throw DataError("checkpoint: " + origin + " is truncated");
    };
    auto u32 = [&] {
        need(4);
        const uint32_t v = detail::get_u32_le(bytes.data() + pos);
        pos += 4;
        return v;
    };
    const uint32_t version = u32();
    if (version != kCheckpointVersion)
        throw DataError("checkpoint: " + origin + " has unsupported version " +
                        std::to_string(version));
    const uint32_t count = u32();
    std::vector<std::pair<std::string, Tensor<float>>> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = u32();
        need(name_len);
        std::string name(bytes.begin() + long(pos), bytes.begin() + long(pos + name_len));
        pos += name_len;
        const uint32_t ndim = u32();
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = int(u32());
        const int64_t numel = shape_numel(shape);
        need(size_t(numel) * 4);
        std::vector<float> values(static_cast<size_t>(numel));
        for (int64_t j = 0; j < numel; ++j)
            values[size_t(j)] = detail::get_f32_le(bytes.data() + pos + size_t(j) * 4);
        pos += size_t(numel) * 4;
        for (const auto& [n, t] : entries)
            if (n == name) throw DataError("checkpoint: " + origin + " repeats tensor " + name);
        entries.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
    }

    // split meta from parameters
    const Tensor<float>* meta_variant = nullptr;
    const Tensor<float>* meta_arch = nullptr;
    for (const auto& [n, t] : entries) {
        if (n == "meta.variant") meta_variant = &t;
        if (n == "meta.arch") meta_arch = &t;
    }
    if (!meta_variant || meta_variant->numel() != 1 || !meta_arch || meta_arch->numel() != 5)
        throw DataError("checkpoint: " + origin + " is missing meta tensors");
    const int vid = int((*meta_variant)[0]);
    if (vid < 0 || vid > 3) throw DataError("checkpoint: " + origin + " has unknown variant id");

    ModelParams<float> mp;
    mp.variant = Variant(vid);
    mp.arch = ArchConfig{int((*meta_arch)[0]), int((*meta_arch)[1]), int((*meta_arch)[2]),
                         int((*meta_arch)[3]), int((*meta_arch)[4])};

    // validate the parameter set against the architecture it claims
    ModelParams<float> expected = init_model<float>(mp.variant, mp.arch, 0);
    for (auto& [name, t] : expected.params) {
        bool found = false;
        for (auto& [n, loaded] : entries) {
            if (n != name) continue;
            if (!shape_eq(loaded.shape(), t.shape()))
                throw DataError("checkpoint: " + origin + " tensor " + name + " has shape " +
                                shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
            mp.params.emplace_back(name, loaded);
            mp.params.back().second.set_requires_grad(true);
            found = true;
            break;
        }
        if (!found) throw DataError("checkpoint: " + origin + " is missing tensor " + name);
    }
    if (mp.params.size() + 2 != entries.size())
        throw DataError("checkpoint: " + origin + " contains unexpected extra tensors");
    return mp;
}

inline void write_checkpoint(const std::string& path, const ModelParams<float>& mp) {
    detail::write_file(path, encode_checkpoint(mp));
}

inline ModelParams<float> read_checkpoint(const std::string& path) {
    return decode_checkpoint(detail::read_file(path), path);
}

}  // namespace defocus::io
