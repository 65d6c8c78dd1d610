#pragma once

// DMF defocus map format: "DMF1\n", one ASCII "<width> <height>\n" line,
// then width*height little-endian float32 sigmas, row-major from top-left.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "defocus/blur.hpp"
#include "defocus/common.hpp"

namespace defocus::io {

namespace detail {

inline void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v & 0xFF));
    out.push_back(uint8_t((v >> 8) & 0xFF));
    out.push_back(uint8_t((v >> 16) & 0xFF));
    out.push_back(uint8_t((v >> 24) & 0xFF));
}

inline uint32_t get_u32_le(const uint8_t* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

inline void put_f32_le(std::vector<uint8_t>& out, float v) {
    put_u32_le(out, std::bit_cast<uint32_t>(v));
}

inline float get_f32_le(const uint8_t* p) { return std::bit_cast<float>(get_u32_le(p)); }

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("cannot open " + path);
    std::fseek(fp, 0, SEEK_END);
    const long size = std::ftell(fp);
    std::fseek(fp, 0, SEEK_SET);
    std::vector<uint8_t> buf(size > 0 ? size_t(size) : 0);
    if (!buf.empty() && std::fread(buf.data(), 1, buf.size(), fp) != buf.size()) {
        std::fclose(fp);
        throw DataError("short read on " + path);
    }
    std::fclose(fp);
    return buf;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DataError("cannot open " + path + " for writing");
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), fp) != bytes.size()) {
        std::fclose(fp);
        throw DataError("short write on " + path);
    }
    std::fclose(fp);
}

}  // namespace detail

inline std::vector<uint8_t> encode_dmf(const DefocusMapF& map) {
    for (float v : map.sigma)
        if (!std::isfinite(v) || v < 0.f)
            throw DataError("dmf: map contains a negative or non-finite sigma");
    std::vector<uint8_t> out;
    const std::string header =
        "DMF1\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n";
    out.insert(out.end(), header.begin(), header.end());
    out.reserve(out.size() + map.sigma.size() * 4);
    for (float v : map.sigma) detail::put_f32_le(out, v);
    return out;
}

inline DefocusMapF decode_dmf(const std::vector<uint8_t>& bytes, const std::string& origin) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), "DMF1\n", 5) != 0)
        throw DataError("dmf: " + origin + " has no DMF1 magic");
    size_t pos = 5;
    size_t eol = pos;
    while (eol < bytes.size() && bytes[eol] != '\n') ++eol;
    if (eol == bytes.size()) throw DataError("dmf: " + origin + " is missing the size line");
    const std::string dims(bytes.begin() + long(pos), bytes.begin() + long(eol));
    int w = 0, h = 0;
    if (std::sscanf(dims.c_str(), "%d %d", &w, &h) != 2 || w <= 0 || h <= 0)
        throw DataError("dmf: " + origin + " has a malformed size line '" + dims + "'");
    pos = eol + 1;
    const size_t expect = size_t(w) * size_t(h) * 4;
    if (bytes.size() - pos != expect)
        throw DataError("dmf: " + origin + " payload is " + std::to_string(bytes.size() - pos) +
                        " bytes, expected " + std::to_string(expect));
    DefocusMapF map(h, w);
    for (size_t i = 0; i < size_t(w) * size_t(h); ++i) {
        const float v = detail::get_f32_le(bytes.data() + pos + i * 4);
        if (!std::isfinite(v) || v < 0.f)
            throw DataError("dmf: " + origin + " contains a negative or non-finite sigma");
        map.sigma[i] = v;
    }
    return map;
}

inline void write_dmf(const std::string& path, const DefocusMapF& map) {
    detail::write_file(path, encode_dmf(map));
}

inline DefocusMapF read_dmf(const std::string& path) {
    return decode_dmf(detail::read_file(path), path);
}

}  // namespace defocus::io
