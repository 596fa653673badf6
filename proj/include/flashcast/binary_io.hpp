#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flashcast/error.hpp"

namespace flashcast::binary {

// Both the dataset and checkpoint containers share this framing:
// magic bytes, little-endian uint64 header length, UTF-8 JSON header, raw payload.

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(const unsigned char* b) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f32(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    } else {
        std::vector<std::uint32_t> swapped(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
            const auto u = std::bit_cast<std::uint32_t>(values[i]);
            swapped[i] = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
        }
        out.write(reinterpret_cast<const char*>(swapped.data()), static_cast<std::streamsize>(swapped.size() * 4));
    }
}

inline void decode_f32(const unsigned char* src, std::span<float> dst) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst.data(), src, dst.size_bytes());
    } else {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            std::uint32_t u = 0;
            for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(src[4 * i + k]) << (8 * k);
            dst[i] = std::bit_cast<float>(u);
        }
    }
}

struct Framed {
    std::string header;           // JSON text
    std::uint64_t payload_offset;  // absolute byte offset of the payload
    std::uint64_t file_size;
};

inline void write_frame_header(std::ostream& out, const std::string& magic, const std::string& json) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    put_u64(out, json.size());
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
}

// Reads magic and JSON header; payload is left for the caller.
inline Framed read_frame_header(std::ifstream& in, const std::string& magic, const std::string& path) {
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    in.seekg(0);
    if (size < magic.size() + 8) throw FormatError(path + ": file too short for header", size);
    std::string got(magic.size(), '\0');
    in.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (got != magic) throw FormatError(path + ": bad magic (expected " + magic + ")", 0);
    unsigned char len[8];
    in.read(reinterpret_cast<char*>(len), 8);
    const std::uint64_t n = get_u64(len);
    const std::uint64_t start = magic.size() + 8;
    if (n > size - start) throw FormatError(path + ": header length exceeds file size", magic.size());
    Framed f{std::string(n, '\0'), start + n, size};
    in.read(f.header.data(), static_cast<std::streamsize>(n));
    if (!in) throw FormatError(path + ": truncated header", start);
    return f;
}

}  // namespace flashcast::binary
