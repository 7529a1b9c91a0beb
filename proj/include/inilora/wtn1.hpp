#pragma once

// WTN1 tensor files: "WTN1", u16 version = 1, u8 dtype (0 = f32, 1 = f64),
// u8 reserved = 0, u64 rows, u64 cols, then rows*cols row-major values.
// Every integer and value is little-endian; there is no padding.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "inilora/digest.hpp"
#include "inilora/error.hpp"
#include "inilora/matrix.hpp"

namespace inilora {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

inline std::string to_string(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

namespace wtn1 {

inline constexpr std::string_view kMagic = "WTN1";
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 24;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

inline std::uint64_t get_le(std::string_view in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
    }
    return v;
}

}  // namespace detail

/// Little-endian byte image of the values at the given precision.
inline std::string payload_bytes(const Matrix& m, Dtype dtype) {
    std::string out;
    out.reserve(m.size() * dtype_size(dtype));
    for (double v : m.values()) {
        if (dtype == Dtype::f32) {
            const float f = static_cast<float>(v);
            if (!std::isfinite(f)) {
                throw NonFiniteError("value " + std::to_string(v) + " overflows f32 storage");
            }
            detail::put_le(out, std::bit_cast<std::uint32_t>(f), 4);
        } else {
            detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
        }
    }
    return out;
}

inline std::string encode(const Matrix& m, Dtype dtype = Dtype::f64) {
    std::string out(kMagic);
    detail::put_le(out, kVersion, 2);
    detail::put_le(out, static_cast<std::uint8_t>(dtype), 1);
    detail::put_le(out, 0, 1);
    detail::put_le(out, m.rows(), 8);
    detail::put_le(out, m.cols(), 8);
    out += payload_bytes(m, dtype);
    return out;
}

struct Decoded {
    Matrix matrix;
    Dtype dtype;
};

inline Decoded decode(std::string_view bytes) {
    if (bytes.size() < kHeaderSize) {
        throw IoError("WTN1: truncated header");
    }
    if (bytes.substr(0, 4) != kMagic) {
        throw IoError("WTN1: bad magic");
    }
    const auto version = detail::get_le(bytes, 4, 2);
    if (version != kVersion) {
        throw IoError("WTN1: unsupported version " + std::to_string(version));
    }
    const auto raw_dtype = detail::get_le(bytes, 6, 1);
    if (raw_dtype > 1) {
        throw IoError("WTN1: unknown dtype " + std::to_string(raw_dtype));
    }
    if (detail::get_le(bytes, 7, 1) != 0) {
        throw IoError("WTN1: reserved byte must be zero");
    }
    const auto dtype = static_cast<Dtype>(raw_dtype);
    const std::uint64_t rows = detail::get_le(bytes, 8, 8);
    const std::uint64_t cols = detail::get_le(bytes, 16, 8);
    if (rows == 0 || cols == 0) {
        throw IoError("WTN1: zero dimension");
    }
    const std::size_t width = dtype_size(dtype);
    if (rows > (bytes.size() / width) / cols + 1) {
        throw IoError("WTN1: payload length does not match header");
    }
    const std::uint64_t count = rows * cols;
    if (bytes.size() != kHeaderSize + count * width) {
        throw IoError("WTN1: payload length does not match header");
    }
    std::vector<double> data(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t off = kHeaderSize + i * width;
        if (dtype == Dtype::f32) {
            data[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, off, 4)));
        } else {
            data[i] = std::bit_cast<double>(detail::get_le(bytes, off, 8));
        }
        if (!std::isfinite(data[i])) {
            throw IoError("WTN1: non-finite value at index " + std::to_string(i));
        }
    }
    return {Matrix(rows, cols, std::move(data)), dtype};
}

inline std::string read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write to " + path.string());
    }
}

inline Decoded load(const std::filesystem::path& path) {
    try {
        return decode(read_bytes(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline void save(const std::filesystem::path& path, const Matrix& m, Dtype dtype = Dtype::f64) {
    write_bytes(path, encode(m, dtype));
}

}  // namespace wtn1

/// SHA-256 over (rows, cols, storage dtype, little-endian values).
inline std::string content_hash(const Matrix& m, Dtype dtype = Dtype::f64) {
    std::string header;
    wtn1::detail::put_le(header, m.rows(), 8);
    wtn1::detail::put_le(header, m.cols(), 8);
    wtn1::detail::put_le(header, static_cast<std::uint8_t>(dtype), 1);
    return Sha256().update(header).update(wtn1::payload_bytes(m, dtype)).hex();
}

}  // namespace inilora
