#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kanfuse/tensor.hpp"

// KFT1 binary tensor format:
//   magic "KFT1" | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u64 dims (LE) |
//   raw little-endian values, row-major.
// Multiple records may be concatenated in one stream.

namespace kf {

namespace detail {

template <class T>
constexpr uint8_t dtype_code();
template <>
constexpr uint8_t dtype_code<float>() {
    return 0;
}
template <>
constexpr uint8_t dtype_code<double>() {
    return 1;
}

} // namespace detail

template <class T>
void write_kft(std::ostream& os, const Tensor<T>& t) {
    os.write("KFT1", 4);
    uint8_t dtype = detail::dtype_code<T>();
    uint8_t rank = static_cast<uint8_t>(t.shape().size());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int64_t d : t.shape()) {
        uint64_t v = static_cast<uint64_t>(d);
        os.write(reinterpret_cast<const char*>(&v), 8);
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(T))));
    if (!os) throw IoError("kft: write failed");
}

template <class T>
void write_kft(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(cat("kft: cannot open ", path.string(), " for writing"));
    write_kft(os, t);
}

// Reads one record. The stored dtype may differ from T; values are converted
// (f32 -> f64 is exact, f64 -> f32 rounds).
template <class T>
Tensor<T> read_kft(std::istream& is, const std::string& context = "") {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "KFT1", 4) != 0)
        throw IoError(cat("kft: bad magic", context.empty() ? "" : " in ", context));
    uint8_t dtype = 0, rank = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&rank), 1);
    if (!is || dtype > 1) throw IoError(cat("kft: bad dtype", context.empty() ? "" : " in ", context));
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) {
        uint64_t v = 0;
        is.read(reinterpret_cast<char*>(&v), 8);
        shape[static_cast<size_t>(i)] = static_cast<int64_t>(v);
    }
    if (!is) throw IoError(cat("kft: truncated header", context.empty() ? "" : " in ", context));
    int64_t n = numel_of(shape);
    Tensor<T> out(shape);
    if (dtype == detail::dtype_code<T>()) {
        is.read(reinterpret_cast<char*>(out.data()),
                static_cast<std::streamsize>(n * static_cast<int64_t>(sizeof(T))));
    } else if (dtype == 0) {
        std::vector<float> tmp(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(n * 4));
        for (int64_t i = 0; i < n; ++i) out.data()[i] = static_cast<T>(tmp[static_cast<size_t>(i)]);
    } else {
        std::vector<double> tmp(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(tmp.data()),
                static_cast<std::streamsize>(n * 8));
        for (int64_t i = 0; i < n; ++i) out.data()[i] = static_cast<T>(tmp[static_cast<size_t>(i)]);
    }
    if (!is) throw IoError(cat("kft: truncated data", context.empty() ? "" : " in ", context));
    return out;
}

template <class T>
Tensor<T> read_kft(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(cat("kft: cannot open ", path.string()));
    return read_kft<T>(is, path.string());
}

} // namespace kf
