#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cpda/common.hpp"
#include "cpda/optim.hpp"
#include "cpda/tensor.hpp"

namespace cpda {

// Checkpoint layout (little-endian):
//   magic "CPDA", u32 version,
//   then per parameter: u32 name length, name bytes,
//   u32 rank, rank x u32 dims, doubles (row-major) until EOF.
namespace ckpt {

constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("checkpoint: truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint: truncated while reading double");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline void save(const std::string& path, const ParamSet& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
    os.write("CPDA", 4);
    write_u32(os, kVersion);
    for (const auto& [name, t] : params.params) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) write_u32(os, static_cast<std::uint32_t>(t.dim(i)));
        for (double v : t.data()) write_f64(os, v);
    }
    if (!os) throw DataError("checkpoint: write failed: " + path);
}

// Loads values into an already-constructed model's parameters.
// Every entry in the file must match an existing parameter exactly.
inline void load(const std::string& path, ParamSet& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CPDA", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    size_t loaded = 0;
    while (true) {
        // Peek for EOF before the next record.
        if (is.peek() == std::char_traits<char>::eof()) break;
        std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("checkpoint: truncated parameter name");
        std::uint32_t rank = read_u32(is);
        Shape shape;
        int64_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<int>(read_u32(is)));
            n *= shape.back();
        }
        Tensor* dst = params.find(name);
        if (!dst) throw DataError("checkpoint: unknown parameter " + name);
        if (dst->shape() != shape) throw DataError("checkpoint: shape mismatch for " + name);
        std::vector<double>& w = dst->mutable_data();
        for (int64_t i = 0; i < n; ++i) w[static_cast<size_t>(i)] = read_f64(is);
        ++loaded;
    }
    if (loaded != params.params.size())
        throw DataError("checkpoint: file has " + std::to_string(loaded) + " parameters, model has " +
                        std::to_string(params.params.size()));
}

}  // namespace ckpt

}  // namespace cpda
