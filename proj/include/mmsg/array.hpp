#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmsg {

// Dense row-major float array with up to three dims (trailing dims = 1).
struct ArrayF32 {
    std::array<uint32_t, 3> dims = {0, 1, 1};
    std::vector<float> data;

    ArrayF32() = default;
    ArrayF32(uint32_t d0, uint32_t d1 = 1, uint32_t d2 = 1)
        : dims{d0, d1, d2}, data(size_t(d0) * d1 * d2, 0.0f) {}

    size_t size() const { return data.size(); }

    float& at(uint32_t i, uint32_t j = 0, uint32_t k = 0) {
        return data[(size_t(i) * dims[1] + j) * dims[2] + k];
    }
    float at(uint32_t i, uint32_t j = 0, uint32_t k = 0) const {
        return data[(size_t(i) * dims[1] + j) * dims[2] + k];
    }

    bool operator==(const ArrayF32& o) const { return dims == o.dims && data == o.data; }
};

// Raw array container: 16-byte header (4-byte magic "MAF1" for float32 or
// "MAF2" for float64, then three little-endian uint32 dims), row-major payload.
namespace rawio {

inline void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("raw array: truncated header");
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
           (uint32_t(b[3]) << 24);
}

inline void write_f32_array(std::ostream& os, const ArrayF32& a) {
    os.write("MAF1", 4);
    for (uint32_t d : a.dims) write_u32(os, d);
    os.write(reinterpret_cast<const char*>(a.data.data()),
             static_cast<std::streamsize>(a.data.size() * sizeof(float)));
}

inline ArrayF32 read_f32_array(std::istream& is, const std::string& context) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MAF1", 4) != 0)
        throw std::runtime_error("raw array: bad magic in " + context);
    ArrayF32 a;
    for (auto& d : a.dims) d = read_u32(is);
    size_t n = size_t(a.dims[0]) * a.dims[1] * a.dims[2];
    a.data.resize(n);
    is.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw std::runtime_error("raw array: truncated payload in " + context);
    return a;
}

inline void write_f64_array(std::ostream& os, const std::array<uint32_t, 3>& dims,
                            const std::vector<double>& data) {
    os.write("MAF2", 4);
    for (uint32_t d : dims) write_u32(os, d);
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

inline std::vector<double> read_f64_array(std::istream& is, std::array<uint32_t, 3>& dims,
                                          const std::string& context) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "MAF2", 4) != 0)
        throw std::runtime_error("raw array: bad magic in " + context);
    for (auto& d : dims) d = read_u32(is);
    size_t n = size_t(dims[0]) * dims[1] * dims[2];
    std::vector<double> data(n);
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("raw array: truncated payload in " + context);
    return data;
}

inline void save_f32_array(const std::filesystem::path& p, const ArrayF32& a) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + p.string());
    write_f32_array(os, a);
}

inline ArrayF32 load_f32_array(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + p.string());
    return read_f32_array(is, p.string());
}

// Headerless float32 stream (audio.f32, pc.f32).
inline void save_f32_raw(const std::filesystem::path& p, const std::vector<float>& data) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + p.string());
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline std::vector<float> load_f32_raw(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary | std::ios::ate);
    if (!is) throw std::runtime_error("cannot open for read: " + p.string());
    auto bytes = static_cast<size_t>(is.tellg());
    if (bytes % sizeof(float) != 0)
        throw std::runtime_error("f32 stream has non-multiple-of-4 size: " + p.string());
    std::vector<float> data(bytes / sizeof(float));
    is.seekg(0);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    return data;
}

}  // namespace rawio

// Packed binary mask: two little-endian uint32 (height, width) then
// ceil(h*w/8) bytes, row-major, LSB-first within each byte.
struct BitMask {
    uint32_t height = 0;
    uint32_t width = 0;
    std::vector<uint8_t> bits;

    BitMask() = default;
    BitMask(uint32_t h, uint32_t w) : height(h), width(w), bits((size_t(h) * w + 7) / 8, 0) {}

    bool get(uint32_t y, uint32_t x) const {
        size_t i = size_t(y) * width + x;
        return (bits[i >> 3] >> (i & 7)) & 1;
    }

    void set(uint32_t y, uint32_t x, bool v) {
        size_t i = size_t(y) * width + x;
        if (v)
            bits[i >> 3] |= uint8_t(1u << (i & 7));
        else
            bits[i >> 3] &= uint8_t(~(1u << (i & 7)));
    }

    size_t popcount() const {
        size_t n = 0;
        for (uint32_t y = 0; y < height; ++y)
            for (uint32_t x = 0; x < width; ++x)
                if (get(y, x)) ++n;
        return n;
    }

    bool operator==(const BitMask& o) const {
        return height == o.height && width == o.width && bits == o.bits;
    }
};

namespace rawio {

inline void save_bitmask(const std::filesystem::path& p, const BitMask& m) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + p.string());
    write_u32(os, m.height);
    write_u32(os, m.width);
    os.write(reinterpret_cast<const char*>(m.bits.data()),
             static_cast<std::streamsize>(m.bits.size()));
}

inline BitMask load_bitmask(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for read: " + p.string());
    BitMask m;
    m.height = read_u32(is);
    m.width = read_u32(is);
    m.bits.resize((size_t(m.height) * m.width + 7) / 8);
    is.read(reinterpret_cast<char*>(m.bits.data()),
            static_cast<std::streamsize>(m.bits.size()));
    if (!is) throw std::runtime_error("bitmask: truncated payload in " + p.string());
    return m;
}

}  // namespace rawio

}  // namespace mmsg
