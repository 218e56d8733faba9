#pragma once

// Little-endian byte-level primitives shared by all binary file formats
// (checkpoints, embeddings, cost-map dumps, label maps).

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "sed/tensor.hpp"

namespace sed::wire {

inline void put_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

inline void put_u16(std::ostream& os, uint16_t v) {
    os.put(static_cast<char>(v & 0xFF));
    os.put(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::ostream& os, uint32_t v) {
    for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::ostream& os, float v) { put_u32(os, std::bit_cast<uint32_t>(v)); }

inline uint8_t get_u8(std::istream& is, const std::string& path) {
    int c = is.get();
    if (c == EOF) throw IoError(path + ": unexpected end of file");
    return static_cast<uint8_t>(c);
}

inline uint16_t get_u16(std::istream& is, const std::string& path) {
    uint16_t v = get_u8(is, path);
    v |= static_cast<uint16_t>(get_u8(is, path)) << 8;
    return v;
}

inline uint32_t get_u32(std::istream& is, const std::string& path) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(get_u8(is, path)) << (8 * i);
    return v;
}

inline float get_f32(std::istream& is, const std::string& path) {
    return std::bit_cast<float>(get_u32(is, path));
}

inline void put_magic(std::ostream& os, const char magic[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char magic[5], const std::string& path) {
    char buf[4];
    is.read(buf, 4);
    if (is.gcount() != 4 || buf[0] != magic[0] || buf[1] != magic[1] || buf[2] != magic[2] ||
        buf[3] != magic[3])
        throw IoError(path + ": bad magic, expected \"" + std::string(magic, 4) + "\"");
}

}  // namespace sed::wire
