#pragma once

// Binary PPM (P6, maxval 255) images, PGM (P5) label maps for up to 255
// categories, and the "SEDL" u16 label format (magic, u32 H, u32 W, u16
// little-endian values) for larger vocabularies.

#include <cstdint>
#include <string>
#include <vector>

namespace sed {

struct ImageU8 {
    int h = 0, w = 0;
    std::vector<uint8_t> rgb;  // row-major H*W*3
};

struct LabelMap {
    int h = 0, w = 0;
    std::vector<uint16_t> v;  // row-major H*W
};

ImageU8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);

LabelMap read_pgm(const std::string& path);
void write_pgm(const std::string& path, const LabelMap& labels);  // values must fit u8

LabelMap read_sedl(const std::string& path);
void write_sedl(const std::string& path, const LabelMap& labels);

// Dispatches on the file's magic bytes (P5 vs SEDL).
LabelMap read_label_map(const std::string& path);

}  // namespace sed
