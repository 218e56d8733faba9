#include "sed/image_io.hpp"

#include <fstream>

#include "sed/tensor.hpp"
#include "sed/wire.hpp"

namespace sed {

namespace {

// Reads the next ASCII integer in a PNM header, skipping whitespace and
// '#'-comments.
int pnm_int(std::istream& is, const std::string& path) {
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c)) throw IoError(path + ": malformed PNM header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = is.get();
    }
    if (c == EOF) throw IoError(path + ": truncated PNM header");
    return v;
}

void check_pnm_magic(std::istream& is, char kind, const std::string& path) {
    int c0 = is.get(), c1 = is.get();
    if (c0 != 'P' || c1 != kind)
        throw IoError(path + ": expected P" + std::string(1, kind) + " magic");
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open image: " + path);
    check_pnm_magic(is, '6', path);
    ImageU8 img;
    img.w = pnm_int(is, path);
    img.h = pnm_int(is, path);
    const int maxval = pnm_int(is, path);
    if (maxval != 255) throw IoError(path + ": only maxval 255 is supported");
    if (img.w <= 0 || img.h <= 0) throw IoError(path + ": bad image extents");
    img.rgb.resize(static_cast<size_t>(img.h) * img.w * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw IoError(path + ": truncated pixel data");
    return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
    if (static_cast<size_t>(img.h) * img.w * 3 != img.rgb.size())
        throw IoError("write_ppm: pixel buffer does not match extents");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open image for writing: " + path);
    os << "P6\n" << img.w << ' ' << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError("write failed: " + path);
}

LabelMap read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open label map: " + path);
    check_pnm_magic(is, '5', path);
    LabelMap lm;
    lm.w = pnm_int(is, path);
    lm.h = pnm_int(is, path);
    const int maxval = pnm_int(is, path);
    if (maxval > 255) throw IoError(path + ": 16-bit PGM not supported, use SEDL");
    std::vector<uint8_t> raw(static_cast<size_t>(lm.h) * lm.w);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError(path + ": truncated pixel data");
    lm.v.assign(raw.begin(), raw.end());
    return lm;
}

void write_pgm(const std::string& path, const LabelMap& labels) {
    if (static_cast<size_t>(labels.h) * labels.w != labels.v.size())
        throw IoError("write_pgm: label buffer does not match extents");
    for (uint16_t v : labels.v)
        if (v > 255)
            throw IoError("write_pgm: label " + std::to_string(v) +
                          " does not fit 8 bits, use SEDL");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open label map for writing: " + path);
    os << "P5\n" << labels.w << ' ' << labels.h << "\n255\n";
    for (uint16_t v : labels.v) os.put(static_cast<char>(v));
    if (!os) throw IoError("write failed: " + path);
}

LabelMap read_sedl(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open label map: " + path);
    wire::expect_magic(is, "SEDL", path);
    LabelMap lm;
    lm.h = static_cast<int>(wire::get_u32(is, path));
    lm.w = static_cast<int>(wire::get_u32(is, path));
    lm.v.resize(static_cast<size_t>(lm.h) * lm.w);
    for (auto& v : lm.v) v = wire::get_u16(is, path);
    return lm;
}

void write_sedl(const std::string& path, const LabelMap& labels) {
    if (static_cast<size_t>(labels.h) * labels.w != labels.v.size())
        throw IoError("write_sedl: label buffer does not match extents");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open label map for writing: " + path);
    wire::put_magic(os, "SEDL");
    wire::put_u32(os, static_cast<uint32_t>(labels.h));
    wire::put_u32(os, static_cast<uint32_t>(labels.w));
    for (uint16_t v : labels.v) wire::put_u16(os, v);
    if (!os) throw IoError("write failed: " + path);
}

LabelMap read_label_map(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open label map: " + path);
    char magic[2] = {0, 0};
    is.read(magic, 2);
    is.close();
    if (magic[0] == 'P' && magic[1] == '5') return read_pgm(path);
    return read_sedl(path);
}

}  // namespace sed
