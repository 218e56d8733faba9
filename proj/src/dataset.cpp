#include "sed/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sed/tensor.hpp"

namespace fs = std::filesystem;

namespace sed {

Dataset load_dataset(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + dir);
    Dataset data;
    data.vocab = load_vocabulary((root / "categories.txt").string());
    data.templates = load_templates((root / "templates.txt").string());

    const fs::path images = root / "images";
    const fs::path labels = root / "labels";
    if (!fs::is_directory(images)) throw IoError("missing images/ in " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images))
        if (e.path().extension() == ".ppm") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .ppm images in " + images.string());

    for (const auto& f : files) {
        Sample s;
        s.name = f.stem().string();
        s.image = read_ppm(f.string());
        fs::path lab = labels / (s.name + ".pgm");
        if (!fs::exists(lab)) lab = labels / (s.name + ".sedl");
        if (!fs::exists(lab)) throw IoError("missing label map for " + f.string());
        s.label = read_label_map(lab.string());
        if (s.label.h != s.image.h || s.label.w != s.image.w)
            throw IoError(lab.string() + ": label extents do not match image " + f.string());
        for (uint16_t v : s.label.v)
            if (v != kIgnoreLabel && v >= data.vocab.size())
                throw IoError(lab.string() + ": label " + std::to_string(v) +
                              " out of range for " + std::to_string(data.vocab.size()) +
                              " categories");
        data.samples.push_back(std::move(s));
    }
    return data;
}

void write_dataset(const std::string& dir, const Dataset& data) {
    const fs::path root(dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "labels");
    {
        std::ofstream os(root / "categories.txt");
        for (const auto& n : data.vocab.names) os << n << '\n';
    }
    {
        std::ofstream os(root / "templates.txt");
        for (const auto& t : data.templates) os << t << '\n';
    }
    const bool fits_u8 = data.vocab.size() <= 255;
    for (const auto& s : data.samples) {
        write_ppm((root / "images" / (s.name + ".ppm")).string(), s.image);
        if (fits_u8)
            write_pgm((root / "labels" / (s.name + ".pgm")).string(), s.label);
        else
            write_sedl((root / "labels" / (s.name + ".sedl")).string(), s.label);
    }
}

void category_color(int category, uint8_t rgb[3]) {
    SplitMix64 rng(mix_seed(0xC0104u, static_cast<uint64_t>(category)));
    const uint64_t v = rng.next();
    rgb[0] = static_cast<uint8_t>(v & 0xFF);
    rgb[1] = static_cast<uint8_t>((v >> 8) & 0xFF);
    rgb[2] = static_cast<uint8_t>((v >> 16) & 0xFF);
}

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.size % 32 != 0)
        throw std::invalid_argument("synthetic: size must be divisible by 32");
    if (spec.grid < 1 || spec.size % spec.grid != 0)
        throw std::invalid_argument("synthetic: grid must divide size");
    if (spec.categories < 1 || spec.images < 1)
        throw std::invalid_argument("synthetic: need at least one category and image");

    Dataset data;
    for (int c = 0; c < spec.categories; ++c)
        data.vocab.names.push_back("object-" + std::to_string(c));
    data.templates = default_templates(spec.templates);

    const int cells = spec.grid * spec.grid;
    const int block = spec.size / spec.grid;
    SplitMix64 rng(mix_seed(spec.seed, 0xDA7A));
    std::vector<int> cats(static_cast<size_t>(spec.categories));
    std::iota(cats.begin(), cats.end(), 0);

    for (int i = 0; i < spec.images; ++i) {
        // Fisher-Yates prefix: the first `cells` entries become this image's
        // block categories (all distinct when the vocabulary is big enough).
        std::vector<int> pick = cats;
        for (size_t j = 0; j + 1 < pick.size(); ++j) {
            const size_t swap_with = j + static_cast<size_t>(rng.below(pick.size() - j));
            std::swap(pick[j], pick[swap_with]);
        }
        Sample s;
        s.name = [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%04d", i);
            return std::string(buf);
        }();
        s.image.h = s.image.w = spec.size;
        s.image.rgb.assign(static_cast<size_t>(spec.size) * spec.size * 3, 0);
        s.label.h = s.label.w = spec.size;
        s.label.v.assign(static_cast<size_t>(spec.size) * spec.size, 0);
        for (int cell = 0; cell < cells; ++cell) {
            const int cat = pick[static_cast<size_t>(cell % spec.categories)];
            uint8_t rgb[3];
            category_color(cat, rgb);
            const int by = (cell / spec.grid) * block;
            const int bx = (cell % spec.grid) * block;
            for (int y = by; y < by + block; ++y)
                for (int x = bx; x < bx + block; ++x) {
                    const size_t p = static_cast<size_t>(y) * spec.size + x;
                    s.image.rgb[p * 3 + 0] = rgb[0];
                    s.image.rgb[p * 3 + 1] = rgb[1];
                    s.image.rgb[p * 3 + 2] = rgb[2];
                    s.label.v[p] = static_cast<uint16_t>(cat);
                }
        }
        data.samples.push_back(std::move(s));
    }
    return data;
}

}  // namespace sed
