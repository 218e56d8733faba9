#pragma once

// Dataset directory layout:
//   images/XXXX.ppm, labels/XXXX.pgm (or .sedl for >255 categories),
//   categories.txt (one name per line), templates.txt.
// Also a synthetic generator: block-pattern images whose colors are a fixed
// deterministic function of the category index, so a model can be overfit
// (or benchmarked) without any external data.

#include <string>
#include <vector>

#include "sed/image_io.hpp"
#include "sed/text.hpp"

namespace sed {

struct Sample {
    std::string name;
    ImageU8 image;
    LabelMap label;
};

struct Dataset {
    std::vector<Sample> samples;
    CategoryVocabulary vocab;
    std::vector<std::string> templates;
};

Dataset load_dataset(const std::string& dir);
void write_dataset(const std::string& dir, const Dataset& data);

struct SyntheticSpec {
    int images = 8;
    int size = 64;        // square extent, must be divisible by grid and 32
    int categories = 4;   // vocabulary size N
    int grid = 2;         // grid x grid colored blocks per image
    uint64_t seed = 7;
    int templates = 4;
};

// Every image is a grid of solid blocks; each block's color identifies its
// category, the same way in every image.
Dataset make_synthetic_dataset(const SyntheticSpec& spec);

// Fixed per-category RGB color, distinct for small vocabularies.
void category_color(int category, uint8_t rgb[3]);

}  // namespace sed
