#pragma once

// Text side of the pipeline: category vocabulary, prompt-template expansion,
// and a frozen embedding provider. The synthetic provider hashes each prompt
// string into a deterministic unit vector so the repository needs no
// pretrained text tower; the file provider loads embeddings exported offline.
//
// Embedding file ("SEDE"): magic, u32 N, u32 P, u32 D_t, then N*P*D_t f32
// little-endian values, category-major then template-major.

#include <cmath>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sed/tensor.hpp"
#include "sed/wire.hpp"

namespace sed {

struct CategoryVocabulary {
    std::vector<std::string> names;

    int size() const { return static_cast<int>(names.size()); }

    void validate() const {
        if (names.empty()) throw std::invalid_argument("vocabulary: no category names");
        std::unordered_set<std::string> seen;
        for (const auto& n : names) {
            if (n.empty()) throw std::invalid_argument("vocabulary: empty category name");
            if (!seen.insert(n).second)
                throw std::invalid_argument("vocabulary: duplicate category name \"" + n + "\"");
        }
    }
};

struct PromptSet {
    int n = 0;  // categories
    int p = 0;  // templates per category
    std::vector<std::string> prompts;  // row-major [n][p]

    const std::string& at(int cat, int tpl) const {
        return prompts[static_cast<size_t>(cat * p + tpl)];
    }
};

// Each template carries exactly one "{}" placeholder.
inline PromptSet expand_prompts(const CategoryVocabulary& vocab,
                                const std::vector<std::string>& templates) {
    vocab.validate();
    if (templates.empty()) throw std::invalid_argument("expand_prompts: empty template list");
    for (size_t t = 0; t < templates.size(); ++t) {
        const auto first = templates[t].find("{}");
        if (first == std::string::npos || templates[t].find("{}", first + 1) != std::string::npos)
            throw std::invalid_argument("expand_prompts: template " + std::to_string(t) +
                                        " must contain exactly one {} placeholder: \"" +
                                        templates[t] + "\"");
    }
    PromptSet out;
    out.n = vocab.size();
    out.p = static_cast<int>(templates.size());
    out.prompts.reserve(static_cast<size_t>(out.n) * out.p);
    for (const auto& name : vocab.names)
        for (const auto& tpl : templates) {
            std::string s = tpl;
            s.replace(s.find("{}"), 2, name);
            out.prompts.push_back(std::move(s));
        }
    return out;
}

template <typename T>
struct TextEmbeddings {
    Tensor<T> e;  // [N, P, D_t], never requires grad
    int n = 0, p = 0, dt = 0;
    bool frozen = true;
};

namespace detail {

inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace detail

// Deterministic pseudo-embedding: hash(prompt, seed) seeds a SplitMix64
// stream expanded to D_t values in [-1,1), then L2-normalized. The same
// string always maps to the same unit vector.
template <typename T>
TextEmbeddings<T> embed_texts_synthetic(const PromptSet& prompts, int dt, uint64_t seed) {
    if (dt <= 0) throw std::invalid_argument("embed_texts: embedding width must be positive");
    TextEmbeddings<T> out;
    out.n = prompts.n;
    out.p = prompts.p;
    out.dt = dt;
    std::vector<T> data(static_cast<size_t>(prompts.n) * prompts.p * dt);
    std::vector<double> v(static_cast<size_t>(dt));
    size_t off = 0;
    for (const auto& s : prompts.prompts) {
        SplitMix64 rng(detail::fnv1a64(s) ^ mix_seed(seed, 0x5EDE));
        double norm2 = 0.0;
        for (int i = 0; i < dt; ++i) {
            v[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
            norm2 += v[static_cast<size_t>(i)] * v[static_cast<size_t>(i)];
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (int i = 0; i < dt; ++i) data[off++] = static_cast<T>(v[static_cast<size_t>(i)] * inv);
    }
    out.e = Tensor<T>(Shape{prompts.n, prompts.p, dt}, std::move(data), /*requires_grad=*/false);
    return out;
}

inline void write_embeddings_sede(const std::string& path, int n, int p, int dt,
                                  const std::vector<float>& values) {
    if (static_cast<int64_t>(values.size()) != int64_t(n) * p * dt)
        throw IoError("embeddings: value count does not match " + std::to_string(n) + "x" +
                      std::to_string(p) + "x" + std::to_string(dt));
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open embedding file for writing: " + path);
    wire::put_magic(os, "SEDE");
    wire::put_u32(os, static_cast<uint32_t>(n));
    wire::put_u32(os, static_cast<uint32_t>(p));
    wire::put_u32(os, static_cast<uint32_t>(dt));
    for (float v : values) wire::put_f32(os, v);
    if (!os) throw IoError("write failed: " + path);
}

template <typename T>
void write_embeddings_sede(const std::string& path, const TextEmbeddings<T>& emb) {
    std::vector<float> vals(emb.e.values().begin(), emb.e.values().end());
    write_embeddings_sede(path, emb.n, emb.p, emb.dt, vals);
}

template <typename T>
TextEmbeddings<T> embed_texts_file(const PromptSet& prompts, int dt, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open embedding file: " + path);
    wire::expect_magic(is, "SEDE", path);
    const int n = static_cast<int>(wire::get_u32(is, path));
    const int p = static_cast<int>(wire::get_u32(is, path));
    const int d = static_cast<int>(wire::get_u32(is, path));
    if (n != prompts.n || p != prompts.p || d != dt)
        throw IoError(path + ": embedding dimensions mismatch, expected N=" +
                      std::to_string(prompts.n) + " P=" + std::to_string(prompts.p) +
                      " D_t=" + std::to_string(dt) + ", found N=" + std::to_string(n) +
                      " P=" + std::to_string(p) + " D_t=" + std::to_string(d));
    TextEmbeddings<T> out;
    out.n = n;
    out.p = p;
    out.dt = d;
    std::vector<T> data(static_cast<size_t>(n) * p * d);
    for (auto& v : data) v = static_cast<T>(wire::get_f32(is, path));
    out.e = Tensor<T>(Shape{n, p, d}, std::move(data), /*requires_grad=*/false);
    return out;
}

inline std::vector<std::string> default_templates(int count) {
    static const std::vector<std::string> pool = {
        "a photo of a {}",          "a photo of many {}",
        "a photo of the {}",        "a blurry photo of a {}",
        "a bright photo of a {}",   "a cropped photo of a {}",
        "a close-up photo of a {}", "a photo of one {}",
    };
    if (count < 1 || count > static_cast<int>(pool.size()))
        throw std::invalid_argument("default_templates: supported range is 1.." +
                                    std::to_string(pool.size()) +
                                    ", pass a template file for more");
    return std::vector<std::string>(pool.begin(), pool.begin() + count);
}

// One template per line, UTF-8, "{}" placeholder.
inline std::vector<std::string> load_templates(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open template file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(line);
    }
    if (out.empty()) throw IoError(path + ": no templates");
    return out;
}

inline CategoryVocabulary load_vocabulary(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open category file: " + path);
    CategoryVocabulary vocab;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) vocab.names.push_back(line);
    }
    vocab.validate();
    return vocab;
}

}  // namespace sed
