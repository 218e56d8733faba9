#pragma once

// Pixel-level image-text cost map: cosine similarity between each aligned
// visual feature Fv(i,j) and each text embedding E(n,p), then an embedding
// convolution that lifts the P similarity channels to the decoder width D.
//
// Cost values are differentiable w.r.t. Fv only; the text embeddings are
// frozen. Norms below kNormEps are clamped (zero-init ablations must not
// crash) and counted instead of raising.

#include <fstream>
#include <string>
#include <vector>

#include "sed/ops.hpp"
#include "sed/params.hpp"
#include "sed/text.hpp"
#include "sed/wire.hpp"

namespace sed {

inline constexpr double kNormEps = 1e-8;

template <typename T>
struct CostMap {
    Tensor<T> values;  // [H_v, W_v, N, P], entries in [-1, 1]
    int64_t degenerate_count = 0;
};

// F_cv(i,j,n,p) = Fv(i,j).E(n,p) / (|Fv(i,j)| |E(n,p)|)
template <typename T>
CostMap<T> compute_cost_map(const Tensor<T>& fv, const TextEmbeddings<T>& emb) {
    if (fv.rank() != 3)
        throw ShapeError("cost_map: Fv must be [H_v,W_v,D_t], got " + shape_str(fv.shape()));
    const int dt = fv.dim(2);
    if (dt != emb.dt)
        throw ShapeError("cost_map: Fv width " + std::to_string(dt) +
                         " does not match embedding width " + std::to_string(emb.dt));
    const int hv = fv.dim(0), wv = fv.dim(1), n = emb.n, p = emb.p;
    const int64_t px = int64_t(hv) * wv;
    const int64_t np = int64_t(n) * p;
    const T eps = static_cast<T>(kNormEps);

    const auto& fvv = fv.values();
    const auto& ev = emb.e.values();

    CostMap<T> out;
    // Per-embedding norms are shared across all pixels.
    std::vector<T> enorm(static_cast<size_t>(np));
    for (int64_t r = 0; r < np; ++r) {
        const T* e = ev.data() + r * dt;
        T s = T(0);
        for (int i = 0; i < dt; ++i) s += e[i] * e[i];
        T nr = std::sqrt(s);
        if (nr < eps) {
            nr = eps;
            ++out.degenerate_count;
        }
        enorm[static_cast<size_t>(r)] = nr;
    }
    std::vector<T> fnorm(static_cast<size_t>(px));
    std::vector<char> fclamped(static_cast<size_t>(px), 0);
    for (int64_t q = 0; q < px; ++q) {
        const T* a = fvv.data() + q * dt;
        T s = T(0);
        for (int i = 0; i < dt; ++i) s += a[i] * a[i];
        T nr = std::sqrt(s);
        if (nr < eps) {
            nr = eps;
            fclamped[static_cast<size_t>(q)] = 1;
            ++out.degenerate_count;
        }
        fnorm[static_cast<size_t>(q)] = nr;
    }

    std::vector<T> vals(static_cast<size_t>(px * np));
    for (int64_t q = 0; q < px; ++q) {
        const T* a = fvv.data() + q * dt;
        const T na = fnorm[static_cast<size_t>(q)];
        T* row = vals.data() + q * np;
        for (int64_t r = 0; r < np; ++r) {
            const T* e = ev.data() + r * dt;
            T dot = T(0);
            for (int i = 0; i < dt; ++i) dot += a[i] * e[i];
            row[r] = dot / (na * enorm[static_cast<size_t>(r)]);
        }
    }

    auto backward = [dt, px, np, fnorm, enorm, fclamped](detail::Node<T>& self) {
        if (!self.parents[0]->in_graph) return;
        const auto& fvv = *self.parents[0]->values;
        const auto& ev = *self.parents[1]->values;
        auto& gf = detail::ensure_grad(*self.parents[0]);
        const auto& g = self.grad;
        std::vector<T> acc(static_cast<size_t>(dt));
        for (int64_t q = 0; q < px; ++q) {
            const T* a = fvv.data() + q * dt;
            const T na = fnorm[static_cast<size_t>(q)];
            const T* grow = g.data() + q * np;
            const T* crow = self.values->data() + q * np;
            std::fill(acc.begin(), acc.end(), T(0));
            T csum = T(0);
            for (int64_t r = 0; r < np; ++r) {
                const T gs = grow[r] / enorm[static_cast<size_t>(r)];
                const T* e = ev.data() + r * dt;
                for (int i = 0; i < dt; ++i) acc[static_cast<size_t>(i)] += gs * e[i];
                csum += grow[r] * crow[r];
            }
            T* dst = gf.data() + q * dt;
            if (fclamped[static_cast<size_t>(q)]) {
                // Clamped norm is a constant: only the dot-product term remains.
                for (int i = 0; i < dt; ++i) dst[i] += acc[static_cast<size_t>(i)] / na;
            } else {
                for (int i = 0; i < dt; ++i)
                    dst[i] += acc[static_cast<size_t>(i)] / na - csum * a[i] / (na * na);
            }
        }
    };
    out.values = detail::make_op<T>(Shape{hv, wv, n, p}, std::move(vals),
                                    {fv.node(), emb.e.node()}, std::move(backward));
    return out;
}

template <typename T>
void init_cost_embed_params(ParamSet<T>& params, int templates, int dim, SplitMix64& rng) {
    params.add("dec/embed/w", ParamGroup::decoder,
               uniform_init<T>({3, 3, templates, dim}, 3 * 3 * templates, rng));
    params.add("dec/embed/b", ParamGroup::decoder, Tensor<T>(Shape{dim}, T(0), true));
}

// Shared 3x3 conv per category (P -> D channels) followed by GeLU; the same
// weights serve every category, so permuting categories permutes the output.
template <typename T>
Tensor<T> embed_cost(const CostMap<T>& cv, const ParamSet<T>& params) {
    auto x = conv2d(cv.values, params.at("dec/embed/w"), params.at("dec/embed/b"), 1, 1);
    return gelu(x);
}

// Debug dump: magic "SEDV", 4 u32 extents, f32 values.
template <typename T>
void write_costmap_sedv(const std::string& path, const CostMap<T>& cv) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open cost-map dump for writing: " + path);
    wire::put_magic(os, "SEDV");
    for (int i = 0; i < 4; ++i) wire::put_u32(os, static_cast<uint32_t>(cv.values.dim(i)));
    for (T v : cv.values.values()) wire::put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed: " + path);
}

inline std::pair<Shape, std::vector<float>> read_costmap_sedv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open cost-map dump: " + path);
    wire::expect_magic(is, "SEDV", path);
    Shape shape(4);
    for (auto& d : shape) d = static_cast<int>(wire::get_u32(is, path));
    std::vector<float> vals(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : vals) v = wire::get_f32(is, path);
    return {shape, vals};
}

}  // namespace sed
