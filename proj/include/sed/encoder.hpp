#pragma once

// Scaled-down hierarchical image encoder. Four stages emit feature maps at
// strides 4/8/16/32 of the input; a two-linear + GeLU head on the last stage
// aligns channels to the text embedding width D_t.
//
// Stage block (ConvNeXt-style, trained from scratch at small widths):
//   x + fc2(gelu(fc1(layer_norm(dwconv7x7(x)))))
// Stages are bridged by 2x2 stride-2 convolutions; the stem is a 4x4
// stride-4 convolution.

#include <array>
#include <string>

#include "sed/ops.hpp"
#include "sed/params.hpp"

namespace sed {

struct EncoderConfig {
    std::array<int, 4> stage_widths = {16, 32, 64, 128};  // C2..C5
    std::array<int, 4> stage_depths = {1, 1, 2, 1};
    int align_dim = 64;              // D_t, must match the text embeddings
    double encoder_lr_scale = 0.01;  // lambda, forwarded to the optimizer

    void validate() const {
        for (int w : stage_widths)
            if (w <= 0) throw std::invalid_argument("encoder: stage widths must be positive");
        for (int d : stage_depths)
            if (d <= 0) throw std::invalid_argument("encoder: stage depths must be positive");
        if (align_dim <= 0) throw std::invalid_argument("encoder: align_dim must be positive");
        if (!(encoder_lr_scale > 0.0) || encoder_lr_scale > 1.0)
            throw std::invalid_argument("encoder: encoder_lr_scale must lie in (0,1]");
    }
};

// F2..F5 at strides 4/8/16/32 plus the aligned map Fv (same extents as F5).
template <typename T>
struct PyramidFeatures {
    Tensor<T> f2, f3, f4, f5, fv;

    const Tensor<T>& level(int i) const {
        switch (i) {
            case 2: return f2;
            case 3: return f3;
            case 4: return f4;
            default: return f5;
        }
    }
};

namespace enc_detail {

inline std::string block_prefix(int stage, int block) {
    return "enc/s" + std::to_string(stage) + "/b" + std::to_string(block) + "/";
}

}  // namespace enc_detail

template <typename T>
void init_encoder_params(ParamSet<T>& params, const EncoderConfig& cfg, SplitMix64& rng) {
    cfg.validate();
    const auto g = ParamGroup::encoder;
    auto zeros = [](Shape s) { return Tensor<T>(std::move(s), T(0), true); };
    auto ones = [](Shape s) { return Tensor<T>(std::move(s), T(1), true); };

    params.add("enc/stem/w", g, uniform_init<T>({4, 4, 3, cfg.stage_widths[0]}, 4 * 4 * 3, rng));
    params.add("enc/stem/b", g, zeros({cfg.stage_widths[0]}));
    for (int s = 0; s < 4; ++s) {
        const int c = cfg.stage_widths[static_cast<size_t>(s)];
        if (s > 0) {
            const int cp = cfg.stage_widths[static_cast<size_t>(s - 1)];
            const std::string pre = "enc/down" + std::to_string(s + 2) + "/";
            params.add(pre + "w", g, uniform_init<T>({2, 2, cp, c}, 2 * 2 * cp, rng));
            params.add(pre + "b", g, zeros({c}));
        }
        for (int b = 0; b < cfg.stage_depths[static_cast<size_t>(s)]; ++b) {
            const std::string pre = enc_detail::block_prefix(s + 2, b);
            params.add(pre + "dw", g, uniform_init<T>({7, 7, c}, 7 * 7, rng));
            params.add(pre + "ln_g", g, ones({c}));
            params.add(pre + "ln_b", g, zeros({c}));
            params.add(pre + "fc1_w", g, uniform_init<T>({c, 4 * c}, c, rng));
            params.add(pre + "fc1_b", g, zeros({4 * c}));
            params.add(pre + "fc2_w", g, uniform_init<T>({4 * c, c}, 4 * c, rng));
            params.add(pre + "fc2_b", g, zeros({c}));
        }
    }
    params.add("enc/fv/fc1_w", g,
               uniform_init<T>({cfg.stage_widths[3], cfg.align_dim}, cfg.stage_widths[3], rng));
    params.add("enc/fv/fc1_b", g, zeros({cfg.align_dim}));
    params.add("enc/fv/fc2_w", g,
               uniform_init<T>({cfg.align_dim, cfg.align_dim}, cfg.align_dim, rng));
    params.add("enc/fv/fc2_b", g, zeros({cfg.align_dim}));
}

namespace enc_detail {

template <typename T>
Tensor<T> stage_block(const Tensor<T>& x, const ParamSet<T>& p, const std::string& pre) {
    auto t = depthwise_conv2d(x, p.at(pre + "dw"));
    t = layer_norm(t, p.at(pre + "ln_g"), p.at(pre + "ln_b"), T(1e-5));
    t = linear(t, p.at(pre + "fc1_w"), p.at(pre + "fc1_b"));
    t = gelu(t);
    t = linear(t, p.at(pre + "fc2_w"), p.at(pre + "fc2_b"));
    return add(x, t);
}

}  // namespace enc_detail

// image [H,W,3] with H, W divisible by 32.
template <typename T>
PyramidFeatures<T> encode(const Tensor<T>& image, const EncoderConfig& cfg,
                          const ParamSet<T>& params) {
    if (image.rank() != 3 || image.dim(2) != 3)
        throw ShapeError("encode: image must be [H,W,3], got " + shape_str(image.shape()));
    if (image.dim(0) % 32 != 0 || image.dim(1) % 32 != 0)
        throw std::invalid_argument("encode: image extents must be divisible by 32, got " +
                                    shape_str(image.shape()));
    PyramidFeatures<T> out;
    Tensor<T> x = conv2d(image, params.at("enc/stem/w"), params.at("enc/stem/b"), 4, 0);
    for (int s = 0; s < 4; ++s) {
        if (s > 0) {
            const std::string pre = "enc/down" + std::to_string(s + 2) + "/";
            x = conv2d(x, params.at(pre + "w"), params.at(pre + "b"), 2, 0);
        }
        for (int b = 0; b < cfg.stage_depths[static_cast<size_t>(s)]; ++b)
            x = enc_detail::stage_block(x, params, enc_detail::block_prefix(s + 2, b));
        switch (s) {
            case 0: out.f2 = x; break;
            case 1: out.f3 = x; break;
            case 2: out.f4 = x; break;
            default: out.f5 = x; break;
        }
    }
    auto fv = linear(out.f5, params.at("enc/fv/fc1_w"), params.at("enc/fv/fc1_b"));
    fv = gelu(fv);
    out.fv = linear(fv, params.at("enc/fv/fc2_w"), params.at("enc/fv/fc2_b"));
    return out;
}

}  // namespace sed
