#pragma once

// Training: AdamW with the encoder learning rate scaled by lambda, random
// crop as the only augmentation, deterministic per-iteration RNG streams so
// a resumed run is bitwise identical to an uninterrupted one.

#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "sed/dataset.hpp"
#include "sed/loss.hpp"
#include "sed/model.hpp"
#include "sed/optim.hpp"
#include "sed/text.hpp"

namespace sed {

struct TrainConfig {
    double lr = 2e-4;
    double weight_decay = 1e-4;
    double lambda = 0.01;  // encoder learning-rate scale
    int iters = 1000;
    int batch = 1;
    int crop = 128;
    uint64_t seed = 0;
    double aux_loss_weight = 1.0;
    int checkpoint_interval = 500;

    void validate() const {
        if (lr <= 0 || weight_decay < 0 || lambda <= 0 || lambda > 1)
            throw std::invalid_argument("train: lr/weight_decay/lambda out of range");
        if (iters < 0 || batch < 1) throw std::invalid_argument("train: bad iters/batch");
        if (crop < 32 || crop % 32 != 0)
            throw std::invalid_argument("train: crop must be a positive multiple of 32, got " +
                                        std::to_string(crop));
        if (checkpoint_interval < 0) throw std::invalid_argument("train: bad checkpoint interval");
    }
};

template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
    std::vector<T> data(img.rgb.size());
    for (size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<T>(img.rgb[i]) / T(255);
    return Tensor<T>(Shape{img.h, img.w, 3}, std::move(data));
}

struct CropView {
    int oy = 0, ox = 0, size = 0;
};

// Per-iteration RNG stream keyed by (seed, iter): resuming at any iteration
// reproduces the exact crop sequence without serializing generator state.
inline SplitMix64 iter_rng(uint64_t seed, int64_t iter) {
    return SplitMix64(mix_seed(seed, 0x17E4u + static_cast<uint64_t>(iter)));
}

template <typename T>
std::pair<Tensor<T>, std::vector<uint16_t>> crop_sample(const Sample& s, const CropView& c) {
    std::vector<T> img(static_cast<size_t>(c.size) * c.size * 3);
    std::vector<uint16_t> lab(static_cast<size_t>(c.size) * c.size);
    for (int y = 0; y < c.size; ++y)
        for (int x = 0; x < c.size; ++x) {
            const size_t src = static_cast<size_t>(c.oy + y) * s.image.w + (c.ox + x);
            const size_t dst = static_cast<size_t>(y) * c.size + x;
            for (int ch = 0; ch < 3; ++ch)
                img[dst * 3 + ch] = static_cast<T>(s.image.rgb[src * 3 + ch]) / T(255);
            lab[dst] = s.label.v[src];
        }
    return {Tensor<T>(Shape{c.size, c.size, 3}, std::move(img)), std::move(lab)};
}

struct TrainResult {
    std::vector<double> losses;  // one entry per iteration, in run order
    std::string checkpoint_path;
};

// Runs iterations [start_iter, cfg.iters). Chunked calls with increasing
// start_iter are equivalent to one continuous run.
template <typename T>
TrainResult train_model(SedModel<T>& model, AdamW<T>& opt, const Dataset& data,
                        const TextEmbeddings<T>& emb, const TrainConfig& cfg,
                        const std::string& out_dir, int start_iter = 0) {
    cfg.validate();
    if (data.samples.empty()) throw std::invalid_argument("train: dataset is empty");
    for (const auto& s : data.samples)
        if (s.image.h < cfg.crop || s.image.w < cfg.crop)
            throw std::invalid_argument("train: sample " + s.name + " (" +
                                        std::to_string(s.image.w) + "x" +
                                        std::to_string(s.image.h) + ") is smaller than crop " +
                                        std::to_string(cfg.crop));
    TrainResult result;
    if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
    const std::string ckpt = out_dir.empty() ? "" : out_dir + "/checkpoint.sedc";
    std::ofstream curve;
    if (!out_dir.empty()) {
        curve.open(out_dir + "/loss.csv", start_iter == 0 ? std::ios::trunc : std::ios::app);
        if (start_iter == 0) curve << "iter,loss\n";
    }

    for (int iter = start_iter; iter < cfg.iters; ++iter) {
        SplitMix64 rng = iter_rng(cfg.seed, iter);
        Tensor<T> loss;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& s = data.samples[rng.below(data.samples.size())];
            CropView c;
            c.size = cfg.crop;
            c.oy = static_cast<int>(rng.below(static_cast<uint64_t>(s.image.h - cfg.crop + 1)));
            c.ox = static_cast<int>(rng.below(static_cast<uint64_t>(s.image.w - cfg.crop + 1)));
            auto [img, lab] = crop_sample<T>(s, c);
            auto fwd = forward_pipeline(model, img, emb, nullptr, /*want_aux=*/true);
            auto l = seg_loss(fwd.main_logits, fwd.gfd.aux_logits, lab,
                              static_cast<T>(cfg.aux_loss_weight));
            loss = loss.defined() ? add(loss, l) : l;
        }
        if (cfg.batch > 1) loss = scale(loss, T(1) / static_cast<T>(cfg.batch));
        loss.backward();
        opt.step(model.params);
        model.params.zero_grad();
        const double lv = static_cast<double>(loss.values()[0]);
        result.losses.push_back(lv);
        if (curve.is_open()) {
            curve.precision(std::numeric_limits<T>::max_digits10);
            curve << iter << ',' << lv << '\n';
        }
        const bool last = iter + 1 == cfg.iters;
        if (!ckpt.empty() &&
            (last || (cfg.checkpoint_interval > 0 && (iter + 1) % cfg.checkpoint_interval == 0)))
            save_checkpoint(ckpt, model.params, opt.state_records(model.params));
    }
    result.checkpoint_path = ckpt;
    return result;
}

}  // namespace sed
