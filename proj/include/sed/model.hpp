#pragma once

// Puts the pieces together: encoder -> cost map -> cost embedding -> gradual
// fusion decoder -> output head, with optional category early rejection and
// per-stage wall-clock accounting for the benchmark harness.

#include <chrono>
#include <string>
#include <vector>

#include "sed/cer.hpp"
#include "sed/cost_map.hpp"
#include "sed/encoder.hpp"
#include "sed/gfd.hpp"
#include "sed/metrics.hpp"
#include "sed/params.hpp"
#include "sed/text.hpp"

namespace sed {

struct ModelConfig {
    EncoderConfig encoder;
    GfdConfig gfd;
    int templates = 4;  // P

    void validate() const {
        encoder.validate();
        gfd.validate();
        if (templates <= 0) throw std::invalid_argument("model: templates must be positive");
    }
};

template <typename T>
struct SedModel {
    ModelConfig cfg;
    ParamSet<T> params;
};

template <typename T>
SedModel<T> init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    SedModel<T> m;
    m.cfg = cfg;
    SplitMix64 rng(mix_seed(seed, 0xC0DE));
    init_encoder_params(m.params, cfg.encoder, rng);
    init_cost_embed_params(m.params, cfg.templates, cfg.gfd.dim, rng);
    init_gfd_params(m.params, cfg.encoder, cfg.gfd, cfg.templates, rng);
    return m;
}

struct StageTimes {
    double encoder_ms = 0;
    double cost_ms = 0;
    std::vector<double> layer_ms;
    double output_ms = 0;
    double total_ms = 0;

    double decoder_ms() const {
        double s = 0;
        for (double v : layer_ms) s += v;
        return s;
    }
};

template <typename T>
struct PipelineResult {
    PyramidFeatures<T> pyr;
    CostMap<T> cost;
    Tensor<T> dec_in;
    GfdOutput<T> gfd;
    Tensor<T> main_logits;  // [H, W, N_active], input resolution
};

template <typename T>
PipelineResult<T> forward_pipeline(const SedModel<T>& model, const Tensor<T>& image,
                                   const TextEmbeddings<T>& emb, const CerConfig* cer,
                                   bool want_aux = true, StageTimes* times = nullptr) {
    using clock = std::chrono::steady_clock;
    const auto ms = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };
    PipelineResult<T> r;
    const auto t0 = clock::now();
    r.pyr = encode(image, model.cfg.encoder, model.params);
    const auto t1 = clock::now();
    r.cost = compute_cost_map(r.pyr.fv, emb);
    r.dec_in = embed_cost(r.cost, model.params);
    const auto t2 = clock::now();
    std::vector<double> layer_ms;
    r.gfd = gfd_forward(r.dec_in, r.pyr, r.cost.values, cer, model.cfg.gfd, model.params,
                        want_aux, times ? &layer_ms : nullptr);
    const auto t3 = clock::now();
    r.main_logits = output_head(r.gfd.f_h, model.params, image.dim(0), image.dim(1));
    const auto t4 = clock::now();
    if (times) {
        times->encoder_ms = ms(t0, t1);
        times->cost_ms = ms(t1, t2);
        times->layer_ms = std::move(layer_ms);
        times->output_ms = ms(t3, t4);
        times->total_ms = ms(t0, t4);
    }
    return r;
}

// Per-pixel argmax after scattering pruned logits back to the full axis.
template <typename T>
std::vector<uint16_t> predict_labels(const PipelineResult<T>& r, int n_total) {
    if (r.main_logits.dim(2) == n_total) return argmax_labels(r.main_logits);
    auto full = scatter_back(r.main_logits, r.gfd.cer, n_total);
    return argmax_labels(full);
}

}  // namespace sed
