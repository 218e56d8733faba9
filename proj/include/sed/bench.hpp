#pragma once

// CER benchmark harness. Per image and per k: 2 discarded warmup runs, then
// timed runs; the reported breakdown comes from the run with the median
// end-to-end time, so stage times are self-consistent (their sum never
// exceeds the total).

#include <algorithm>
#include <string>
#include <vector>

#include "sed/dataset.hpp"
#include "sed/metrics.hpp"
#include "sed/model.hpp"
#include "sed/train.hpp"

namespace sed {

struct BenchRecord {
    std::string image;
    int k = 0;  // 0 = ALL
    StageTimes times;
    std::vector<int> active;  // live category count entering each layer's FAM
    double end_to_end_ms = 0;
    double miou = 0;  // against this image's ground truth
    int runs = 0;
    int warmup = 0;
    int threads = 1;  // kernels are single-threaded; recorded for the report
};

struct BenchSummary {
    std::vector<BenchRecord> records;
    double miou = 0;             // over the whole set
    double mean_decoder_ms = 0;  // per image, sum of layer times
    double mean_total_ms = 0;
};

template <typename T>
BenchRecord bench_image(const SedModel<T>& model, const Sample& sample,
                        const TextEmbeddings<T>& emb, const CerConfig& cer, int warmup, int runs,
                        MIoUAccumulator* global_acc = nullptr) {
    if (runs < 1) throw std::invalid_argument("bench: need at least one timed run");
    NoGradGuard no_grad;
    const int n = emb.n;
    auto image = image_to_tensor<T>(sample.image);

    struct Run {
        StageTimes times;
        std::vector<uint16_t> pred;
        CerState cer;
    };
    std::vector<Run> timed;
    for (int r = 0; r < warmup + runs; ++r) {
        Run run;
        auto fwd = forward_pipeline(model, image, emb, cer.enabled ? &cer : nullptr,
                                    /*want_aux=*/false, &run.times);
        run.pred = predict_labels(fwd, n);
        run.cer = fwd.gfd.cer;
        if (r >= warmup) timed.push_back(std::move(run));
    }
    std::sort(timed.begin(), timed.end(),
              [](const Run& a, const Run& b) { return a.times.total_ms < b.times.total_ms; });
    const Run& median = timed[timed.size() / 2];

    BenchRecord rec;
    rec.image = sample.name;
    rec.k = cer.enabled && !cer.is_all() ? cer.k : 0;
    rec.times = median.times;
    rec.end_to_end_ms = median.times.total_ms;
    rec.runs = runs;
    rec.warmup = warmup;
    if (cer.enabled && !median.cer.per_layer_selected.empty()) {
        for (const auto& sel : median.cer.per_layer_selected)
            rec.active.push_back(static_cast<int>(sel.size()));
    } else {
        rec.active.assign(median.times.layer_ms.size(), n);
    }
    MIoUAccumulator acc(n);
    acc.add(median.pred, sample.label.v);
    rec.miou = acc.compute().miou;
    if (global_acc) global_acc->add(median.pred, sample.label.v);
    return rec;
}

template <typename T>
BenchSummary bench_dataset(const SedModel<T>& model, const Dataset& data,
                           const TextEmbeddings<T>& emb, const CerConfig& cer, int warmup = 2,
                           int runs = 5) {
    BenchSummary out;
    MIoUAccumulator acc(emb.n);
    for (const auto& s : data.samples) {
        auto rec = bench_image(model, s, emb, cer, warmup, runs, &acc);
        out.mean_decoder_ms += rec.times.decoder_ms();
        out.mean_total_ms += rec.end_to_end_ms;
        out.records.push_back(std::move(rec));
    }
    out.mean_decoder_ms /= static_cast<double>(data.samples.size());
    out.mean_total_ms /= static_cast<double>(data.samples.size());
    out.miou = acc.compute().miou;
    return out;
}

}  // namespace sed
