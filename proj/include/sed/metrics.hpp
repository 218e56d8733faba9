#pragma once

// mIoU over an N x N confusion matrix (rows = ground truth, cols =
// prediction). Ignored pixels are skipped; classes absent from both ground
// truth and prediction are excluded from the mean.

#include <cstdint>
#include <string>
#include <vector>

#include "sed/ops.hpp"

namespace sed {

class MIoUAccumulator {
public:
    explicit MIoUAccumulator(int num_classes) : n_(num_classes) {
        if (num_classes <= 0)
            throw std::invalid_argument("mIoU: class count must be positive");
        confusion_.assign(static_cast<size_t>(n_) * n_, 0);
    }

    void add(const uint16_t* pred, const uint16_t* gt, size_t count,
             uint16_t ignore = kIgnoreLabel) {
        for (size_t i = 0; i < count; ++i) {
            const uint16_t g = gt[i];
            if (g == ignore) continue;
            const uint16_t p = pred[i];
            if (g >= n_ || p >= n_)
                throw std::invalid_argument("mIoU: label " + std::to_string(g >= n_ ? g : p) +
                                            " out of range for " + std::to_string(n_) + " classes");
            ++confusion_[static_cast<size_t>(g) * n_ + p];
            ++scored_;
        }
    }

    void add(const std::vector<uint16_t>& pred, const std::vector<uint16_t>& gt,
             uint16_t ignore = kIgnoreLabel) {
        if (pred.size() != gt.size())
            throw std::invalid_argument("mIoU: prediction/ground-truth size mismatch");
        add(pred.data(), gt.data(), pred.size(), ignore);
    }

    struct Result {
        double miou = 0.0;
        std::vector<double> per_class;  // meaningful only where valid
        std::vector<bool> valid;
        int64_t scored_pixels = 0;
    };

    // IoU_c = TP / (TP + FP + FN); classes with zero union are excluded.
    Result compute() const {
        Result r;
        r.per_class.assign(static_cast<size_t>(n_), 0.0);
        r.valid.assign(static_cast<size_t>(n_), false);
        r.scored_pixels = scored_;
        double sum = 0.0;
        int valid_count = 0;
        for (int c = 0; c < n_; ++c) {
            const uint64_t tp = confusion_[static_cast<size_t>(c) * n_ + c];
            uint64_t row = 0, col = 0;
            for (int j = 0; j < n_; ++j) {
                row += confusion_[static_cast<size_t>(c) * n_ + j];
                col += confusion_[static_cast<size_t>(j) * n_ + c];
            }
            const uint64_t uni = row + col - tp;
            if (uni == 0) continue;
            const double iou = static_cast<double>(tp) / static_cast<double>(uni);
            r.per_class[static_cast<size_t>(c)] = iou;
            r.valid[static_cast<size_t>(c)] = true;
            sum += iou;
            ++valid_count;
        }
        if (valid_count == 0)
            throw std::invalid_argument("mIoU undefined: every class is empty");
        r.miou = sum / valid_count;
        return r;
    }

    const std::vector<uint64_t>& confusion() const { return confusion_; }
    int num_classes() const { return n_; }

private:
    int n_;
    std::vector<uint64_t> confusion_;
    int64_t scored_ = 0;
};

// Argmax over the last axis; ties resolve to the lower index.
template <typename T>
std::vector<uint16_t> argmax_labels(const Tensor<T>& logits) {
    const int n = logits.dim(logits.rank() - 1);
    const int64_t px = logits.numel() / n;
    const auto& lv = logits.values();
    std::vector<uint16_t> out(static_cast<size_t>(px));
    for (int64_t q = 0; q < px; ++q) {
        const T* row = lv.data() + q * n;
        int best = 0;
        for (int c = 1; c < n; ++c)
            if (row[c] > row[best]) best = c;
        out[static_cast<size_t>(q)] = static_cast<uint16_t>(best);
    }
    return out;
}

}  // namespace sed
