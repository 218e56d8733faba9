#pragma once

// Category early rejection: per-image union of per-pixel top-k predictions,
// pruning of the category axis between decoder layers, and scatter-back of
// pruned logits onto the full category axis for evaluation.

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "sed/tensor.hpp"

namespace sed {

struct CerConfig {
    bool enabled = false;
    int k = 0;  // 0 means ALL

    bool is_all() const { return k <= 0; }

    void validate(int n) const {
        if (enabled && !is_all() && k > n)
            throw std::invalid_argument("cer: k=" + std::to_string(k) + " exceeds " +
                                        std::to_string(n) + " categories");
    }
};

// Tracks which original category indices are still alive. `active` is sorted
// ascending and shrinks monotonically across layers; position j of any pruned
// tensor corresponds to original category active[j].
struct CerState {
    std::vector<int> active;
    std::vector<std::vector<int>> per_layer_selected;  // original indices per selection event
    bool fallback_used = false;

    static CerState full(int n) {
        CerState s;
        s.active.resize(static_cast<size_t>(n));
        std::iota(s.active.begin(), s.active.end(), 0);
        return s;
    }
};

// Union over all pixels of each pixel's k largest-logit categories. Ties are
// broken toward the lower category index. Returns sorted local indices.
template <typename T>
std::vector<int> select_topk_union(const Tensor<T>& logits, int k) {
    if (logits.rank() != 3)
        throw ShapeError("select_topk_union: logits must be [H,W,N], got " +
                         shape_str(logits.shape()));
    const int n = logits.dim(2);
    if (k < 1 || k > n)
        throw std::invalid_argument("select_topk_union: k=" + std::to_string(k) +
                                    " out of range [1," + std::to_string(n) + "]");
    const int64_t px = int64_t(logits.dim(0)) * logits.dim(1);
    const auto& lv = logits.values();
    std::vector<char> keep(static_cast<size_t>(n), 0);
    std::vector<int> order(static_cast<size_t>(n));
    for (int64_t q = 0; q < px; ++q) {
        const T* row = lv.data() + q * n;
        std::iota(order.begin(), order.end(), 0);
        std::nth_element(order.begin(), order.begin() + (k - 1), order.end(),
                         [row](int a, int b) {
                             if (row[a] != row[b]) return row[a] > row[b];
                             return a < b;
                         });
        for (int i = 0; i < k; ++i) keep[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    }
    std::vector<int> out;
    for (int c = 0; c < n; ++c)
        if (keep[static_cast<size_t>(c)]) out.push_back(c);
    return out;
}

template <typename T>
struct PruneResult {
    Tensor<T> state;    // [H,W,N_sel,D]
    Tensor<T> cost;     // [H_v,W_v,N_sel,P]
    CerState cer;
};

// Restricts the category axis of the decoder feature and the cost map to the
// selected local indices (order preserved) and composes the selection into
// the running scatter map. An empty selection falls back to the single
// highest-logit category so the pipeline never runs dry.
template <typename T>
PruneResult<T> prune(const Tensor<T>& state, const Tensor<T>& cost, std::vector<int> selected,
                     const CerState& cer, const Tensor<T>& fallback_logits) {
    const int n = state.dim(2);
    if (cost.dim(2) != n)
        throw ShapeError("prune: feature and cost category extents differ, " +
                         shape_str(state.shape()) + " vs " + shape_str(cost.shape()));
    if (static_cast<int>(cer.active.size()) != n)
        throw std::invalid_argument("prune: CerState tracks " +
                                    std::to_string(cer.active.size()) + " categories, tensors have " +
                                    std::to_string(n));
    PruneResult<T> out;
    out.cer = cer;
    if (selected.empty()) {
        // Highest logit anywhere wins; scan order makes ties deterministic.
        const auto& lv = fallback_logits.values();
        const int ln = fallback_logits.dim(2);
        int best = 0;
        T best_v = std::numeric_limits<T>::lowest();
        for (int64_t q = 0; q < int64_t(fallback_logits.dim(0)) * fallback_logits.dim(1); ++q)
            for (int c = 0; c < ln; ++c) {
                const T v = lv[static_cast<size_t>(q * ln + c)];
                if (v > best_v) {
                    best_v = v;
                    best = c;
                }
            }
        selected = {best};
        out.cer.fallback_used = true;
    }
    std::sort(selected.begin(), selected.end());
    for (int j : selected)
        if (j < 0 || j >= n)
            throw std::invalid_argument("prune: selected index " + std::to_string(j) +
                                        " outside current active range [0," + std::to_string(n) +
                                        ")");
    std::vector<int> new_active(selected.size());
    for (size_t i = 0; i < selected.size(); ++i)
        new_active[i] = cer.active[static_cast<size_t>(selected[i])];
    out.cer.active = std::move(new_active);
    out.cer.per_layer_selected.push_back(out.cer.active);
    if (static_cast<int>(selected.size()) == n) {
        out.state = state;
        out.cost = cost;
    } else {
        out.state = take_axis(state, 2, selected);
        out.cost = take_axis(cost, 2, selected);
    }
    return out;
}

// Expands pruned logits [H,W,N_active] back to the full axis [H,W,N];
// rejected categories get the most negative finite value so an argmax can
// never pick them.
template <typename T>
Tensor<T> scatter_back(const Tensor<T>& pruned, const CerState& cer, int n) {
    if (pruned.rank() != 3)
        throw ShapeError("scatter_back: logits must be [H,W,N_active], got " +
                         shape_str(pruned.shape()));
    const int nf = pruned.dim(2);
    if (nf != static_cast<int>(cer.active.size()))
        throw ShapeError("scatter_back: logits carry " + std::to_string(nf) +
                         " categories but CerState tracks " + std::to_string(cer.active.size()));
    for (int idx : cer.active)
        if (idx < 0 || idx >= n)
            throw std::invalid_argument("scatter_back: active index " + std::to_string(idx) +
                                        " outside [0," + std::to_string(n) + ")");
    const int64_t px = int64_t(pruned.dim(0)) * pruned.dim(1);
    const auto& pv = pruned.values();
    std::vector<T> out(static_cast<size_t>(px * n), std::numeric_limits<T>::lowest());
    for (int64_t q = 0; q < px; ++q) {
        const T* src = pv.data() + q * nf;
        T* dst = out.data() + q * n;
        for (int j = 0; j < nf; ++j) dst[cer.active[static_cast<size_t>(j)]] = src[j];
    }
    return Tensor<T>(Shape{pruned.dim(0), pruned.dim(1), n}, std::move(out));
}

}  // namespace sed
