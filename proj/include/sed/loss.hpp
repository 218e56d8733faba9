#pragma once

// Training loss: per-pixel softmax cross entropy on the main logits plus a
// weighted sum of the same loss on each auxiliary map (bilinearly upsampled
// to the label resolution first). Aux inputs are detached upstream, so these
// terms train only the aux heads.

#include <vector>

#include "sed/ops.hpp"

namespace sed {

template <typename T>
Tensor<T> seg_loss(const Tensor<T>& main_logits, const std::vector<Tensor<T>>& aux_logits,
                   const std::vector<uint16_t>& labels, T aux_weight,
                   uint16_t ignore = kIgnoreLabel) {
    const int h = main_logits.dim(0), w = main_logits.dim(1);
    auto loss = softmax_cross_entropy(main_logits, labels, ignore);
    if (aux_weight != T(0) && !aux_logits.empty()) {
        Tensor<T> aux_sum;
        for (const auto& a : aux_logits) {
            auto up = upsample_bilinear(a, h, w);
            auto l = softmax_cross_entropy(up, labels, ignore);
            aux_sum = aux_sum.defined() ? add(aux_sum, l) : l;
        }
        loss = add(loss, scale(aux_sum, aux_weight));
    }
    return loss;
}

}  // namespace sed
