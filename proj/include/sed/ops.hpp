#pragma once

// Forward + backward kernels for every operator the pipeline needs.
// Convolution-family ops accept [H, W, C] or [H, W, N, C]; in the rank-4 form
// axis 2 is a batch axis (one slice per category) sharing the same weights.
// No fusion, no fancy scheduling: plain deterministic loops.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "sed/tensor.hpp"

namespace sed {

namespace detail {

struct ConvDims {
    int h, w, b, c;
    bool batched;
};

inline ConvDims conv_dims(const Shape& s, const char* op) {
    if (s.size() == 3) return {s[0], s[1], 1, s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw ShapeError(std::string(op) + ": expected rank 3 or 4 input, got " + shape_str(s));
}

inline Shape conv_out_shape(const ConvDims& d, int oh, int ow, int co) {
    return d.batched ? Shape{oh, ow, d.b, co} : Shape{oh, ow, co};
}

}  // namespace detail

// --- conv2d -------------------------------------------------------------------

// x [H,W,(N,)Cin] * w [kh,kw,Cin,Cout] (+ b [Cout]), output
// H' = floor((H + 2*pad - kh)/stride) + 1 and likewise for W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride,
                 int pad) {
    const auto d = detail::conv_dims(x.shape(), "conv2d");
    if (w.rank() != 4)
        throw ShapeError("conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(w.shape()));
    const int kh = w.dim(0), kw = w.dim(1), ci = w.dim(2), co = w.dim(3);
    if (ci != d.c)
        throw ShapeError("conv2d: input channels do not match kernel, input " +
                         shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != co))
        throw ShapeError("conv2d: bias must be [" + std::to_string(co) + "], got " +
                         shape_str(bias.shape()));
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    const int oh = (d.h + 2 * pad - kh) / stride + 1;
    const int ow = (d.w + 2 * pad - kw) / stride + 1;
    if (d.h + 2 * pad < kh || d.w + 2 * pad < kw)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " exceeds padded input " +
                         shape_str(x.shape()));

    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<T> out(static_cast<size_t>(int64_t(oh) * ow * d.b * co), T(0));
    if (has_bias) {
        const auto& bv = bias.values();
        for (int64_t r = 0; r < int64_t(oh) * ow * d.b; ++r)
            for (int c = 0; c < co; ++c) out[static_cast<size_t>(r * co + c)] = bv[static_cast<size_t>(c)];
    }
    const int H = d.h, W = d.w, B = d.b, Ci = d.c;
    for (int y = 0; y < oh; ++y)
        for (int r = 0; r < kh; ++r) {
            const int iy = y * stride - pad + r;
            if (iy < 0 || iy >= H) continue;
            for (int xo = 0; xo < ow; ++xo)
                for (int s = 0; s < kw; ++s) {
                    const int ix = xo * stride - pad + s;
                    if (ix < 0 || ix >= W) continue;
                    for (int b = 0; b < B; ++b) {
                        const T* xp = xv.data() + ((int64_t(iy) * W + ix) * B + b) * Ci;
                        T* op = out.data() + ((int64_t(y) * ow + xo) * B + b) * co;
                        const T* wbase = wv.data() + (int64_t(r) * kw + s) * Ci * co;
                        for (int c = 0; c < Ci; ++c) {
                            const T xvv = xp[c];
                            const T* wp = wbase + int64_t(c) * co;
                            for (int o = 0; o < co; ++o) op[o] += xvv * wp[o];
                        }
                    }
                }
        }

    std::vector<typename Tensor<T>::NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    auto backward = [kh, kw, ci, co, stride, pad, d, oh, ow, has_bias](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& wv = *self.parents[1]->values;
        const auto& g = self.grad;
        const bool need_x = self.parents[0]->in_graph;
        const bool need_w = self.parents[1]->in_graph;
        const int H = d.h, W = d.w, B = d.b;
        std::vector<T>* gx = need_x ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gw = need_w ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        if (need_x || need_w) {
            for (int y = 0; y < oh; ++y)
                for (int r = 0; r < kh; ++r) {
                    const int iy = y * stride - pad + r;
                    if (iy < 0 || iy >= H) continue;
                    for (int xo = 0; xo < ow; ++xo)
                        for (int s = 0; s < kw; ++s) {
                            const int ix = xo * stride - pad + s;
                            if (ix < 0 || ix >= W) continue;
                            for (int b = 0; b < B; ++b) {
                                const T* gp = g.data() + ((int64_t(y) * ow + xo) * B + b) * co;
                                const int64_t xoff = ((int64_t(iy) * W + ix) * B + b) * ci;
                                const T* wbase = wv.data() + (int64_t(r) * kw + s) * ci * co;
                                for (int c = 0; c < ci; ++c) {
                                    const T* wp = wbase + int64_t(c) * co;
                                    if (gx) {
                                        T acc = T(0);
                                        for (int o = 0; o < co; ++o) acc += gp[o] * wp[o];
                                        (*gx)[static_cast<size_t>(xoff + c)] += acc;
                                    }
                                    if (gw) {
                                        const T xvv = xv[static_cast<size_t>(xoff + c)];
                                        T* wgp = gw->data() + ((int64_t(r) * kw + s) * ci + c) * co;
                                        for (int o = 0; o < co; ++o) wgp[o] += xvv * gp[o];
                                    }
                                }
                            }
                        }
                }
        }
        if (has_bias && self.parents[2]->in_graph) {
            auto& gb = detail::ensure_grad(*self.parents[2]);
            for (int64_t rr = 0; rr < int64_t(oh) * ow * B; ++rr)
                for (int o = 0; o < co; ++o) gb[static_cast<size_t>(o)] += g[static_cast<size_t>(rr * co + o)];
        }
    };
    return detail::make_op<T>(detail::conv_out_shape(d, oh, ow, co), std::move(out),
                              std::move(parents), std::move(backward));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
    return conv2d(x, w, Tensor<T>(), stride, pad);
}

// --- depthwise conv (stride 1, same padding, odd kernel) ------------------------

// x [H,W,(N,)C] * w [k,k,C]; channel c of the output depends only on channel c
// of the input. Weights are shared across the category axis in the rank-4 form.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w) {
    const auto d = detail::conv_dims(x.shape(), "depthwise_conv2d");
    if (w.rank() != 3)
        throw ShapeError("depthwise_conv2d: kernel must be [k,k,C], got " + shape_str(w.shape()));
    const int k = w.dim(0);
    if (w.dim(1) != k || k % 2 == 0)
        throw std::invalid_argument("depthwise_conv2d: kernel must be square with odd size, got " +
                                    shape_str(w.shape()));
    if (w.dim(2) != d.c)
        throw ShapeError("depthwise_conv2d: channel-count mismatch, input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
    const int pad = (k - 1) / 2;
    const int H = d.h, W = d.w, B = d.b, C = d.c;
    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<T> out(xv.size(), T(0));
    for (int y = 0; y < H; ++y)
        for (int r = 0; r < k; ++r) {
            const int iy = y - pad + r;
            if (iy < 0 || iy >= H) continue;
            for (int xo = 0; xo < W; ++xo)
                for (int s = 0; s < k; ++s) {
                    const int ix = xo - pad + s;
                    if (ix < 0 || ix >= W) continue;
                    const T* wp = wv.data() + (int64_t(r) * k + s) * C;
                    for (int b = 0; b < B; ++b) {
                        const T* xp = xv.data() + ((int64_t(iy) * W + ix) * B + b) * C;
                        T* op = out.data() + ((int64_t(y) * W + xo) * B + b) * C;
                        for (int c = 0; c < C; ++c) op[c] += xp[c] * wp[c];
                    }
                }
        }
    auto backward = [k, pad, d](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& wv = *self.parents[1]->values;
        const auto& g = self.grad;
        const int H = d.h, W = d.w, B = d.b, C = d.c;
        std::vector<T>* gx = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gw = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        if (!gx && !gw) return;
        for (int y = 0; y < H; ++y)
            for (int r = 0; r < k; ++r) {
                const int iy = y - pad + r;
                if (iy < 0 || iy >= H) continue;
                for (int xo = 0; xo < W; ++xo)
                    for (int s = 0; s < k; ++s) {
                        const int ix = xo - pad + s;
                        if (ix < 0 || ix >= W) continue;
                        const T* wp = wv.data() + (int64_t(r) * k + s) * C;
                        for (int b = 0; b < B; ++b) {
                            const T* gp = g.data() + ((int64_t(y) * W + xo) * B + b) * C;
                            const int64_t xoff = ((int64_t(iy) * W + ix) * B + b) * C;
                            if (gx)
                                for (int c = 0; c < C; ++c)
                                    (*gx)[static_cast<size_t>(xoff + c)] += gp[c] * wp[c];
                            if (gw) {
                                T* wg = gw->data() + (int64_t(r) * k + s) * C;
                                for (int c = 0; c < C; ++c)
                                    wg[c] += xv[static_cast<size_t>(xoff + c)] * gp[c];
                            }
                        }
                    }
            }
    };
    return detail::make_op<T>(x.shape(), std::move(out), {x.node(), w.node()}, std::move(backward));
}

// --- transposed conv (2x2 kernel, stride 2: exact spatial doubling) -------------

// Adjoint of a stride-2 2x2 conv2d: out[2i+a, 2j+b] += x[i,j] * w[a,b].
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w) {
    const auto d = detail::conv_dims(x.shape(), "transposed_conv2d");
    if (w.rank() != 4 || w.dim(0) != 2 || w.dim(1) != 2)
        throw std::invalid_argument(
            "transposed_conv2d: only the doubling configuration [2,2,Cin,Cout] is supported, got " +
            shape_str(w.shape()));
    if (w.dim(2) != d.c)
        throw ShapeError("transposed_conv2d: input channels do not match kernel, input " +
                         shape_str(x.shape()) + " vs kernel " + shape_str(w.shape()));
    const int ci = d.c, co = w.dim(3), H = d.h, W = d.w, B = d.b;
    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<T> out(static_cast<size_t>(int64_t(2 * H) * (2 * W) * B * co), T(0));
    for (int y = 0; y < H; ++y)
        for (int xo = 0; xo < W; ++xo)
            for (int b = 0; b < B; ++b) {
                const T* xp = xv.data() + ((int64_t(y) * W + xo) * B + b) * ci;
                for (int a = 0; a < 2; ++a)
                    for (int s = 0; s < 2; ++s) {
                        T* op = out.data() +
                                ((int64_t(2 * y + a) * (2 * W) + (2 * xo + s)) * B + b) * co;
                        const T* wbase = wv.data() + (int64_t(a) * 2 + s) * ci * co;
                        for (int c = 0; c < ci; ++c) {
                            const T xvv = xp[c];
                            const T* wp = wbase + int64_t(c) * co;
                            for (int o = 0; o < co; ++o) op[o] += xvv * wp[o];
                        }
                    }
            }
    auto backward = [ci, co, d](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& wv = *self.parents[1]->values;
        const auto& g = self.grad;
        const int H = d.h, W = d.w, B = d.b;
        std::vector<T>* gx = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gw = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        if (!gx && !gw) return;
        for (int y = 0; y < H; ++y)
            for (int xo = 0; xo < W; ++xo)
                for (int b = 0; b < B; ++b) {
                    const int64_t xoff = ((int64_t(y) * W + xo) * B + b) * ci;
                    for (int a = 0; a < 2; ++a)
                        for (int s = 0; s < 2; ++s) {
                            const T* gp = g.data() +
                                          ((int64_t(2 * y + a) * (2 * W) + (2 * xo + s)) * B + b) * co;
                            const T* wbase = wv.data() + (int64_t(a) * 2 + s) * ci * co;
                            for (int c = 0; c < ci; ++c) {
                                const T* wp = wbase + int64_t(c) * co;
                                if (gx) {
                                    T acc = T(0);
                                    for (int o = 0; o < co; ++o) acc += gp[o] * wp[o];
                                    (*gx)[static_cast<size_t>(xoff + c)] += acc;
                                }
                                if (gw) {
                                    const T xvv = xv[static_cast<size_t>(xoff + c)];
                                    T* wgp = gw->data() + ((int64_t(a) * 2 + s) * ci + c) * co;
                                    for (int o = 0; o < co; ++o) wgp[o] += xvv * gp[o];
                                }
                            }
                        }
                }
    };
    Shape out_shape = d.batched ? Shape{2 * H, 2 * W, B, co} : Shape{2 * H, 2 * W, co};
    return detail::make_op<T>(std::move(out_shape), std::move(out), {x.node(), w.node()},
                              std::move(backward));
}

// --- layer norm over the last axis ---------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const int c = x.dim(x.rank() - 1);
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
        throw ShapeError("layer_norm: gamma/beta must be [" + std::to_string(c) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
    const int64_t rows = x.numel() / c;
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    std::vector<T> out(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * c;
        T mu = T(0);
        for (int i = 0; i < c; ++i) mu += xp[i];
        mu /= T(c);
        T var = T(0);
        for (int i = 0; i < c; ++i) var += (xp[i] - mu) * (xp[i] - mu);
        var /= T(c);
        const T inv = T(1) / std::sqrt(var + eps);
        T* op = out.data() + r * c;
        for (int i = 0; i < c; ++i) op[i] = gv[static_cast<size_t>(i)] * ((xp[i] - mu) * inv) + bv[static_cast<size_t>(i)];
    }
    auto backward = [c, rows, eps](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& gv = *self.parents[1]->values;
        const auto& g = self.grad;
        std::vector<T>* gx = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gg = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        std::vector<T>* gb = self.parents[2]->in_graph ? &detail::ensure_grad(*self.parents[2]) : nullptr;
        std::vector<T> xhat(static_cast<size_t>(c));
        for (int64_t r = 0; r < rows; ++r) {
            const T* xp = xv.data() + r * c;
            const T* gp = g.data() + r * c;
            T mu = T(0);
            for (int i = 0; i < c; ++i) mu += xp[i];
            mu /= T(c);
            T var = T(0);
            for (int i = 0; i < c; ++i) var += (xp[i] - mu) * (xp[i] - mu);
            var /= T(c);
            const T inv = T(1) / std::sqrt(var + eps);
            for (int i = 0; i < c; ++i) xhat[static_cast<size_t>(i)] = (xp[i] - mu) * inv;
            if (gg)
                for (int i = 0; i < c; ++i) (*gg)[static_cast<size_t>(i)] += gp[i] * xhat[static_cast<size_t>(i)];
            if (gb)
                for (int i = 0; i < c; ++i) (*gb)[static_cast<size_t>(i)] += gp[i];
            if (gx) {
                T mean_dh = T(0), mean_dhx = T(0);
                for (int i = 0; i < c; ++i) {
                    const T dh = gp[i] * gv[static_cast<size_t>(i)];
                    mean_dh += dh;
                    mean_dhx += dh * xhat[static_cast<size_t>(i)];
                }
                mean_dh /= T(c);
                mean_dhx /= T(c);
                T* xg = gx->data() + r * c;
                for (int i = 0; i < c; ++i) {
                    const T dh = gp[i] * gv[static_cast<size_t>(i)];
                    xg[i] += inv * (dh - mean_dh - xhat[static_cast<size_t>(i)] * mean_dhx);
                }
            }
        }
    };
    return detail::make_op<T>(x.shape(), std::move(out),
                              {x.node(), gamma.node(), beta.node()}, std::move(backward));
}

// --- activations ----------------------------------------------------------------

// Exact erf form: gelu(x) = x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    auto backward = [](detail::Node<T>& self) {
        if (!self.parents[0]->in_graph) return;
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        const auto& xv = *self.parents[0]->values;
        auto& gx = detail::ensure_grad(*self.parents[0]);
        for (size_t i = 0; i < gx.size(); ++i) {
            const double v = static_cast<double>(xv[i]);
            const double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            gx[i] += self.grad[i] * static_cast<T>(phi + v * pdf);
        }
    };
    return detail::make_op<T>(x.shape(), std::move(out), {x.node()}, std::move(backward));
}

// Kernel feature for linear attention: phi(u) = elu(u) + 1 (strictly positive).
template <typename T>
Tensor<T> elu_plus_one(const Tensor<T>& x) {
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] > T(0) ? xv[i] + T(1) : std::exp(xv[i]);
    auto backward = [](detail::Node<T>& self) {
        if (!self.parents[0]->in_graph) return;
        const auto& xv = *self.parents[0]->values;
        const auto& ov = *self.values;
        auto& gx = detail::ensure_grad(*self.parents[0]);
        for (size_t i = 0; i < gx.size(); ++i)
            gx[i] += self.grad[i] * (xv[i] > T(0) ? T(1) : ov[i]);
    };
    return detail::make_op<T>(x.shape(), std::move(out), {x.node()}, std::move(backward));
}

// --- linear (affine map over the last axis) --------------------------------------

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (w.rank() != 2)
        throw ShapeError("linear: weight must be [Din,Dout], got " + shape_str(w.shape()));
    const int din = w.dim(0), dout = w.dim(1);
    if (x.dim(x.rank() - 1) != din)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != dout))
        throw ShapeError("linear: bias must be [" + std::to_string(dout) + "], got " +
                         shape_str(bias.shape()));
    const int64_t rows = x.numel() / din;
    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<T> out(static_cast<size_t>(rows * dout), T(0));
    if (has_bias) {
        const auto& bv = bias.values();
        for (int64_t r = 0; r < rows; ++r)
            for (int o = 0; o < dout; ++o) out[static_cast<size_t>(r * dout + o)] = bv[static_cast<size_t>(o)];
    }
    for (int64_t r = 0; r < rows; ++r) {
        const T* xp = xv.data() + r * din;
        T* op = out.data() + r * dout;
        for (int i = 0; i < din; ++i) {
            const T xvv = xp[i];
            const T* wp = wv.data() + int64_t(i) * dout;
            for (int o = 0; o < dout; ++o) op[o] += xvv * wp[o];
        }
    }
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    std::vector<typename Tensor<T>::NodePtr> parents = {x.node(), w.node()};
    if (has_bias) parents.push_back(bias.node());
    auto backward = [din, dout, rows, has_bias](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& wv = *self.parents[1]->values;
        const auto& g = self.grad;
        std::vector<T>* gx = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gw = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const T* gp = g.data() + r * dout;
            const T* xp = xv.data() + r * din;
            if (gx) {
                T* xg = gx->data() + r * din;
                for (int i = 0; i < din; ++i) {
                    const T* wp = wv.data() + int64_t(i) * dout;
                    T acc = T(0);
                    for (int o = 0; o < dout; ++o) acc += gp[o] * wp[o];
                    xg[i] += acc;
                }
            }
            if (gw)
                for (int i = 0; i < din; ++i) {
                    T* wg = gw->data() + int64_t(i) * dout;
                    const T xvv = xp[i];
                    for (int o = 0; o < dout; ++o) wg[o] += xvv * gp[o];
                }
        }
        if (has_bias && self.parents[2]->in_graph) {
            auto& gb = detail::ensure_grad(*self.parents[2]);
            for (int64_t r = 0; r < rows; ++r)
                for (int o = 0; o < dout; ++o) gb[static_cast<size_t>(o)] += g[static_cast<size_t>(r * dout + o)];
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(out), std::move(parents),
                              std::move(backward));
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
    return linear(x, w, Tensor<T>());
}

// --- batched matrix products (for linear attention) ------------------------------

namespace detail {
template <typename T>
int64_t bmm_batch(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
        throw ShapeError(std::string(op) + ": rank mismatch, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    int64_t batch = 1;
    for (int i = 0; i + 2 < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i))
            throw ShapeError(std::string(op) + ": batch extents differ, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
        batch *= a.dim(i);
    }
    return batch;
}
}  // namespace detail

// a [.., N, D1], b [.., N, D2] -> [.., D1, D2]  (a^T b per batch element)
template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t batch = detail::bmm_batch(a, b, "bmm_tn");
    const int n = a.dim(a.rank() - 2), d1 = a.dim(a.rank() - 1);
    const int n2 = b.dim(b.rank() - 2), d2 = b.dim(b.rank() - 1);
    if (n != n2)
        throw ShapeError("bmm_tn: contraction extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(static_cast<size_t>(batch * d1 * d2), T(0));
    for (int64_t q = 0; q < batch; ++q) {
        const T* ap = av.data() + q * n * d1;
        const T* bp = bv.data() + q * n * d2;
        T* op = out.data() + q * d1 * d2;
        for (int t = 0; t < n; ++t)
            for (int i = 0; i < d1; ++i) {
                const T aa = ap[int64_t(t) * d1 + i];
                const T* br = bp + int64_t(t) * d2;
                T* orow = op + int64_t(i) * d2;
                for (int j = 0; j < d2; ++j) orow[j] += aa * br[j];
            }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(d1);
    out_shape.push_back(d2);
    auto backward = [batch, n, d1, d2](detail::Node<T>& self) {
        const auto& av = *self.parents[0]->values;
        const auto& bv = *self.parents[1]->values;
        const auto& g = self.grad;
        std::vector<T>* ga = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gb = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        for (int64_t q = 0; q < batch; ++q) {
            const T* gp = g.data() + q * d1 * d2;
            const T* ap = av.data() + q * n * d1;
            const T* bp = bv.data() + q * n * d2;
            for (int t = 0; t < n; ++t) {
                if (ga) {
                    T* ag = ga->data() + q * n * d1 + int64_t(t) * d1;
                    const T* br = bp + int64_t(t) * d2;
                    for (int i = 0; i < d1; ++i) {
                        T acc = T(0);
                        const T* grow = gp + int64_t(i) * d2;
                        for (int j = 0; j < d2; ++j) acc += grow[j] * br[j];
                        ag[i] += acc;
                    }
                }
                if (gb) {
                    T* bg = gb->data() + q * n * d2 + int64_t(t) * d2;
                    for (int i = 0; i < d1; ++i) {
                        const T aa = ap[int64_t(t) * d1 + i];
                        const T* grow = gp + int64_t(i) * d2;
                        for (int j = 0; j < d2; ++j) bg[j] += aa * grow[j];
                    }
                }
            }
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                              std::move(backward));
}

// a [.., N, D1], b [.., D1, D2] -> [.., N, D2]
template <typename T>
Tensor<T> bmm_nn(const Tensor<T>& a, const Tensor<T>& b) {
    const int64_t batch = detail::bmm_batch(a, b, "bmm_nn");
    const int n = a.dim(a.rank() - 2), d1 = a.dim(a.rank() - 1);
    const int d1b = b.dim(b.rank() - 2), d2 = b.dim(b.rank() - 1);
    if (d1 != d1b)
        throw ShapeError("bmm_nn: contraction extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(static_cast<size_t>(batch * n * d2), T(0));
    for (int64_t q = 0; q < batch; ++q) {
        const T* ap = av.data() + q * n * d1;
        const T* bp = bv.data() + q * d1 * d2;
        T* op = out.data() + q * n * d2;
        for (int t = 0; t < n; ++t) {
            T* orow = op + int64_t(t) * d2;
            for (int i = 0; i < d1; ++i) {
                const T aa = ap[int64_t(t) * d1 + i];
                const T* br = bp + int64_t(i) * d2;
                for (int j = 0; j < d2; ++j) orow[j] += aa * br[j];
            }
        }
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 2);
    out_shape.push_back(n);
    out_shape.push_back(d2);
    auto backward = [batch, n, d1, d2](detail::Node<T>& self) {
        const auto& av = *self.parents[0]->values;
        const auto& bv = *self.parents[1]->values;
        const auto& g = self.grad;
        std::vector<T>* ga = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gb = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        for (int64_t q = 0; q < batch; ++q) {
            const T* gp = g.data() + q * n * d2;
            const T* ap = av.data() + q * n * d1;
            const T* bp = bv.data() + q * d1 * d2;
            for (int t = 0; t < n; ++t) {
                const T* grow = gp + int64_t(t) * d2;
                if (ga) {
                    T* ag = ga->data() + q * n * d1 + int64_t(t) * d1;
                    for (int i = 0; i < d1; ++i) {
                        const T* br = bp + int64_t(i) * d2;
                        T acc = T(0);
                        for (int j = 0; j < d2; ++j) acc += grow[j] * br[j];
                        ag[i] += acc;
                    }
                }
                if (gb) {
                    for (int i = 0; i < d1; ++i) {
                        const T aa = ap[int64_t(t) * d1 + i];
                        T* bg = gb->data() + q * d1 * d2 + int64_t(i) * d2;
                        for (int j = 0; j < d2; ++j) bg[j] += aa * grow[j];
                    }
                }
            }
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                              std::move(backward));
}

// x [.., D] / d [.., 1], broadcasting the divisor over the last axis.
template <typename T>
Tensor<T> div_last(const Tensor<T>& x, const Tensor<T>& denom) {
    if (denom.rank() != x.rank() || denom.dim(denom.rank() - 1) != 1)
        throw ShapeError("div_last: divisor must be [..,1], got " + shape_str(denom.shape()) +
                         " for " + shape_str(x.shape()));
    for (int i = 0; i + 1 < x.rank(); ++i)
        if (x.dim(i) != denom.dim(i))
            throw ShapeError("div_last: leading extents differ, " + shape_str(x.shape()) + " vs " +
                             shape_str(denom.shape()));
    const int c = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / c;
    const auto& xv = x.values();
    const auto& dv = denom.values();
    std::vector<T> out(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const T d = dv[static_cast<size_t>(r)];
        for (int i = 0; i < c; ++i)
            out[static_cast<size_t>(r * c + i)] = xv[static_cast<size_t>(r * c + i)] / d;
    }
    auto backward = [c, rows](detail::Node<T>& self) {
        const auto& xv = *self.parents[0]->values;
        const auto& dv = *self.parents[1]->values;
        const auto& g = self.grad;
        std::vector<T>* gx = self.parents[0]->in_graph ? &detail::ensure_grad(*self.parents[0]) : nullptr;
        std::vector<T>* gd = self.parents[1]->in_graph ? &detail::ensure_grad(*self.parents[1]) : nullptr;
        for (int64_t r = 0; r < rows; ++r) {
            const T d = dv[static_cast<size_t>(r)];
            if (gx)
                for (int i = 0; i < c; ++i)
                    (*gx)[static_cast<size_t>(r * c + i)] += g[static_cast<size_t>(r * c + i)] / d;
            if (gd) {
                T acc = T(0);
                for (int i = 0; i < c; ++i)
                    acc += g[static_cast<size_t>(r * c + i)] * xv[static_cast<size_t>(r * c + i)];
                (*gd)[static_cast<size_t>(r)] -= acc / (d * d);
            }
        }
    };
    return detail::make_op<T>(x.shape(), std::move(out), {x.node(), denom.node()},
                              std::move(backward));
}

// --- bilinear upsampling over the first two axes ---------------------------------

// Half-pixel-center convention: src = (dst + 0.5) * in/out - 0.5, clamped.
// Interpolation weights sum to 1, so constant maps are preserved exactly.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int out_h, int out_w) {
    if (x.rank() < 2)
        throw ShapeError("upsample_bilinear: rank-2+ input expected, got " + shape_str(x.shape()));
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("upsample_bilinear: bad output size");
    const int in_h = x.dim(0), in_w = x.dim(1);
    int64_t m = 1;
    for (int i = 2; i < x.rank(); ++i) m *= x.dim(i);

    struct Tap {
        int lo, hi;
        T frac;
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(static_cast<size_t>(out));
        const double scale = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * scale - 0.5;
            if (src < 0) src = 0;
            int lo = static_cast<int>(src);
            if (lo > in - 1) lo = in - 1;
            int hi = lo + 1 < in ? lo + 1 : in - 1;
            T frac = static_cast<T>(src - lo);
            if (hi == lo) frac = T(0);
            taps[static_cast<size_t>(o)] = {lo, hi, frac};
        }
        return taps;
    };
    const auto ty = make_taps(in_h, out_h);
    const auto tx = make_taps(in_w, out_w);

    const auto& xv = x.values();
    std::vector<T> out(static_cast<size_t>(int64_t(out_h) * out_w * m));
    for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[static_cast<size_t>(y)];
        for (int xo = 0; xo < out_w; ++xo) {
            const Tap& b = tx[static_cast<size_t>(xo)];
            const T w00 = (T(1) - a.frac) * (T(1) - b.frac);
            const T w01 = (T(1) - a.frac) * b.frac;
            const T w10 = a.frac * (T(1) - b.frac);
            const T w11 = a.frac * b.frac;
            const T* p00 = xv.data() + (int64_t(a.lo) * in_w + b.lo) * m;
            const T* p01 = xv.data() + (int64_t(a.lo) * in_w + b.hi) * m;
            const T* p10 = xv.data() + (int64_t(a.hi) * in_w + b.lo) * m;
            const T* p11 = xv.data() + (int64_t(a.hi) * in_w + b.hi) * m;
            T* op = out.data() + (int64_t(y) * out_w + xo) * m;
            for (int64_t i = 0; i < m; ++i)
                op[i] = w00 * p00[i] + w01 * p01[i] + w10 * p10[i] + w11 * p11[i];
        }
    }
    Shape out_shape = x.shape();
    out_shape[0] = out_h;
    out_shape[1] = out_w;
    auto backward = [ty, tx, in_w, out_h, out_w, m](detail::Node<T>& self) {
        if (!self.parents[0]->in_graph) return;
        auto& gx = detail::ensure_grad(*self.parents[0]);
        const auto& g = self.grad;
        for (int y = 0; y < out_h; ++y) {
            const Tap& a = ty[static_cast<size_t>(y)];
            for (int xo = 0; xo < out_w; ++xo) {
                const Tap& b = tx[static_cast<size_t>(xo)];
                const T w00 = (T(1) - a.frac) * (T(1) - b.frac);
                const T w01 = (T(1) - a.frac) * b.frac;
                const T w10 = a.frac * (T(1) - b.frac);
                const T w11 = a.frac * b.frac;
                const T* gp = g.data() + (int64_t(y) * out_w + xo) * m;
                T* p00 = gx.data() + (int64_t(a.lo) * in_w + b.lo) * m;
                T* p01 = gx.data() + (int64_t(a.lo) * in_w + b.hi) * m;
                T* p10 = gx.data() + (int64_t(a.hi) * in_w + b.lo) * m;
                T* p11 = gx.data() + (int64_t(a.hi) * in_w + b.hi) * m;
                for (int64_t i = 0; i < m; ++i) {
                    p00[i] += w00 * gp[i];
                    p01[i] += w01 * gp[i];
                    p10[i] += w10 * gp[i];
                    p11[i] += w11 * gp[i];
                }
            }
        }
    };
    return detail::make_op<T>(std::move(out_shape), std::move(out), {x.node()}, std::move(backward));
}

// --- per-pixel softmax cross entropy ----------------------------------------------

// logits [H,W,N], labels row-major H*W. Mean over non-ignored pixels of
// -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<uint16_t>& labels,
                                uint16_t ignore = kIgnoreLabel) {
    if (logits.rank() != 3)
        throw ShapeError("softmax_cross_entropy: logits must be [H,W,N], got " +
                         shape_str(logits.shape()));
    const int n = logits.dim(2);
    const int64_t px = int64_t(logits.dim(0)) * logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != px)
        throw ShapeError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                         " does not match " + shape_str(logits.shape()));
    const auto& lv = logits.values();
    double loss = 0.0;
    int64_t count = 0;
    for (int64_t p = 0; p < px; ++p) {
        const uint16_t lab = labels[static_cast<size_t>(p)];
        if (lab == ignore) continue;
        if (lab >= n)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lab) +
                                        " out of range for " + std::to_string(n) + " categories");
        const T* row = lv.data() + p * n;
        T mx = row[0];
        for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
        double lse = 0.0;
        for (int c = 0; c < n; ++c) lse += std::exp(static_cast<double>(row[c] - mx));
        loss += std::log(lse) + static_cast<double>(mx) - static_cast<double>(row[lab]);
        ++count;
    }
    if (count == 0)
        throw std::invalid_argument("softmax_cross_entropy: all pixels carry the ignore label");
    const T mean_loss = static_cast<T>(loss / static_cast<double>(count));
    auto backward = [labels, ignore, n, px, count](detail::Node<T>& self) {
        if (!self.parents[0]->in_graph) return;
        const auto& lv = *self.parents[0]->values;
        auto& gx = detail::ensure_grad(*self.parents[0]);
        const T g = self.grad[0] / static_cast<T>(count);
        for (int64_t p = 0; p < px; ++p) {
            const uint16_t lab = labels[static_cast<size_t>(p)];
            if (lab == ignore) continue;
            const T* row = lv.data() + p * n;
            T mx = row[0];
            for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
            T denom = T(0);
            for (int c = 0; c < n; ++c) denom += std::exp(row[c] - mx);
            T* grow = gx.data() + p * n;
            for (int c = 0; c < n; ++c) {
                T soft = std::exp(row[c] - mx) / denom;
                grow[c] += g * (soft - (c == lab ? T(1) : T(0)));
            }
        }
    };
    return detail::make_op<T>(Shape{1}, std::vector<T>{mean_loss}, {logits.node()},
                              std::move(backward));
}

}  // namespace sed
