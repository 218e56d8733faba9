#pragma once

// Dense row-major tensor with tape-based reverse-mode differentiation.
// The last axis is contiguous; axis order is documented per operation
// (images are [H, W, C], decoder features [H, W, N, D]).
//
// Values are immutable once a tensor is built; only gradient buffers and
// parameter updates between passes mutate state. A forward/backward pass is
// single-threaded per graph; independent graphs may live on separate threads.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sed {

using Shape = std::vector<int>;

// Label value excluded from losses and metrics.
inline constexpr uint16_t kIgnoreLabel = 65535;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- grad mode --------------------------------------------------------------

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording in scope (inference / benchmarking).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- deterministic RNG -------------------------------------------------------

// SplitMix64: all seeding (weight init, synthetic data, crops) goes through
// this so runs are reproducible across platforms.
struct SplitMix64 {
    uint64_t state;
    explicit SplitMix64(uint64_t seed) : state(seed) {}
    uint64_t next() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }
    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    uint64_t below(uint64_t n) { return n ? next() % n : 0; }
};

inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    SplitMix64 rng(seed ^ (0xA24BAED4963EE407ULL + stream * 0x9E3779B97F4A7C15ULL));
    return rng.next();
}

// --- autograd node ------------------------------------------------------------

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> values;
    std::vector<T> grad;  // empty until backward touches it
    bool requires_grad = false;
    bool in_graph = false;  // reachable target of a backward pass
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // null for leaves

    int64_t numel() const { return shape_numel(shape); }
};

template <typename T>
std::vector<T>& ensure_grad(Node<T>& n) {
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.numel()), T(0));
    return n.grad;
}

}  // namespace detail

template <typename T>
class Tensor {
public:
    using Node = detail::Node<T>;
    using NodePtr = std::shared_ptr<Node>;

    Tensor() = default;

    Tensor(Shape shape, T fill = T(0), bool requires_grad = false) {
        node_ = std::make_shared<Node>();
        node_->values = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape)), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
        node_->in_graph = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw ShapeError("tensor: data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        node_ = std::make_shared<Node>();
        node_->shape = std::move(shape);
        node_->values = std::make_shared<std::vector<T>>(std::move(data));
        node_->requires_grad = requires_grad;
        node_->in_graph = requires_grad;
    }

    static Tensor from_node(NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return node_ ? node_->numel() : 0; }

    const std::vector<T>& values() const { return *node_->values; }
    // Optimizer-only escape hatch: parameters are rewritten between passes,
    // never while a recorded graph is alive.
    std::vector<T>& mutable_values() { return *node_->values; }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool in_graph() const { return node_ && node_->in_graph; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }

    const std::vector<T>& grad() const {
        if (!has_grad())
            throw std::logic_error("tensor has no gradient (not reached by backward)");
        return node_->grad;
    }

    void zero_grad() {
        if (node_) node_->grad.clear();
    }

    // Shares values, drops out of the autograd graph.
    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = node_->shape;
        n->values = node_->values;
        return from_node(std::move(n));
    }

    void backward() const {
        if (!node_) throw std::invalid_argument("backward: undefined tensor");
        if (node_->numel() != 1)
            throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                        shape_str(node_->shape));
        // Reverse post-order DFS over in-graph parents = topological order:
        // every consumer runs before the node it feeds.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        struct Frame {
            Node* n;
            size_t next;
        };
        std::vector<Frame> stack;
        if (node_->in_graph) {
            stack.push_back({node_.get(), 0});
            seen.insert(node_.get());
        }
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next < f.n->parents.size()) {
                Node* p = f.n->parents[f.next++].get();
                if (p->in_graph && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
        detail::ensure_grad(*node_);
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward) (*it)->backward(**it);
        }
    }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// --- op plumbing ---------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> values,
                  std::vector<typename Tensor<T>::NodePtr> parents,
                  std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
        throw ShapeError("op result size mismatch for shape " + shape_str(shape));
    n->shape = std::move(shape);
    n->values = std::make_shared<std::vector<T>>(std::move(values));
    if (grad_enabled()) {
        bool track = false;
        for (const auto& p : parents)
            if (p && p->in_graph) track = true;
        if (track) {
            n->in_graph = true;
            n->parents = std::move(parents);
            n->backward = std::move(backward);
        }
    }
    return Tensor<T>::from_node(std::move(n));
}

template <typename T>
void accumulate(Node<T>& dst, const std::vector<T>& g) {
    auto& buf = ensure_grad(dst);
    for (size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

// --- elementwise / structural ops ----------------------------------------------

template <typename T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
            for (int k = 0; k < 2; ++k)
                if (self.parents[k]->in_graph) detail::accumulate(*self.parents[k], self.grad);
        });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("sub", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
            if (self.parents[0]->in_graph) detail::accumulate(*self.parents[0], self.grad);
            if (self.parents[1]->in_graph) {
                auto& gb = detail::ensure_grad(*self.parents[1]);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
            }
        });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return detail::make_op<T>(
        a.shape(), std::move(out), {a.node(), b.node()}, [](detail::Node<T>& self) {
            const auto& av = *self.parents[0]->values;
            const auto& bv = *self.parents[1]->values;
            if (self.parents[0]->in_graph) {
                auto& ga = detail::ensure_grad(*self.parents[0]);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bv[i];
            }
            if (self.parents[1]->in_graph) {
                auto& gb = detail::ensure_grad(*self.parents[1]);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * av[i];
            }
        });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    const auto& av = a.values();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    return detail::make_op<T>(a.shape(), std::move(out), {a.node()},
                              [s](detail::Node<T>& self) {
                                  auto& ga = detail::ensure_grad(*self.parents[0]);
                                  for (size_t i = 0; i < ga.size(); ++i)
                                      ga[i] += self.grad[i] * s;
                              });
}

// Scalar result, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T v : a.values()) acc += v;
    return detail::make_op<T>(Shape{1}, std::vector<T>{acc}, {a.node()},
                              [](detail::Node<T>& self) {
                                  auto& ga = detail::ensure_grad(*self.parents[0]);
                                  const T g = self.grad[0];
                                  for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
                              });
}

// View with a new shape; shares the value buffer.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->values = a.node()->values;
    if (grad_enabled() && a.node()->in_graph) {
        n->in_graph = true;
        n->parents = {a.node()};
        n->backward = [](detail::Node<T>& self) {
            detail::accumulate(*self.parents[0], self.grad);
        };
    }
    return Tensor<T>::from_node(std::move(n));
}

// Concatenate along the last axis; all leading extents must agree.
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Shape lead = parts[0].shape();
    lead.pop_back();
    int total = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        Shape l = p.shape();
        int w = l.back();
        l.pop_back();
        if (l != lead)
            throw ShapeError("concat_last: leading extents differ, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        widths.push_back(w);
        total += w;
    }
    const int64_t rows = shape_numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(total);
    std::vector<T> out(static_cast<size_t>(rows * total));
    {
        int off = 0;
        for (size_t k = 0; k < parts.size(); ++k) {
            const auto& pv = parts[k].values();
            const int w = widths[k];
            for (int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c)
                    out[static_cast<size_t>(r * total + off + c)] =
                        pv[static_cast<size_t>(r * w + c)];
            off += w;
        }
    }
    std::vector<typename Tensor<T>::NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_op<T>(
        out_shape, std::move(out), std::move(nodes),
        [widths, rows, total](detail::Node<T>& self) {
            int off = 0;
            for (size_t k = 0; k < self.parents.size(); ++k) {
                const int w = widths[k];
                if (self.parents[k]->in_graph) {
                    auto& gp = detail::ensure_grad(*self.parents[k]);
                    for (int64_t r = 0; r < rows; ++r)
                        for (int c = 0; c < w; ++c)
                            gp[static_cast<size_t>(r * w + c)] +=
                                self.grad[static_cast<size_t>(r * total + off + c)];
                }
                off += w;
            }
        });
}

namespace detail {
template <typename T>
void axis_split(const Tensor<T>& a, int axis, int64_t& outer, int& extent, int64_t& inner) {
    const Shape& s = a.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(s));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    extent = s[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

// Gather slices along one axis: out[o, j, i] = a[o, idx[j], i].
template <typename T>
Tensor<T> take_axis(const Tensor<T>& a, int axis, const std::vector<int>& idx) {
    int64_t outer, inner;
    int extent;
    detail::axis_split(a, axis, outer, extent, inner);
    for (int j : idx)
        if (j < 0 || j >= extent)
            throw std::invalid_argument("take_axis: index " + std::to_string(j) +
                                        " out of range [0," + std::to_string(extent) + ")");
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = static_cast<int>(idx.size());
    const auto& av = a.values();
    std::vector<T> out(static_cast<size_t>(outer * static_cast<int64_t>(idx.size()) * inner));
    for (int64_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < idx.size(); ++j) {
            const T* src = av.data() + (o * extent + idx[j]) * inner;
            T* dst = out.data() + (o * static_cast<int64_t>(idx.size()) + static_cast<int64_t>(j)) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] = src[i];
        }
    return detail::make_op<T>(
        out_shape, std::move(out), {a.node()},
        [idx, outer, extent, inner](detail::Node<T>& self) {
            auto& ga = detail::ensure_grad(*self.parents[0]);
            for (int64_t o = 0; o < outer; ++o)
                for (size_t j = 0; j < idx.size(); ++j) {
                    const T* g = self.grad.data() +
                                 (o * static_cast<int64_t>(idx.size()) + static_cast<int64_t>(j)) * inner;
                    T* dst = ga.data() + (o * extent + idx[j]) * inner;
                    for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                }
        });
}

// Insert a new axis of the given extent at `axis`, broadcasting the input:
// out[o, r, i] = a[o, i] for every r.
template <typename T>
Tensor<T> repeat_new_axis(const Tensor<T>& a, int axis, int times) {
    if (times <= 0) throw std::invalid_argument("repeat_new_axis: times must be positive");
    const Shape& s = a.shape();
    if (axis < 0 || axis > static_cast<int>(s.size()))
        throw std::invalid_argument("repeat_new_axis: bad axis " + std::to_string(axis));
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis); i < s.size(); ++i) inner *= s[i];
    Shape out_shape = s;
    out_shape.insert(out_shape.begin() + axis, times);
    const auto& av = a.values();
    std::vector<T> out(static_cast<size_t>(outer * times * inner));
    for (int64_t o = 0; o < outer; ++o)
        for (int r = 0; r < times; ++r)
            for (int64_t i = 0; i < inner; ++i)
                out[static_cast<size_t>((o * times + r) * inner + i)] =
                    av[static_cast<size_t>(o * inner + i)];
    return detail::make_op<T>(
        out_shape, std::move(out), {a.node()},
        [outer, times, inner](detail::Node<T>& self) {
            auto& ga = detail::ensure_grad(*self.parents[0]);
            for (int64_t o = 0; o < outer; ++o)
                for (int r = 0; r < times; ++r)
                    for (int64_t i = 0; i < inner; ++i)
                        ga[static_cast<size_t>(o * inner + i)] +=
                            self.grad[static_cast<size_t>((o * times + r) * inner + i)];
        });
}

// Sum over one axis (the axis is dropped).
template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, int axis) {
    int64_t outer, inner;
    int extent;
    detail::axis_split(a, axis, outer, extent, inner);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    const auto& av = a.values();
    std::vector<T> out(static_cast<size_t>(outer * inner), T(0));
    for (int64_t o = 0; o < outer; ++o)
        for (int e = 0; e < extent; ++e)
            for (int64_t i = 0; i < inner; ++i)
                out[static_cast<size_t>(o * inner + i)] +=
                    av[static_cast<size_t>((o * extent + e) * inner + i)];
    return detail::make_op<T>(
        out_shape, std::move(out), {a.node()},
        [outer, extent, inner](detail::Node<T>& self) {
            auto& ga = detail::ensure_grad(*self.parents[0]);
            for (int64_t o = 0; o < outer; ++o)
                for (int e = 0; e < extent; ++e)
                    for (int64_t i = 0; i < inner; ++i)
                        ga[static_cast<size_t>((o * extent + e) * inner + i)] +=
                            self.grad[static_cast<size_t>(o * inner + i)];
        });
}

// Uniform init in +-sqrt(1/fan_in), deterministic per seed.
template <typename T>
Tensor<T> uniform_init(Shape shape, int fan_in, SplitMix64& rng, bool requires_grad = true) {
    const double a = std::sqrt(1.0 / static_cast<double>(fan_in < 1 ? 1 : fan_in));
    std::vector<T> data(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : data) v = static_cast<T>(rng.uniform(-a, a));
    return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

}  // namespace sed
