#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "kanfuse/common.hpp"
#include "kanfuse/rng.hpp"

namespace kf {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

// Thread-local autodiff recording switch. Evaluation loops disable it.
struct GradMode {
    static bool& flag() {
        thread_local bool f = true;
        return f;
    }
    static bool enabled() { return flag(); }
};

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(GradMode::flag()) { GradMode::flag() = false; }
    ~NoGradGuard() { GradMode::flag() = prev; }
};

template <class T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty until touched by backward
    bool requires_grad = false;
    bool leaf = true;
    bool consumed = false; // graph already released by backward
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::function<void(TensorImpl<T>&)> backward_fn;
};

// Value-semantic handle onto a shared TensorImpl. Copies alias the same
// storage; clone() makes an independent leaf.
template <class T>
class Tensor {
public:
    using value_type = T;
    std::shared_ptr<TensorImpl<T>> impl;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : impl(std::make_shared<TensorImpl<T>>()) {
        int64_t n = numel_of(shape);
        if (n < 0) throw ShapeError(cat("tensor: negative dim in shape ", shape_str(shape)));
        impl->shape = std::move(shape);
        impl->data.assign(static_cast<size_t>(n), fill);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }

    static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(T v) { return Tensor(Shape{}, v); }

    static Tensor from_data(Shape shape, std::vector<T> values) {
        Tensor t;
        t.impl = std::make_shared<TensorImpl<T>>();
        if (numel_of(shape) != static_cast<int64_t>(values.size()))
            throw ShapeError(cat("tensor: shape ", shape_str(shape), " does not match ",
                                 values.size(), " values"));
        t.impl->shape = std::move(shape);
        t.impl->data = std::move(values);
        return t;
    }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1), T mean = T(0)) {
        Tensor t(std::move(shape));
        for (auto& v : t.impl->data) v = static_cast<T>(rng.normal(mean, stddev));
        return t;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.impl->data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return impl != nullptr; }

    const Shape& shape() const { return impl->shape; }

    int64_t rank() const { return static_cast<int64_t>(impl->shape.size()); }

    int64_t dim(int64_t i) const { return impl->shape[static_cast<size_t>(i)]; }

    int64_t numel() const { return static_cast<int64_t>(impl->data.size()); }

    T* data() { return impl->data.data(); }
    const T* data() const { return impl->data.data(); }
    std::vector<T>& vec() { return impl->data; }
    const std::vector<T>& vec() const { return impl->data; }

    T item() const {
        if (numel() != 1) throw ShapeError(cat("item: tensor has ", numel(), " elements"));
        return impl->data[0];
    }

    bool requires_grad() const { return impl && impl->requires_grad; }

    Tensor& requires_grad_(bool b = true) {
        if (!impl->leaf && b) throw ValueError("requires_grad_: only leaf tensors may be toggled");
        impl->requires_grad = b;
        return *this;
    }

    bool is_leaf() const { return impl->leaf; }

    // Gradient buffer; allocated zero-filled on first access.
    std::vector<T>& grad_buf() {
        if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
        return impl->grad;
    }

    const std::vector<T>* grad() const { return impl->grad.empty() ? nullptr : &impl->grad; }

    void zero_grad() {
        impl->grad.clear();
        impl->grad.shrink_to_fit();
    }

    double grad_norm() const {
        if (impl->grad.empty()) return 0.0;
        double s = 0;
        for (T g : impl->grad) s += static_cast<double>(g) * static_cast<double>(g);
        return std::sqrt(s);
    }

    // Deep copy detached from any graph.
    Tensor clone() const {
        Tensor t;
        t.impl = std::make_shared<TensorImpl<T>>();
        t.impl->shape = impl->shape;
        t.impl->data = impl->data;
        return t;
    }
};

namespace autodiff {

template <class T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
    if (!GradMode::enabled()) return false;
    for (const Tensor<T>* t : inputs)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <class T, class Fn>
void record(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents, Fn&& fn) {
    out.impl->requires_grad = true;
    out.impl->leaf = false;
    out.impl->parents = std::move(parents);
    out.impl->backward_fn = std::forward<Fn>(fn);
}

template <class T>
std::vector<T>& grad_of(const std::shared_ptr<TensorImpl<T>>& node) {
    if (node->grad.empty()) node->grad.assign(node->data.size(), T(0));
    return node->grad;
}

} // namespace autodiff

// Reverse-mode sweep from a scalar loss. The graph is released afterwards
// unless retain_graph is set; leaf gradients accumulate across calls.
template <class T>
void backward(Tensor<T>& loss, bool retain_graph = false) {
    if (!loss.defined()) throw ValueError("backward: undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError(cat("backward: loss must be scalar, got ", shape_str(loss.shape())));
    if (loss.impl->consumed)
        throw ValueError("backward: graph already consumed; pass retain_graph to keep it");
    if (!loss.impl->requires_grad)
        throw ValueError("backward: loss does not require gradients");

    // iterative post-order DFS so deep graphs cannot overflow the stack
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    {
        std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
        stack.emplace_back(loss.impl.get(), 0);
        seen.insert(loss.impl.get());
        while (!stack.empty()) {
            auto& [node, idx] = stack.back();
            if (idx < node->parents.size()) {
                TensorImpl<T>* p = node->parents[idx++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    // fresh start for interior nodes so a retained graph can be re-run;
    // leaves keep accumulating across calls
    for (TensorImpl<T>* node : order)
        if (!node->leaf && !node->grad.empty()) std::fill(node->grad.begin(), node->grad.end(), T(0));

    autodiff::grad_of(loss.impl)[0] += T(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward_fn) node->backward_fn(*node);
    }

    if (!retain_graph) {
        for (TensorImpl<T>* node : order) {
            if (!node->leaf) {
                node->consumed = true;
                node->backward_fn = nullptr;
                node->parents.clear();
                node->grad.clear();
                node->grad.shrink_to_fit();
            }
        }
    }
}

} // namespace kf
