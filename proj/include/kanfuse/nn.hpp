#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kanfuse/ops.hpp"

namespace kf {

// Named references to learnable tensors and to non-learnable buffers
// (batchnorm running stats). Used by the optimizer, stage freezing masks,
// and checkpoint IO.
template <class T>
struct ParamMap {
    std::vector<std::pair<std::string, Tensor<T>>> params;
    std::vector<std::pair<std::string, std::vector<T>*>> buffers;

    void add(const std::string& name, const Tensor<T>& t) { params.emplace_back(name, t); }
    void add_buffer(const std::string& name, std::vector<T>* buf) {
        buffers.emplace_back(name, buf);
    }

    Tensor<T> find(const std::string& name) const {
        for (const auto& [n, t] : params)
            if (n == name) return t;
        throw ValueError(cat("param not found: ", name));
    }
};

enum class Activation { none, relu, silu };

template <class T>
struct Linear {
    int64_t n_in = 0, n_out = 0;
    Tensor<T> weight; // (n_out, n_in)
    Tensor<T> bias;   // (n_out), undefined when bias-free
    Activation act = Activation::none;

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng, bool with_bias = true,
           Activation activation = Activation::none)
        : n_in(in), n_out(out), act(activation) {
        T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
        weight = Tensor<T>::uniform({out, in}, rng, -bound, bound);
        weight.requires_grad_();
        if (with_bias) {
            bias = Tensor<T>::uniform({out}, rng, -bound, bound);
            bias.requires_grad_();
        }
    }

    // x: (N, n_in) -> (N, n_out)
    Tensor<T> forward(const Tensor<T>& x) const {
        Tensor<T> y = matmul(x, transpose2d(weight));
        if (bias.defined()) y = add_rowvec(y, bias);
        switch (act) {
            case Activation::relu: return relu(y);
            case Activation::silu: return silu(y);
            default: return y;
        }
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m.add(prefix + ".weight", weight);
        if (bias.defined()) m.add(prefix + ".bias", bias);
    }

    int64_t param_count() const { return n_in * n_out + (bias.defined() ? n_out : 0); }
};

template <class T>
struct Conv2dLayer {
    int64_t c_in = 0, c_out = 0, k = 1, stride = 1, pad = 0;
    Tensor<T> weight; // (c_out, c_in, k, k)
    Tensor<T> bias;

    Conv2dLayer() = default;
    Conv2dLayer(int64_t ci, int64_t co, int64_t kernel, int64_t stride_, int64_t pad_, Rng& rng,
                bool with_bias = true)
        : c_in(ci), c_out(co), k(kernel), stride(stride_), pad(pad_) {
        T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ci * kernel * kernel)));
        weight = Tensor<T>::uniform({co, ci, kernel, kernel}, rng, -bound, bound);
        weight.requires_grad_();
        if (with_bias) {
            bias = Tensor<T>::uniform({co}, rng, -bound, bound);
            bias.requires_grad_();
        }
    }

    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m.add(prefix + ".weight", weight);
        if (bias.defined()) m.add(prefix + ".bias", bias);
    }

    int64_t param_count() const {
        return c_out * c_in * k * k + (bias.defined() ? c_out : 0);
    }
};

// Batch normalization over rows of an (N, C) matrix, or per channel over the
// spatial positions of a (C, H, W) map. The spatial form is the batch-size-1
// convention: statistics come from H*W positions of the single sample.
template <class T>
struct BatchNorm {
    int64_t channels = 0;
    T eps = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.1);
    Tensor<T> gamma, beta;
    std::vector<T> running_mean, running_var;

    BatchNorm() = default;
    explicit BatchNorm(int64_t c) : channels(c) {
        gamma = Tensor<T>::full({c}, T(1));
        gamma.requires_grad_();
        beta = Tensor<T>::zeros({c});
        beta.requires_grad_();
        running_mean.assign(static_cast<size_t>(c), T(0));
        running_var.assign(static_cast<size_t>(c), T(1));
    }

    // training: batch statistics (optionally folded into the running
    // buffers); eval: running statistics. Gradcheck runs training mode with
    // update_running=false so the forward stays a pure function.
    Tensor<T> forward_rows(const Tensor<T>& x, bool training, bool update_running = true) {
        if (!training)
            return batchnorm_rows(x, gamma, beta, eps, &running_mean, &running_var);
        std::vector<T> bm, bv;
        Tensor<T> y = batchnorm_rows<T>(x, gamma, beta, eps, nullptr, nullptr, &bm, &bv);
        if (update_running) {
            for (int64_t j = 0; j < channels; ++j) {
                running_mean[static_cast<size_t>(j)] =
                    (T(1) - momentum) * running_mean[static_cast<size_t>(j)] +
                    momentum * bm[static_cast<size_t>(j)];
                running_var[static_cast<size_t>(j)] =
                    (T(1) - momentum) * running_var[static_cast<size_t>(j)] +
                    momentum * bv[static_cast<size_t>(j)];
            }
        }
        return y;
    }

    // (C,H,W): view as (H*W, C) rows via explicit transposition ops
    Tensor<T> forward_chw(const Tensor<T>& x, bool training, bool update_running = true) {
        if (x.rank() != 3 || x.dim(0) != channels)
            throw ShapeError(cat("batchnorm: expected (", channels, ",h,w), got ",
                                 shape_str(x.shape())));
        int64_t h = x.dim(1), w = x.dim(2);
        Tensor<T> rows = transpose2d(reshape(x, {channels, h * w}));
        Tensor<T> y = forward_rows(rows, training, update_running);
        return reshape(transpose2d(y), {channels, h, w});
    }

    void params(ParamMap<T>& m, const std::string& prefix) {
        m.add(prefix + ".gamma", gamma);
        m.add(prefix + ".beta", beta);
        m.add_buffer(prefix + ".running_mean", &running_mean);
        m.add_buffer(prefix + ".running_var", &running_var);
    }
};

} // namespace kf
