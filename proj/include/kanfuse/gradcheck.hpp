#pragma once

#include <functional>

#include "kanfuse/tensor.hpp"

namespace kf {

// Central finite differences against the recorded gradients, in double.
//
// loss_fn rebuilds the forward pass from the current parameter values and
// returns the scalar loss; it is re-evaluated twice per probed coordinate.
// Error is norm-based over the probed coordinates per parameter tensor:
//   ||analytic - numeric|| / max(||analytic|| + ||numeric||, tiny)
// The max over all parameters is returned. sample_per_param = 0 probes every
// coordinate; otherwise up to that many (deterministically chosen).

struct GradCheckOptions {
    double step = 1e-5;
    int64_t sample_per_param = 0;
    uint64_t sample_seed = 1234;
};

inline double check_gradients(const std::function<Tensor<double>()>& loss_fn,
                              const std::vector<Tensor<double>>& params,
                              const GradCheckOptions& opt = {}) {
    for (const auto& p : params)
        if (!p.requires_grad()) throw ValueError("gradcheck: parameter does not require grad");

    for (auto p : params) p.zero_grad();
    Tensor<double> loss = loss_fn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) {
        const std::vector<double>* g = p.grad();
        analytic.push_back(g ? *g : std::vector<double>(static_cast<size_t>(p.numel()), 0.0));
    }

    double worst = 0.0;
    NoGradGuard ng;
    Rng rng(opt.sample_seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<double> p = params[pi];
        int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (opt.sample_per_param <= 0 || opt.sample_per_param >= n) {
            coords.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int64_t i = 0; i < opt.sample_per_param; ++i)
                coords.push_back(rng.uniform_int(n));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        double na = 0.0, nn = 0.0, nd = 0.0;
        for (int64_t idx : coords) {
            double saved = p.data()[idx];
            p.data()[idx] = saved + opt.step;
            double up = loss_fn().item();
            p.data()[idx] = saved - opt.step;
            double dn = loss_fn().item();
            p.data()[idx] = saved;
            double num = (up - dn) / (2.0 * opt.step);
            double ana = analytic[pi][static_cast<size_t>(idx)];
            na += ana * ana;
            nn += num * num;
            nd += (ana - num) * (ana - num);
        }
        // unit floor: relative when gradients are O(1) or larger, absolute
        // below that (FD cannot resolve relative error of near-zero grads)
        double denom = std::max(std::sqrt(na) + std::sqrt(nn), 1.0);
        worst = std::max(worst, std::sqrt(nd) / denom);
    }
    return worst;
}

} // namespace kf
