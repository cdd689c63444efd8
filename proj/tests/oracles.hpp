#pragma once

// Independent brute-force oracles used by the unit and acceptance suites.
// These deliberately avoid the library's evaluation paths: textbook
// recursion for B-splines, scalar loops for layers, attention, NMS and AP.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "kanfuse/kan.hpp"

namespace oracle {

// Cox-de Boor by direct recursion over the full knot vector. Half-open
// cells; x equal to the domain upper bound counts into the last cell.
inline double bspline_recursive(const std::vector<double>& t, int i, int k, double x,
                                double domain_upper) {
    if (k == 0) {
        // x at the domain's upper bound belongs to the last interior cell
        // (closed on the right), matching the evaluated left-limit
        if (x == domain_upper)
            return (t[static_cast<size_t>(i)] < x && x <= t[static_cast<size_t>(i + 1)]) ? 1.0
                                                                                         : 0.0;
        return (t[static_cast<size_t>(i)] <= x && x < t[static_cast<size_t>(i + 1)]) ? 1.0 : 0.0;
    }
    double a = 0.0, b = 0.0;
    double d1 = t[static_cast<size_t>(i + k)] - t[static_cast<size_t>(i)];
    double d2 = t[static_cast<size_t>(i + k + 1)] - t[static_cast<size_t>(i + 1)];
    if (d1 > 0.0)
        a = (x - t[static_cast<size_t>(i)]) / d1 * bspline_recursive(t, i, k - 1, x, domain_upper);
    if (d2 > 0.0)
        b = (t[static_cast<size_t>(i + k + 1)] - x) / d2 *
            bspline_recursive(t, i + 1, k - 1, x, domain_upper);
    return a + b;
}

inline std::vector<double> bspline_basis_naive(const kf::SplineGrid& g, double x) {
    double xc = std::min(g.upper, std::max(g.lower, x));
    std::vector<double> out(static_cast<size_t>(g.basis_count()));
    for (int i = 0; i < g.basis_count(); ++i)
        out[static_cast<size_t>(i)] = bspline_recursive(g.knots, i, g.order, xc, g.upper);
    return out;
}

// phi(x) by dense per-basis summation on top of the recursive basis
template <class T>
double eval_phi_naive(double x, const kf::KanActivation<T>& act) {
    double silu = x / (1.0 + std::exp(-x));
    auto basis = bspline_basis_naive(*act.grid, x);
    double spline = 0.0;
    for (size_t i = 0; i < basis.size(); ++i)
        spline += static_cast<double>(act.coeffs[i]) * basis[i];
    return static_cast<double>(act.w_b) * silu + static_cast<double>(act.w_s) * spline;
}

// double loop over (q, p) per batch row
template <class T>
std::vector<double> kan_layer_naive(const kf::KanLayer<T>& layer,
                                    const std::vector<double>& x, int64_t batch) {
    std::vector<double> out(static_cast<size_t>(batch * layer.n_out), 0.0);
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t q = 0; q < layer.n_out; ++q) {
            double acc = 0.0;
            for (int64_t p = 0; p < layer.n_in; ++p) {
                auto act = layer.activation(q, p);
                acc += eval_phi_naive(x[static_cast<size_t>(b * layer.n_in + p)], act);
            }
            out[static_cast<size_t>(b * layer.n_out + q)] = acc;
        }
    return out;
}

// quadruple loop over (l, m, n) and spatial positions, after zero-padding
template <class T>
std::vector<double> kan_conv_naive(const kf::KanConv2d<T>& conv, const std::vector<double>& x,
                                   int64_t h, int64_t w) {
    int64_t p = conv.pad;
    int64_t hp = h + 2 * p, wp = w + 2 * p;
    std::vector<double> xp(static_cast<size_t>(conv.c_in * hp * wp), 0.0);
    for (int64_t l = 0; l < conv.c_in; ++l)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx)
                xp[static_cast<size_t>((l * hp + y + p) * wp + xx + p)] =
                    x[static_cast<size_t>((l * h + y) * w + xx)];
    int64_t ho = hp - conv.k + 1, wo = wp - conv.k + 1;
    std::vector<double> out(static_cast<size_t>(conv.c_out * ho * wo), 0.0);
    for (int64_t oc = 0; oc < conv.c_out; ++oc)
        for (int64_t i = 0; i < ho; ++i)
            for (int64_t j = 0; j < wo; ++j) {
                double acc = 0.0;
                for (int64_t l = 0; l < conv.c_in; ++l)
                    for (int64_t m = 0; m < conv.k; ++m)
                        for (int64_t n = 0; n < conv.k; ++n) {
                            auto act = conv.activation(oc, l, m, n);
                            acc += eval_phi_naive(
                                xp[static_cast<size_t>((l * hp + i + m) * wp + j + n)], act);
                        }
                out[static_cast<size_t>((oc * ho + i) * wo + j)] = acc;
            }
    return out;
}

// scalar attention: one head, loops over every query/key pair
inline std::vector<double> attention_head_naive(const std::vector<double>& q,
                                                const std::vector<double>& k,
                                                const std::vector<double>& v, int64_t s,
                                                int64_t dk) {
    std::vector<double> out(static_cast<size_t>(s * dk), 0.0);
    double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int64_t i = 0; i < s; ++i) {
        std::vector<double> w(static_cast<size_t>(s));
        double mx = -1e300;
        for (int64_t j = 0; j < s; ++j) {
            double dot = 0.0;
            for (int64_t d = 0; d < dk; ++d)
                dot += q[static_cast<size_t>(i * dk + d)] * k[static_cast<size_t>(j * dk + d)];
            w[static_cast<size_t>(j)] = dot * scale;
            mx = std::max(mx, w[static_cast<size_t>(j)]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < s; ++j) {
            w[static_cast<size_t>(j)] = std::exp(w[static_cast<size_t>(j)] - mx);
            sum += w[static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < s; ++j)
            for (int64_t d = 0; d < dk; ++d)
                out[static_cast<size_t>(i * dk + d)] +=
                    w[static_cast<size_t>(j)] / sum * v[static_cast<size_t>(j * dk + d)];
    }
    return out;
}

// exhaustive pairwise NMS: keep a box iff no higher-scored kept box overlaps
// it above the threshold
template <class Box, class IouFn>
std::vector<int> nms_naive(const std::vector<Box>& boxes, double thresh, IouFn iou) {
    std::vector<int> idx(boxes.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return boxes[static_cast<size_t>(a)].score > boxes[static_cast<size_t>(b)].score;
    });
    std::vector<int> kept;
    for (int i : idx) {
        bool ok = true;
        for (int jj : kept)
            if (iou(boxes[static_cast<size_t>(i)], boxes[static_cast<size_t>(jj)]) > thresh)
                ok = false;
        if (ok) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

// exact 40-point interpolated AP from explicit (score, is_tp) pairs;
// ignored predictions are dropped before calling
inline std::optional<double> ap40_naive(std::vector<std::pair<double, bool>> preds, int n_gt) {
    if (n_gt <= 0) return std::nullopt;
    std::stable_sort(preds.begin(), preds.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision, recall;
    int tp = 0, fp = 0;
    for (const auto& [score, is_tp] : preds) {
        (void)score;
        if (is_tp)
            ++tp;
        else
            ++fp;
        precision.push_back(static_cast<double>(tp) / (tp + fp));
        recall.push_back(static_cast<double>(tp) / n_gt);
    }
    double ap = 0.0;
    for (int i = 1; i <= 40; ++i) {
        double r = static_cast<double>(i) / 40.0;
        double best = 0.0;
        for (size_t j = 0; j < recall.size(); ++j)
            if (recall[j] >= r) best = std::max(best, precision[j]);
        ap += best / 40.0;
    }
    return ap;
}

} // namespace oracle
