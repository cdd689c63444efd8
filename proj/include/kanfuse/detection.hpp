#pragma once

#include "kanfuse/bev.hpp"
#include "kanfuse/geometry.hpp"
#include "kanfuse/nn.hpp"

namespace kf {

constexpr int kNumClasses = 3; // car, truck, pedestrian

// Regression map channel layout (8, H, W):
//   0 dx  1 dy  (sub-cell center offset in [0,1))
//   2 z
//   3 log w  4 log l  5 log h
//   6 sin yaw  7 cos yaw
constexpr int64_t kRegChannels = 8;

template <class T>
struct HeadOutput {
    Tensor<T> heat_logits; // (C, H, W), pre-sigmoid
    Tensor<T> reg;         // (8, H, W)
};

// Plain two-branch conv head on the fused map. Deliberately conv-only: the
// KAN swaps live in the encoders and fuser, so the head stays fixed across
// every ablation row.
template <class T>
struct DetectionHead {
    int64_t c_in = 64, c_mid = 32;
    Conv2dLayer<T> heat1, heat2, reg1, reg2;

    DetectionHead() = default;
    DetectionHead(int64_t ci, int64_t cm, Rng& rng)
        : c_in(ci), c_mid(cm), heat1(ci, cm, 3, 1, 1, rng), heat2(cm, kNumClasses, 1, 1, 0, rng),
          reg1(ci, cm, 3, 1, 1, rng), reg2(cm, kRegChannels, 1, 1, 0, rng) {
        // start the heatmap at a low-probability prior
        for (int64_t i = 0; i < kNumClasses; ++i) heat2.bias.data()[i] = static_cast<T>(-2.19);
    }

    HeadOutput<T> forward(const BevFeature<T>& fused) const {
        if (fused.channels() != c_in)
            throw ShapeError(cat("head: fused channels ", fused.channels(), " != ", c_in));
        HeadOutput<T> out;
        out.heat_logits = heat2.forward(relu(heat1.forward(fused.data)));
        out.reg = reg2.forward(relu(reg1.forward(fused.data)));
        return out;
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        heat1.params(m, prefix + ".heat1");
        heat2.params(m, prefix + ".heat2");
        reg1.params(m, prefix + ".reg1");
        reg2.params(m, prefix + ".reg2");
    }
};

// CornerNet gaussian radius: largest radius keeping IoU >= min_overlap for a
// box of (h, w) cells
inline double gaussian_radius(double h, double w, double min_overlap) {
    double a1 = 1, b1 = h + w, c1 = w * h * (1 - min_overlap) / (1 + min_overlap);
    double r1 = (b1 - std::sqrt(std::max(0.0, b1 * b1 - 4 * a1 * c1))) / 2;
    double a2 = 4, b2 = 2 * (h + w), c2 = (1 - min_overlap) * w * h;
    double r2 = (b2 - std::sqrt(std::max(0.0, b2 * b2 - 4 * a2 * c2))) / 2;
    double a3 = 4 * min_overlap, b3 = -2 * min_overlap * (h + w);
    double c3 = (min_overlap - 1) * w * h;
    double r3 = (b3 + std::sqrt(std::max(0.0, b3 * b3 - 4 * a3 * c3))) / (2 * a3);
    return std::min({r1, r2, r3});
}

// Ground-truth maps for the loss: gaussian-splat heatmap targets, exact
// regression targets and a center-cell mask.
template <class T>
struct DetectionTargets {
    Tensor<T> heat;     // (C, H, W), peaks exactly 1 at centers
    Tensor<T> pos_mask; // (C, H, W), 1 where heat == 1
    Tensor<T> neg_w;    // (C, H, W), (1 - heat)^4, 0 at positives
    Tensor<T> reg;      // (8, H, W)
    Tensor<T> reg_mask; // (8, H, W), 1 on every channel of a center cell
    int64_t n_pos = 0;
};

template <class T>
DetectionTargets<T> encode_targets(const std::vector<Box3D>& boxes, const BevGridConfig& bev) {
    bev.validate();
    int64_t h = bev.height(), w = bev.width();
    DetectionTargets<T> t;
    t.heat = Tensor<T>::zeros({kNumClasses, h, w});
    t.pos_mask = Tensor<T>::zeros({kNumClasses, h, w});
    t.neg_w = Tensor<T>::zeros({kNumClasses, h, w});
    t.reg = Tensor<T>::zeros({kRegChannels, h, w});
    t.reg_mask = Tensor<T>::zeros({kRegChannels, h, w});

    for (const Box3D& b : boxes) {
        if (b.cls < 0 || b.cls >= kNumClasses)
            throw ValueError(cat("encode_targets: unknown class ", b.cls));
        double cxf = (b.x - bev.x_min) / bev.cell;
        double cyf = (b.y - bev.y_min) / bev.cell;
        int64_t ix = static_cast<int64_t>(std::floor(cxf));
        int64_t iy = static_cast<int64_t>(std::floor(cyf));
        if (ix < 0 || ix >= w || iy < 0 || iy >= h)
            throw ValueError(cat("encode_targets: box center (", b.x, ",", b.y,
                                 ") outside the BEV extent"));
        double r = gaussian_radius(b.l / bev.cell, b.w / bev.cell, 0.1);
        int64_t rad = std::max<int64_t>(1, static_cast<int64_t>(r));
        double sigma = (2.0 * rad + 1.0) / 6.0;
        for (int64_t dy = -rad; dy <= rad; ++dy)
            for (int64_t dx = -rad; dx <= rad; ++dx) {
                int64_t yy = iy + dy, xx = ix + dx;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                double g = std::exp(-(static_cast<double>(dx * dx + dy * dy)) /
                                    (2.0 * sigma * sigma));
                T& cell = t.heat.data()[(b.cls * h + yy) * w + xx];
                cell = std::max(cell, static_cast<T>(g));
            }
        t.heat.data()[(b.cls * h + iy) * w + ix] = T(1);
        t.pos_mask.data()[(b.cls * h + iy) * w + ix] = T(1);

        t.reg.data()[(0 * h + iy) * w + ix] = static_cast<T>(cxf - ix);
        t.reg.data()[(1 * h + iy) * w + ix] = static_cast<T>(cyf - iy);
        t.reg.data()[(2 * h + iy) * w + ix] = static_cast<T>(b.z);
        t.reg.data()[(3 * h + iy) * w + ix] = static_cast<T>(std::log(b.w));
        t.reg.data()[(4 * h + iy) * w + ix] = static_cast<T>(std::log(b.l));
        t.reg.data()[(5 * h + iy) * w + ix] = static_cast<T>(std::log(b.h));
        t.reg.data()[(6 * h + iy) * w + ix] = static_cast<T>(std::sin(b.yaw));
        t.reg.data()[(7 * h + iy) * w + ix] = static_cast<T>(std::cos(b.yaw));
        for (int64_t ch = 0; ch < kRegChannels; ++ch)
            t.reg_mask.data()[(ch * h + iy) * w + ix] = T(1);
        ++t.n_pos;
    }
    // negative weights (1 - Y)^4, zeroed at exact positives
    for (int64_t i = 0; i < t.heat.numel(); ++i) {
        T y = t.heat.data()[i];
        t.neg_w.data()[i] = (t.pos_mask.data()[i] == T(1))
                                ? T(0)
                                : static_cast<T>(std::pow(1.0 - static_cast<double>(y), 4.0));
    }
    return t;
}

// Focal heatmap loss (alpha=2, beta=4) plus L1 on the regression channels at
// the GT center cells; total = heat + 0.25 * reg.
template <class T>
Tensor<T> detection_loss(const HeadOutput<T>& pred, const DetectionTargets<T>& t,
                         T lambda_reg = static_cast<T>(0.25)) {
    if (pred.heat_logits.shape() != t.heat.shape() || pred.reg.shape() != t.reg.shape())
        throw ShapeError(cat("detection_loss: prediction shapes ",
                             shape_str(pred.heat_logits.shape()), "/",
                             shape_str(pred.reg.shape()), " do not match targets"));
    T eps = static_cast<T>(1e-6);
    Tensor<T> p = clamp(sigmoid(pred.heat_logits), eps, T(1) - eps);
    Tensor<T> one_minus_p = add_scalar(neg(p), T(1));
    Tensor<T> pos_term = mul(t.pos_mask, mul(square(one_minus_p), log_op(p)));
    Tensor<T> neg_term = mul(t.neg_w, mul(square(p), log_op(one_minus_p)));
    T inv_n = T(1) / static_cast<T>(std::max<int64_t>(1, t.n_pos));
    Tensor<T> heat_loss = mul_scalar(add(sum_all(pos_term), sum_all(neg_term)), -inv_n);

    Tensor<T> reg_loss =
        mul_scalar(sum_all(mul(t.reg_mask, abs_op(sub(pred.reg, t.reg)))), inv_n);
    return add(heat_loss, mul_scalar(reg_loss, lambda_reg));
}

// Peak picking (3x3 local maxima), score threshold, sub-cell offsets, size
// exponentiation, yaw via atan2, then greedy BEV NMS per class.
template <class T>
std::vector<Box3D> decode_detections(const HeadOutput<T>& pred, const BevGridConfig& bev,
                                     double score_thresh, double nms_iou) {
    if (score_thresh < 0 || score_thresh > 1 || nms_iou < 0 || nms_iou > 1)
        throw ValueError("decode: thresholds must be in [0,1]");
    int64_t h = bev.height(), w = bev.width();
    const Tensor<T>& logits = pred.heat_logits;
    std::vector<Box3D> cand;
    for (int64_t c = 0; c < kNumClasses; ++c)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                double v = static_cast<double>(logits.data()[(c * h + y) * w + x]);
                double p = 1.0 / (1.0 + std::exp(-v));
                if (p < score_thresh) continue;
                bool is_peak = true;
                for (int64_t dy = -1; dy <= 1 && is_peak; ++dy)
                    for (int64_t dx = -1; dx <= 1 && is_peak; ++dx) {
                        if (dy == 0 && dx == 0) continue;
                        int64_t yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        if (static_cast<double>(logits.data()[(c * h + yy) * w + xx]) > v)
                            is_peak = false;
                    }
                if (!is_peak) continue;
                auto reg_at = [&](int64_t ch) {
                    return static_cast<double>(pred.reg.data()[(ch * h + y) * w + x]);
                };
                Box3D b;
                b.x = bev.x_min + (static_cast<double>(x) + reg_at(0)) * bev.cell;
                b.y = bev.y_min + (static_cast<double>(y) + reg_at(1)) * bev.cell;
                b.z = reg_at(2);
                b.w = std::exp(reg_at(3));
                b.l = std::exp(reg_at(4));
                b.h = std::exp(reg_at(5));
                b.yaw = std::atan2(reg_at(6), reg_at(7));
                b.cls = static_cast<int>(c);
                b.score = p;
                cand.push_back(b);
            }
    // per-class NMS
    std::vector<Box3D> out;
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<Box3D> cls_boxes;
        for (const Box3D& b : cand)
            if (b.cls == c) cls_boxes.push_back(b);
        for (int idx : nms_bev(cls_boxes, nms_iou)) out.push_back(cls_boxes[static_cast<size_t>(idx)]);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Box3D& a, const Box3D& b) { return a.score > b.score; });
    return out;
}

} // namespace kf
