#pragma once

#include <array>
#include <optional>

#include "kanfuse/bev.hpp"
#include "kanfuse/kan.hpp"

namespace kf {

// Pinhole camera: p_cam = R * p_world + t, u = fx*x/z + cx, v = fy*y/z + cy.
// Camera z looks forward, x right, y down.
struct CameraModel {
    std::array<double, 9> intrinsic{};  // row-major 3x3
    std::array<double, 9> rotation{};   // world -> camera
    std::array<double, 3> translation{};
    int64_t img_w = 64, img_h = 64;
    double depth_min = 2.0, depth_max = 80.0;
    int64_t depth_bins = 32;

    void validate() const {
        double det = intrinsic[0] * (intrinsic[4] * intrinsic[8] - intrinsic[5] * intrinsic[7]) -
                     intrinsic[1] * (intrinsic[3] * intrinsic[8] - intrinsic[5] * intrinsic[6]) +
                     intrinsic[2] * (intrinsic[3] * intrinsic[7] - intrinsic[4] * intrinsic[6]);
        if (std::abs(det) < 1e-12) throw ValueError("camera: singular intrinsic matrix");
        // R R^T = I within 1e-6
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double dot = 0;
                for (int k = 0; k < 3; ++k) dot += rotation[static_cast<size_t>(i * 3 + k)] *
                                                   rotation[static_cast<size_t>(j * 3 + k)];
                if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-6)
                    throw ValueError("camera: rotation not orthonormal");
            }
        if (!(depth_min > 0 && depth_min < depth_max) || depth_bins < 1)
            throw ValueError("camera: bad depth bin config");
    }

    std::array<double, 3> to_camera(const std::array<double, 3>& p) const {
        std::array<double, 3> out{};
        for (int i = 0; i < 3; ++i)
            out[static_cast<size_t>(i)] = rotation[static_cast<size_t>(i * 3)] * p[0] +
                                          rotation[static_cast<size_t>(i * 3 + 1)] * p[1] +
                                          rotation[static_cast<size_t>(i * 3 + 2)] * p[2] +
                                          translation[static_cast<size_t>(i)];
        return out;
    }

    std::array<double, 3> to_world(const std::array<double, 3>& pc) const {
        std::array<double, 3> d{pc[0] - translation[0], pc[1] - translation[1],
                                pc[2] - translation[2]};
        std::array<double, 3> out{};
        for (int i = 0; i < 3; ++i) // R^T
            out[static_cast<size_t>(i)] = rotation[static_cast<size_t>(i)] * d[0] +
                                          rotation[static_cast<size_t>(3 + i)] * d[1] +
                                          rotation[static_cast<size_t>(6 + i)] * d[2];
        return out;
    }

    // (u, v, depth) when the point lies in front of the camera
    std::optional<std::array<double, 3>> project(const std::array<double, 3>& p) const {
        auto pc = to_camera(p);
        if (pc[2] < 1e-6) return std::nullopt;
        double u = intrinsic[0] * pc[0] / pc[2] + intrinsic[2];
        double v = intrinsic[4] * pc[1] / pc[2] + intrinsic[5];
        return std::array<double, 3>{u, v, pc[2]};
    }

    double bin_depth(int64_t i) const {
        return depth_min + (static_cast<double>(i) + 0.5) * (depth_max - depth_min) / depth_bins;
    }
};

// Precomputed BEV cell per (depth bin, feature pixel); -1 when the lifted
// sample lands outside the grid. Geometry is fixed; only the magnitudes are
// differentiable.
struct LiftGeometry {
    int64_t depth_bins = 0, feat_h = 0, feat_w = 0;
    int64_t bev_h = 0, bev_w = 0;
    std::vector<int32_t> cells;
    int64_t inside_count = 0;

    static LiftGeometry build(const CameraModel& cam, const BevGridConfig& bev, int64_t feat_h,
                              int64_t feat_w) {
        cam.validate();
        bev.validate();
        LiftGeometry g;
        g.depth_bins = cam.depth_bins;
        g.feat_h = feat_h;
        g.feat_w = feat_w;
        g.bev_h = bev.height();
        g.bev_w = bev.width();
        g.cells.assign(static_cast<size_t>(cam.depth_bins * feat_h * feat_w), -1);
        double fx = cam.intrinsic[0], fy = cam.intrinsic[4];
        double cx = cam.intrinsic[2], cy = cam.intrinsic[5];
        for (int64_t d = 0; d < cam.depth_bins; ++d) {
            double depth = cam.bin_depth(d);
            for (int64_t py = 0; py < feat_h; ++py)
                for (int64_t px = 0; px < feat_w; ++px) {
                    double u = (static_cast<double>(px) + 0.5) * cam.img_w / feat_w;
                    double v = (static_cast<double>(py) + 0.5) * cam.img_h / feat_h;
                    std::array<double, 3> pc{(u - cx) / fx * depth, (v - cy) / fy * depth, depth};
                    auto pw = cam.to_world(pc);
                    int64_t ix, iy;
                    if (!bev.cell_of(pw[0], pw[1], ix, iy)) continue;
                    g.cells[static_cast<size_t>((d * feat_h + py) * feat_w + px)] =
                        static_cast<int32_t>(iy * g.bev_w + ix);
                    ++g.inside_count;
                }
        }
        if (g.inside_count == 0)
            throw ConfigError("lift geometry: no ray intersects the BEV extent");
        return g;
    }
};

// Stand-in for the image backbone: two stride-2 conv+bn+relu blocks,
// bias-free convs.
template <class T>
struct CameraBackboneStub {
    int64_t c_in = 8, c_out = 32;
    Conv2dLayer<T> conv1, conv2;
    BatchNorm<T> bn1, bn2;

    CameraBackboneStub() = default;
    CameraBackboneStub(int64_t ci, int64_t co, Rng& rng)
        : c_in(ci), c_out(co), conv1(ci, co, 3, 2, 1, rng, /*with_bias=*/false),
          conv2(co, co, 3, 2, 1, rng, /*with_bias=*/false), bn1(co), bn2(co) {}

    Tensor<T> forward(const Tensor<T>& image, bool training, bool update_running = true) {
        if (image.rank() != 3 || image.dim(0) != c_in)
            throw ShapeError(cat("camera backbone: expected (", c_in, ",h,w), got ",
                                 shape_str(image.shape())));
        Tensor<T> h1 = relu(bn1.forward_chw(conv1.forward(image), training, update_running));
        return relu(bn2.forward_chw(conv2.forward(h1), training, update_running));
    }

    void params(ParamMap<T>& m, const std::string& prefix) {
        conv1.params(m, prefix + ".conv1");
        bn1.params(m, prefix + ".bn1");
        conv2.params(m, prefix + ".conv2");
        bn2.params(m, prefix + ".bn2");
    }
};

// Camera-to-BEV transform: downsample (stride-2 conv), depthnet (KANConv to
// depth logits, softmax over bins), dtransform (three KANConv+bn+relu blocks
// on the feature path), then the depth-weighted lift into BEV cells.
template <class T>
struct KanVTransform {
    int64_t c_in = 32, c_mid = 64, c_feat = 64, depth_bins = 32;
    Conv2dLayer<T> down;
    BatchNorm<T> bn_down;
    KanOrConv<T> depthnet;
    std::array<KanOrConv<T>, 3> dt;
    std::array<BatchNorm<T>, 3> dt_bn;

    KanVTransform() = default;
    KanVTransform(int64_t ci, int64_t mid, int64_t feat, int64_t d_bins, bool use_kan,
                  const SplineGrid& g, Rng& rng)
        : c_in(ci), c_mid(mid), c_feat(feat), depth_bins(d_bins),
          down(ci, mid, 3, 2, 1, rng, /*with_bias=*/false), bn_down(mid),
          depthnet(KanOrConv<T>::make(use_kan, mid, d_bins, 3, 1, g, rng)),
          dt{KanOrConv<T>::make(use_kan, mid, feat, 3, 1, g, rng),
             KanOrConv<T>::make(use_kan, feat, feat, 3, 1, g, rng),
             KanOrConv<T>::make(use_kan, feat, feat, 3, 1, g, rng)},
          dt_bn{BatchNorm<T>(feat), BatchNorm<T>(feat), BatchNorm<T>(feat)} {}

    struct Out {
        Tensor<T> bev;         // (c_feat, H, W)
        Tensor<T> depth_probs; // (D, hf, wf)
    };

    Out forward(const Tensor<T>& feat, const LiftGeometry& lift, bool training,
                bool update_running = true) {
        Tensor<T> ds = relu(bn_down.forward_chw(down.forward(feat), training, update_running));
        if (ds.dim(1) != lift.feat_h || ds.dim(2) != lift.feat_w)
            throw ShapeError(cat("vtransform: feature grid ", shape_str(ds.shape()),
                                 " does not match lift geometry ", lift.feat_h, "x", lift.feat_w));
        Tensor<T> probs = softmax(depthnet.forward(ds), 0);
        Tensor<T> f = ds;
        for (int i = 0; i < 3; ++i)
            f = relu(dt_bn[static_cast<size_t>(i)].forward_chw(dt[static_cast<size_t>(i)].forward(f),
                                                               training, update_running));
        Out out;
        out.depth_probs = probs;
        out.bev = lift_splat(probs, f, lift.cells, lift.bev_h, lift.bev_w);
        return out;
    }

    void params(ParamMap<T>& m, const std::string& prefix) {
        down.params(m, prefix + ".down");
        bn_down.params(m, prefix + ".bn_down");
        depthnet.params(m, prefix + ".depthnet");
        for (int i = 0; i < 3; ++i) {
            dt[static_cast<size_t>(i)].params(m, cat(prefix, ".dtransform", i));
            dt_bn[static_cast<size_t>(i)].params(m, cat(prefix, ".dtransform", i, ".bn"));
        }
    }
};

} // namespace kf
