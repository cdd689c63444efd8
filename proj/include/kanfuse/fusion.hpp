#pragma once

#include "kanfuse/bev.hpp"
#include "kanfuse/kan.hpp"

namespace kf {

// Flattened BEV map as an attention sequence: (1, S, c) with S = h_d * w_d,
// row-major over (y, x); spatial dims retained for the inverse reshape.
template <class T>
struct BevEmbedding {
    Tensor<T> seq; // (1, S, c)
    int64_t h_d = 0, w_d = 0;
};

template <class T>
BevFeature<T> downsample_bev(const BevFeature<T>& f, int64_t factor) {
    return BevFeature<T>(avg_pool2d(f.data, factor), f.source);
}

template <class T>
BevFeature<T> upsample_bev(const BevFeature<T>& f, int64_t factor) {
    return BevFeature<T>(upsample_nearest2d(f.data, factor), f.source);
}

template <class T>
BevEmbedding<T> embed_bev(const BevFeature<T>& f) {
    int64_t c = f.channels(), h = f.height(), w = f.width();
    BevEmbedding<T> e;
    e.h_d = h;
    e.w_d = w;
    e.seq = reshape(transpose2d(reshape(f.data, {c, h * w})), {1, h * w, c});
    return e;
}

template <class T>
BevFeature<T> unembed_bev(const BevEmbedding<T>& e, typename BevFeature<T>::Source source) {
    int64_t c = e.seq.dim(2);
    Tensor<T> chw = reshape(transpose2d(reshape(e.seq, {e.h_d * e.w_d, c})), {c, e.h_d, e.w_d});
    return BevFeature<T>(chw, source);
}

// Multi-head cross-attention; queries from the LiDAR embedding, keys and
// values from the camera embedding. Per-head projections W_i^{Q,K,V} are
// (d_k, c); the output projection W^O is (c, n*d_k); all bias-free. No
// positional encoding anywhere.
template <class T>
struct MultiHeadCrossAttention {
    int64_t heads = 4, channels = 64, d_k = 16;
    std::vector<Tensor<T>> w_q, w_k, w_v; // each (d_k, c)
    Tensor<T> w_o;                        // (c, n*d_k)

    MultiHeadCrossAttention() = default;
    MultiHeadCrossAttention(int64_t n, int64_t c, Rng& rng) : heads(n), channels(c) {
        if (n < 1 || c % n != 0)
            throw ShapeError(cat("attention: head count ", n, " does not divide channels ", c));
        d_k = c / n;
        T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c)));
        for (int64_t i = 0; i < n; ++i) {
            w_q.push_back(Tensor<T>::uniform({d_k, c}, rng, -bound, bound).requires_grad_());
            w_k.push_back(Tensor<T>::uniform({d_k, c}, rng, -bound, bound).requires_grad_());
            w_v.push_back(Tensor<T>::uniform({d_k, c}, rng, -bound, bound).requires_grad_());
        }
        w_o = Tensor<T>::uniform({c, n * d_k}, rng, -bound, bound).requires_grad_();
    }

    // weights_out, when given, receives the (S, S) row-stochastic attention
    // matrix of the head
    Tensor<T> head_forward(int64_t head, const BevEmbedding<T>& q_src,
                           const BevEmbedding<T>& kv_src, Tensor<T>* weights_out = nullptr) const {
        check_pair(q_src, kv_src);
        int64_t s = q_src.seq.dim(1);
        Tensor<T> el = reshape(q_src.seq, {s, channels});
        Tensor<T> ec = reshape(kv_src.seq, {s, channels});
        Tensor<T> q = matmul(el, transpose2d(w_q[static_cast<size_t>(head)]));
        Tensor<T> k = matmul(ec, transpose2d(w_k[static_cast<size_t>(head)]));
        Tensor<T> v = matmul(ec, transpose2d(w_v[static_cast<size_t>(head)]));
        T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k)));
        Tensor<T> weights = softmax(mul_scalar(matmul(q, transpose2d(k)), scale), 1);
        if (weights_out) *weights_out = weights;
        return matmul(weights, v); // (S, d_k)
    }

    // -> embedding with the same (S, c) layout; per-head weight matrices are
    // stacked into weights_out (n, S, S) when requested
    BevEmbedding<T> forward(const BevEmbedding<T>& lidar, const BevEmbedding<T>& camera,
                            Tensor<T>* weights_out = nullptr) const {
        check_pair(lidar, camera);
        int64_t s = lidar.seq.dim(1);
        std::vector<Tensor<T>> head_outs;
        std::vector<Tensor<T>> head_weights;
        for (int64_t i = 0; i < heads; ++i) {
            Tensor<T> w;
            head_outs.push_back(head_forward(i, lidar, camera, weights_out ? &w : nullptr));
            if (weights_out) head_weights.push_back(reshape(w, {1, s, s}));
        }
        if (weights_out) *weights_out = concat(head_weights, 0);
        Tensor<T> cat_heads = concat(head_outs, 1);           // (S, n*d_k)
        Tensor<T> out = matmul(cat_heads, transpose2d(w_o)); // (S, c)
        BevEmbedding<T> e;
        e.h_d = lidar.h_d;
        e.w_d = lidar.w_d;
        e.seq = reshape(out, {1, s, channels});
        return e;
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        for (int64_t i = 0; i < heads; ++i) {
            m.add(cat(prefix, ".head", i, ".w_q"), w_q[static_cast<size_t>(i)]);
            m.add(cat(prefix, ".head", i, ".w_k"), w_k[static_cast<size_t>(i)]);
            m.add(cat(prefix, ".head", i, ".w_v"), w_v[static_cast<size_t>(i)]);
        }
        m.add(prefix + ".w_o", w_o);
    }

private:
    void check_pair(const BevEmbedding<T>& a, const BevEmbedding<T>& b) const {
        if (a.seq.rank() != 3 || b.seq.rank() != 3 || a.seq.dim(1) != b.seq.dim(1) ||
            a.seq.dim(2) != channels || b.seq.dim(2) != channels)
            throw ShapeError(cat("attention: embeddings ", shape_str(a.seq.shape()), " and ",
                                 shape_str(b.seq.shape()), " incompatible with c=", channels));
    }
};

// Downsample both BEV maps, embed, cross-attend (LiDAR query, camera
// keys/values), unflatten and upsample back to full resolution.
template <class T>
struct CrossAttnBlock {
    int64_t factor = 6;
    MultiHeadCrossAttention<T> attn;

    CrossAttnBlock() = default;
    CrossAttnBlock(int64_t down_factor, int64_t heads, int64_t channels, Rng& rng)
        : factor(down_factor), attn(heads, channels, rng) {}

    BevFeature<T> forward(const BevFeature<T>& lidar, const BevFeature<T>& camera,
                          Tensor<T>* weights_out = nullptr) const {
        BevEmbedding<T> el = embed_bev(downsample_bev(lidar, factor));
        BevEmbedding<T> ec = embed_bev(downsample_bev(camera, factor));
        BevEmbedding<T> attended = attn.forward(el, ec, weights_out);
        return upsample_bev(unembed_bev(attended, BevFeature<T>::Source::camera), factor);
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        attn.params(m, prefix + ".attn");
    }
};

// Fusion tail: concat [lidar || attended camera] on channels, batchnorm the
// concatenation into the spline domain, KANConv (same padding), batchnorm,
// relu.
template <class T>
struct ConvKanFuser {
    int64_t c_lidar = 64, c_cam = 64, c_out = 64;
    BatchNorm<T> bn_in;
    KanOrConv<T> conv;
    BatchNorm<T> bn_out;

    ConvKanFuser() = default;
    ConvKanFuser(int64_t cl, int64_t cc, int64_t co, int64_t k, bool use_kan, const SplineGrid& g,
                 Rng& rng)
        : c_lidar(cl), c_cam(cc), c_out(co), bn_in(cl + cc),
          conv(KanOrConv<T>::make(use_kan, cl + cc, co, k, k / 2, g, rng)), bn_out(co) {}

    BevFeature<T> forward(const BevFeature<T>& lidar, const BevFeature<T>& attended_cam,
                          bool training, bool update_running = true) {
        if (lidar.height() != attended_cam.height() || lidar.width() != attended_cam.width())
            throw ShapeError(cat("fuser: spatial dims differ ", shape_str(lidar.data.shape()),
                                 " vs ", shape_str(attended_cam.data.shape())));
        if (lidar.channels() != c_lidar || attended_cam.channels() != c_cam)
            throw ShapeError(cat("fuser: channel mismatch, got ", lidar.channels(), "+",
                                 attended_cam.channels(), ", expected ", c_lidar, "+", c_cam));
        Tensor<T> x = concat<T>({lidar.data, attended_cam.data}, 0);
        x = bn_in.forward_chw(x, training, update_running);
        Tensor<T> y = relu(bn_out.forward_chw(conv.forward(x), training, update_running));
        return BevFeature<T>(y, BevFeature<T>::Source::fused);
    }

    void params(ParamMap<T>& m, const std::string& prefix) {
        bn_in.params(m, prefix + ".bn_in");
        conv.params(m, prefix + ".conv");
        bn_out.params(m, prefix + ".bn_out");
    }
};

} // namespace kf
