#pragma once

#include <optional>

#include "kanfuse/nn.hpp"
#include "kanfuse/spline.hpp"

// Kolmogorov-Arnold primitives: learnable per-edge activations
//   phi(x) = w_b * SiLU(x) + w_s * sum_i coeffs_i * B_i(clamp(x))
// arranged as an n_out x n_in matrix (KAN layer) or a c_out x c_in x k x k
// kernel (KAN convolution). Both forwards factor through two ops:
//   expand:  every input scalar becomes [SiLU(x), B_1(x), ..., B_nb(x)]
//   weights: (w_b, w_s, coeffs) -> a dense matrix / conv kernel
// so the heavy lifting reuses matmul / conv2d.

namespace kf {

template <class T>
struct KanActivation {
    T w_b = T(1);
    T w_s = T(1);
    std::vector<T> coeffs;
    const SplineGrid* grid = nullptr;
};

// Production scalar path; the oracle tests re-derive this with a naive
// recursive Cox-de Boor evaluation.
template <class T>
T eval_phi(T x, const KanActivation<T>& act) {
    if (!act.grid) throw ValueError("eval_phi: activation has no grid");
    if (static_cast<int>(act.coeffs.size()) != act.grid->basis_count())
        throw ValueError(cat("eval_phi: ", act.coeffs.size(), " coeffs for ",
                             act.grid->basis_count(), " basis functions"));
    double xs = static_cast<double>(x);
    double s = xs / (1.0 + std::exp(-xs));
    double window[kMaxSplineOrder + 1];
    int first = 0;
    bspline_window(*act.grid, xs, first, window);
    double spline = 0.0;
    for (int j = 0; j <= act.grid->order; ++j)
        spline += static_cast<double>(act.coeffs[static_cast<size_t>(first + j)]) * window[j];
    return static_cast<T>(static_cast<double>(act.w_b) * s +
                          static_cast<double>(act.w_s) * spline);
}

namespace detail {

// per-scalar expansion slots: [silu, basis...]; returns dx contribution given
// upstream gradient over the slots
template <class T>
void kan_expand_scalar(const SplineGrid& g, T x, T* out_slots) {
    double xs = static_cast<double>(x);
    out_slots[0] = static_cast<T>(xs / (1.0 + std::exp(-xs)));
    int nb = g.basis_count();
    for (int i = 0; i < nb; ++i) out_slots[1 + i] = T(0);
    double window[kMaxSplineOrder + 1];
    int first = 0;
    bspline_window(g, xs, first, window);
    for (int j = 0; j <= g.order; ++j) out_slots[1 + first + j] = static_cast<T>(window[j]);
}

template <class T>
T kan_expand_scalar_backward(const SplineGrid& g, T x, const T* gout_slots) {
    double xs = static_cast<double>(x);
    double sig = 1.0 / (1.0 + std::exp(-xs));
    double acc = static_cast<double>(gout_slots[0]) * sig * (1.0 + xs * (1.0 - sig));
    double window[kMaxSplineOrder + 1], dwindow[kMaxSplineOrder + 1];
    int first = 0;
    bspline_window(g, xs, first, window, dwindow);
    for (int j = 0; j <= g.order; ++j)
        acc += static_cast<double>(gout_slots[1 + first + j]) * dwindow[j];
    return static_cast<T>(acc);
}

} // namespace detail

// (N, n_in) -> (N, n_in * (1 + nb)); column block p holds the expansion of
// input feature p.
template <class T>
Tensor<T> kan_expand_rows(const Tensor<T>& x, const SplineGrid& grid) {
    if (x.rank() != 2)
        throw ShapeError(cat("kan_expand_rows: expected (N,n_in), got ", shape_str(x.shape())));
    int64_t n = x.dim(0), nin = x.dim(1);
    int64_t slots = 1 + grid.basis_count();
    Tensor<T> out(Shape{n, nin * slots});
    parallel_chunks(n, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i)
            for (int64_t p = 0; p < nin; ++p)
                detail::kan_expand_scalar(grid, x.data()[i * nin + p],
                                          out.data() + (i * nin + p) * slots);
    });
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl},
                         [xi = x.impl, xv = x.impl->data, grid, n, nin, slots](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(xi);
                             parallel_chunks(n, [&](int64_t r0, int64_t r1) {
                                 for (int64_t i = r0; i < r1; ++i)
                                     for (int64_t p = 0; p < nin; ++p)
                                         g[i * nin + p] += detail::kan_expand_scalar_backward(
                                             grid, xv[i * nin + p],
                                             self.grad.data() + (i * nin + p) * slots);
                             });
                         });
    }
    return out;
}

// (c, h, w) -> (c * (1 + nb), h, w); channel block ic holds the expansion of
// input channel ic, pixelwise.
template <class T>
Tensor<T> kan_expand_chw(const Tensor<T>& x, const SplineGrid& grid) {
    if (x.rank() != 3)
        throw ShapeError(cat("kan_expand_chw: expected (c,h,w), got ", shape_str(x.shape())));
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t hw = h * w, slots = 1 + grid.basis_count();
    Tensor<T> out(Shape{c * slots, h, w});
    parallel_chunks(c * hw, [&](int64_t i0, int64_t i1) {
        std::vector<T> tmp(static_cast<size_t>(slots));
        for (int64_t i = i0; i < i1; ++i) {
            int64_t ic = i / hw, pix = i % hw;
            detail::kan_expand_scalar(grid, x.data()[i], tmp.data());
            for (int64_t s = 0; s < slots; ++s) out.data()[(ic * slots + s) * hw + pix] = tmp[static_cast<size_t>(s)];
        }
    });
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl},
                         [xi = x.impl, xv = x.impl->data, grid, c, hw, slots](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(xi);
                             parallel_chunks(c * hw, [&](int64_t i0, int64_t i1) {
                                 std::vector<T> tmp(static_cast<size_t>(slots));
                                 for (int64_t i = i0; i < i1; ++i) {
                                     int64_t ic = i / hw, pix = i % hw;
                                     for (int64_t s = 0; s < slots; ++s)
                                         tmp[static_cast<size_t>(s)] =
                                             self.grad[(ic * slots + s) * hw + pix];
                                     g[i] += detail::kan_expand_scalar_backward(grid, xv[i],
                                                                                tmp.data());
                                 }
                             });
                         });
    }
    return out;
}

// (w_b, w_s: (n_out,n_in); coeffs: (n_out,n_in,nb)) -> (n_in*(1+nb), n_out)
template <class T>
Tensor<T> kan_weight_matrix(const Tensor<T>& w_b, const Tensor<T>& w_s, const Tensor<T>& coeffs) {
    if (w_b.rank() != 2 || w_s.shape() != w_b.shape() || coeffs.rank() != 3 ||
        coeffs.dim(0) != w_b.dim(0) || coeffs.dim(1) != w_b.dim(1))
        throw ShapeError(cat("kan_weight_matrix: inconsistent shapes ", shape_str(w_b.shape()),
                             " / ", shape_str(coeffs.shape())));
    int64_t nout = w_b.dim(0), nin = w_b.dim(1), nb = coeffs.dim(2);
    int64_t slots = 1 + nb;
    Tensor<T> out(Shape{nin * slots, nout});
    for (int64_t q = 0; q < nout; ++q)
        for (int64_t p = 0; p < nin; ++p) {
            out.data()[(p * slots) * nout + q] = w_b.data()[q * nin + p];
            T ws = w_s.data()[q * nin + p];
            const T* cf = coeffs.data() + (q * nin + p) * nb;
            for (int64_t t = 0; t < nb; ++t)
                out.data()[(p * slots + 1 + t) * nout + q] = ws * cf[t];
        }
    if (autodiff::recording<T>({&w_b, &w_s, &coeffs})) {
        autodiff::record(
            out, {w_b.impl, w_s.impl, coeffs.impl},
            [bi = w_b.impl, si = w_s.impl, ci = coeffs.impl, sv = w_s.impl->data,
             cv = coeffs.impl->data, nout, nin, nb, slots](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                for (int64_t q = 0; q < nout; ++q)
                    for (int64_t p = 0; p < nin; ++p) {
                        if (bi->requires_grad)
                            autodiff::grad_of(bi)[q * nin + p] += g[(p * slots) * nout + q];
                        T acc_ws = T(0);
                        for (int64_t t = 0; t < nb; ++t) {
                            T gd = g[(p * slots + 1 + t) * nout + q];
                            acc_ws += gd * cv[(q * nin + p) * nb + t];
                            if (ci->requires_grad)
                                autodiff::grad_of(ci)[(q * nin + p) * nb + t] +=
                                    gd * sv[q * nin + p];
                        }
                        if (si->requires_grad) autodiff::grad_of(si)[q * nin + p] += acc_ws;
                    }
            });
    }
    return out;
}

// (w_b, w_s: (co,ci,k,k); coeffs: (co,ci,k,k,nb)) -> (co, ci*(1+nb), k, k)
template <class T>
Tensor<T> kan_weight_conv(const Tensor<T>& w_b, const Tensor<T>& w_s, const Tensor<T>& coeffs) {
    if (w_b.rank() != 4 || w_s.shape() != w_b.shape() || coeffs.rank() != 5)
        throw ShapeError(cat("kan_weight_conv: inconsistent shapes ", shape_str(w_b.shape()),
                             " / ", shape_str(coeffs.shape())));
    int64_t co = w_b.dim(0), ci = w_b.dim(1), kh = w_b.dim(2), kw = w_b.dim(3);
    int64_t nb = coeffs.dim(4);
    int64_t slots = 1 + nb;
    int64_t kk = kh * kw;
    Tensor<T> out(Shape{co, ci * slots, kh, kw});
    for (int64_t oc = 0; oc < co; ++oc)
        for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t mn = 0; mn < kk; ++mn) {
                int64_t edge = (oc * ci + ic) * kk + mn;
                out.data()[(oc * ci * slots + ic * slots) * kk + mn] = w_b.data()[edge];
                T ws = w_s.data()[edge];
                const T* cf = coeffs.data() + edge * nb;
                for (int64_t t = 0; t < nb; ++t)
                    out.data()[(oc * ci * slots + ic * slots + 1 + t) * kk + mn] = ws * cf[t];
            }
    if (autodiff::recording<T>({&w_b, &w_s, &coeffs})) {
        autodiff::record(
            out, {w_b.impl, w_s.impl, coeffs.impl},
            [bi = w_b.impl, si = w_s.impl, ci_ = coeffs.impl, sv = w_s.impl->data,
             cv = coeffs.impl->data, co, ci, kk, nb, slots](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                for (int64_t oc = 0; oc < co; ++oc)
                    for (int64_t ic = 0; ic < ci; ++ic)
                        for (int64_t mn = 0; mn < kk; ++mn) {
                            int64_t edge = (oc * ci + ic) * kk + mn;
                            if (bi->requires_grad)
                                autodiff::grad_of(bi)[edge] +=
                                    g[(oc * ci * slots + ic * slots) * kk + mn];
                            T acc_ws = T(0);
                            for (int64_t t = 0; t < nb; ++t) {
                                T gd = g[(oc * ci * slots + ic * slots + 1 + t) * kk + mn];
                                acc_ws += gd * cv[edge * nb + t];
                                if (ci_->requires_grad)
                                    autodiff::grad_of(ci_)[edge * nb + t] += gd * sv[edge];
                            }
                            if (si->requires_grad) autodiff::grad_of(si)[edge] += acc_ws;
                        }
            });
    }
    return out;
}

// KAN layer: out[b,q] = sum_p phi_{q,p}(x[b,p])
template <class T>
struct KanLayer {
    int64_t n_in = 0, n_out = 0;
    SplineGrid grid;
    Tensor<T> w_b, w_s;  // (n_out, n_in)
    Tensor<T> coeffs;    // (n_out, n_in, nb)

    KanLayer() = default;
    KanLayer(int64_t in, int64_t out, const SplineGrid& g, Rng& rng)
        : n_in(in), n_out(out), grid(g) {
        int64_t nb = grid.basis_count();
        w_b = Tensor<T>::full({out, in}, T(1));
        w_s = Tensor<T>::full({out, in}, T(1));
        T sd = static_cast<T>(0.1 / std::sqrt(static_cast<double>(nb)));
        coeffs = Tensor<T>::randn({out, in, nb}, rng, sd);
        w_b.requires_grad_();
        w_s.requires_grad_();
        coeffs.requires_grad_();
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 2 || x.dim(1) != n_in)
            throw ShapeError(cat("kan_layer: expected (N,", n_in, "), got ",
                                 shape_str(x.shape())));
        return matmul(kan_expand_rows(x, grid), kan_weight_matrix(w_b, w_s, coeffs));
    }

    int64_t param_count() const { return n_in * n_out * (2 + grid.basis_count()); }

    KanActivation<T> activation(int64_t q, int64_t p) const {
        KanActivation<T> a;
        a.w_b = w_b.data()[q * n_in + p];
        a.w_s = w_s.data()[q * n_in + p];
        int64_t nb = grid.basis_count();
        a.coeffs.assign(coeffs.data() + (q * n_in + p) * nb,
                        coeffs.data() + (q * n_in + p + 1) * nb);
        a.grid = &grid;
        return a;
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m.add(prefix + ".w_b", w_b);
        m.add(prefix + ".w_s", w_s);
        m.add(prefix + ".coeffs", coeffs);
    }
};

// KAN convolution, one independent phi-grid per output channel (Eq. 7 shape:
// valid output (h-k+1, w-k+1); same-padding optional).
template <class T>
struct KanConv2d {
    int64_t c_in = 0, c_out = 0, k = 1, pad = 0;
    SplineGrid grid;
    Tensor<T> w_b, w_s;  // (c_out, c_in, k, k)
    Tensor<T> coeffs;    // (c_out, c_in, k, k, nb)

    KanConv2d() = default;
    KanConv2d(int64_t ci, int64_t co, int64_t kernel, int64_t pad_, const SplineGrid& g, Rng& rng)
        : c_in(ci), c_out(co), k(kernel), pad(pad_), grid(g) {
        int64_t nb = grid.basis_count();
        w_b = Tensor<T>::full({co, ci, kernel, kernel}, T(1));
        w_s = Tensor<T>::full({co, ci, kernel, kernel}, T(1));
        T sd = static_cast<T>(0.1 / std::sqrt(static_cast<double>(nb)));
        coeffs = Tensor<T>::randn({co, ci, kernel, kernel, nb}, rng, sd);
        w_b.requires_grad_();
        w_s.requires_grad_();
        coeffs.requires_grad_();
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.dim(0) != c_in)
            throw ShapeError(cat("kan_conv: expected (", c_in, ",h,w), got ",
                                 shape_str(x.shape())));
        if (x.dim(1) + 2 * pad < k || x.dim(2) + 2 * pad < k)
            throw ShapeError(cat("kan_conv: input ", shape_str(x.shape()),
                                 " smaller than kernel ", k, "x", k));
        // pad the raw input, not the expanded one: padded zeros must
        // contribute phi(0), not nothing
        return conv2d(kan_expand_chw(pad2d(x, pad), grid), kan_weight_conv(w_b, w_s, coeffs), 1,
                      0);
    }

    int64_t param_count() const { return c_out * c_in * k * k * (2 + grid.basis_count()); }

    KanActivation<T> activation(int64_t oc, int64_t ic, int64_t m, int64_t n) const {
        KanActivation<T> a;
        int64_t edge = ((oc * c_in + ic) * k + m) * k + n;
        a.w_b = w_b.data()[edge];
        a.w_s = w_s.data()[edge];
        int64_t nb = grid.basis_count();
        a.coeffs.assign(coeffs.data() + edge * nb, coeffs.data() + (edge + 1) * nb);
        a.grid = &grid;
        return a;
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        m.add(prefix + ".w_b", w_b);
        m.add(prefix + ".w_s", w_s);
        m.add(prefix + ".coeffs", coeffs);
    }
};

// Ablation helpers: a slot that is either the KAN variant or the plain one.

template <class T>
struct KanOrLinear {
    std::optional<KanLayer<T>> kan;
    std::optional<Linear<T>> lin;

    static KanOrLinear make(bool use_kan, int64_t in, int64_t out, const SplineGrid& g, Rng& rng) {
        KanOrLinear s;
        if (use_kan)
            s.kan.emplace(in, out, g, rng);
        else
            s.lin.emplace(in, out, rng, /*with_bias=*/true, Activation::none);
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x) const { return kan ? kan->forward(x) : lin->forward(x); }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        if (kan)
            kan->params(m, prefix + ".kan");
        else
            lin->params(m, prefix + ".lin");
    }
};

template <class T>
struct KanOrConv {
    std::optional<KanConv2d<T>> kan;
    std::optional<Conv2dLayer<T>> conv;

    static KanOrConv make(bool use_kan, int64_t ci, int64_t co, int64_t k, int64_t pad,
                          const SplineGrid& g, Rng& rng) {
        KanOrConv s;
        if (use_kan)
            s.kan.emplace(ci, co, k, pad, g, rng);
        else
            s.conv.emplace(ci, co, k, /*stride=*/1, pad, rng, /*with_bias=*/true);
        return s;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return kan ? kan->forward(x) : conv->forward(x);
    }

    void params(ParamMap<T>& m, const std::string& prefix) const {
        if (kan)
            kan->params(m, prefix + ".kan");
        else
            conv->params(m, prefix + ".conv");
    }
};

} // namespace kf
