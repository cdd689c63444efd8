#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <span>

#include "kanfuse/tensor.hpp"

// Dense tensor ops with reverse-mode backward. Every op validates shapes and
// names itself plus the offending dims in the error. Backward closures work
// on raw buffers; they never build graph nodes (no higher-order derivatives).

namespace kf {

namespace detail {

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                             shape_str(b.shape())));
}

template <class T>
void axpy(std::vector<T>& dst, const std::vector<T>& src, T scale) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

} // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("add", a, b);
    Tensor<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (autodiff::recording<T>({&a, &b})) {
        autodiff::record(out, {a.impl, b.impl}, [ai = a.impl, bi = b.impl](TensorImpl<T>& self) {
            if (ai->requires_grad) detail::axpy(autodiff::grad_of(ai), self.grad, T(1));
            if (bi->requires_grad) detail::axpy(autodiff::grad_of(bi), self.grad, T(1));
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("sub", a, b);
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (autodiff::recording<T>({&a, &b})) {
        autodiff::record(out, {a.impl, b.impl}, [ai = a.impl, bi = b.impl](TensorImpl<T>& self) {
            if (ai->requires_grad) detail::axpy(autodiff::grad_of(ai), self.grad, T(1));
            if (bi->requires_grad) detail::axpy(autodiff::grad_of(bi), self.grad, T(-1));
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape("mul", a, b);
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (autodiff::recording<T>({&a, &b})) {
        autodiff::record(out, {a.impl, b.impl},
                         [ai = a.impl, bi = b.impl, av = a.impl->data,
                          bv = b.impl->data](TensorImpl<T>& self) {
                             if (ai->requires_grad) {
                                 auto& g = autodiff::grad_of(ai);
                                 for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
                             }
                             if (bi->requires_grad) {
                                 auto& g = autodiff::grad_of(bi);
                                 for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
                             }
                         });
    }
    return out;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + s;
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl}, [ai = a.impl](TensorImpl<T>& self) {
            detail::axpy(autodiff::grad_of(ai), self.grad, T(1));
        });
    }
    return out;
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl}, [ai = a.impl, s](TensorImpl<T>& self) {
            detail::axpy(autodiff::grad_of(ai), self.grad, s);
        });
    }
    return out;
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return mul_scalar(a, T(-1));
}

namespace detail {

// shared unary scaffold: fwd(x) and dydx(x, y)
template <class T, class FwdFn, class BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn dydx) {
    Tensor<T> out(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[i] = fwd(a.data()[i]);
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl},
                         [ai = a.impl, xv = a.impl->data, yv = out.impl->data,
                          dydx](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(ai);
                             for (size_t i = 0; i < g.size(); ++i)
                                 g[i] += self.grad[i] * dydx(xv[i], yv[i]);
                         });
    }
    return out;
}

} // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x / (T(1) + std::exp(-x)); },
        [](T x, T) {
            T s = T(1) / (T(1) + std::exp(-x));
            return s * (T(1) + x * (T(1) - s));
        });
}

template <class T>
Tensor<T> exp_op(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log_op(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> abs_op(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// pass-through gradient strictly inside (lo, hi), zero outside
template <class T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
    return detail::unary_op(
        a, [lo, hi](T x) { return std::min(hi, std::max(lo, x)); },
        [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

// ------------------------------------------------------------------- matmul

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError(cat("matmul: expected rank-2 inputs, got ", shape_str(a.shape()), " and ",
                             shape_str(b.shape())));
    int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError(cat("matmul: inner dims mismatch ", shape_str(a.shape()), " x ",
                             shape_str(b.shape())));
    Tensor<T> out(Shape{m, n});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_chunks(m, [&](int64_t r0, int64_t r1) {
        for (int64_t i = r0; i < r1; ++i) {
            T* orow = po + i * n;
            const T* arow = pa + i * k;
            for (int64_t kk = 0; kk < k; ++kk) {
                T av = arow[kk];
                if (av == T(0)) continue;
                const T* brow = pb + kk * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });
    if (autodiff::recording<T>({&a, &b})) {
        autodiff::record(
            out, {a.impl, b.impl},
            [ai = a.impl, bi = b.impl, av = a.impl->data, bv = b.impl->data, m, k,
             n](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                if (ai->requires_grad) { // dA = G * B^T
                    auto& ga = autodiff::grad_of(ai);
                    parallel_chunks(m, [&](int64_t r0, int64_t r1) {
                        for (int64_t i = r0; i < r1; ++i)
                            for (int64_t j = 0; j < n; ++j) {
                                T gv = g[i * n + j];
                                if (gv == T(0)) continue;
                                const T* brow = bv.data() + j;
                                for (int64_t kk = 0; kk < k; ++kk)
                                    ga[i * k + kk] += gv * brow[kk * n];
                            }
                    });
                }
                if (bi->requires_grad) { // dB = A^T * G
                    auto& gb = autodiff::grad_of(bi);
                    parallel_chunks(k, [&](int64_t r0, int64_t r1) {
                        for (int64_t kk = r0; kk < r1; ++kk)
                            for (int64_t i = 0; i < m; ++i) {
                                T avv = av[i * k + kk];
                                if (avv == T(0)) continue;
                                const T* grow = g.data() + i * n;
                                T* gbrow = gb.data() + kk * n;
                                for (int64_t j = 0; j < n; ++j) gbrow[j] += avv * grow[j];
                            }
                    });
                }
            });
    }
    return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
    if (a.rank() != 2)
        throw ShapeError(cat("transpose2d: expected rank-2, got ", shape_str(a.shape())));
    int64_t m = a.dim(0), n = a.dim(1);
    Tensor<T> out(Shape{n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl}, [ai = a.impl, m, n](TensorImpl<T>& self) {
            auto& g = autodiff::grad_of(ai);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
        });
    }
    return out;
}

// add a length-C row vector to every row of an (N, C) matrix
template <class T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& b) {
    if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw ShapeError(cat("add_rowvec: incompatible ", shape_str(x.shape()), " + ",
                             shape_str(b.shape())));
    int64_t n = x.dim(0), c = x.dim(1);
    Tensor<T> out(x.shape());
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = x.data()[i * c + j] + b.data()[j];
    if (autodiff::recording<T>({&x, &b})) {
        autodiff::record(out, {x.impl, b.impl},
                         [xi = x.impl, bi = b.impl, n, c](TensorImpl<T>& self) {
                             if (xi->requires_grad)
                                 detail::axpy(autodiff::grad_of(xi), self.grad, T(1));
                             if (bi->requires_grad) {
                                 auto& g = autodiff::grad_of(bi);
                                 for (int64_t i = 0; i < n; ++i)
                                     for (int64_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
                             }
                         });
    }
    return out;
}

// ------------------------------------------------------------------ softmax

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int64_t axis) {
    if (axis < 0) axis += x.rank();
    if (axis < 0 || axis >= x.rank())
        throw ShapeError(cat("softmax: axis ", axis, " out of range for ", shape_str(x.shape())));
    int64_t n = x.dim(axis);
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

    Tensor<T> out(x.shape());
    const T* px = x.data();
    T* po = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const T* xs = px + o * n * inner + in;
            T* os = po + o * n * inner + in;
            T mx = xs[0];
            for (int64_t i = 1; i < n; ++i) mx = std::max(mx, xs[i * inner]);
            T sum = T(0);
            for (int64_t i = 0; i < n; ++i) {
                T e = std::exp(xs[i * inner] - mx);
                os[i * inner] = e;
                sum += e;
            }
            T invs = T(1) / sum;
            for (int64_t i = 0; i < n; ++i) os[i * inner] *= invs;
        }
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl},
                         [xi = x.impl, yv = out.impl->data, outer, inner, n](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(xi);
                             for (int64_t o = 0; o < outer; ++o)
                                 for (int64_t in = 0; in < inner; ++in) {
                                     int64_t base = o * n * inner + in;
                                     T dot = T(0);
                                     for (int64_t i = 0; i < n; ++i)
                                         dot += self.grad[base + i * inner] * yv[base + i * inner];
                                     for (int64_t i = 0; i < n; ++i) {
                                         int64_t idx = base + i * inner;
                                         g[idx] += (self.grad[idx] - dot) * yv[idx];
                                     }
                                 }
                         });
    }
    return out;
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
    T s = T(0);
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data()[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl}, [ai = a.impl](TensorImpl<T>& self) {
            auto& g = autodiff::grad_of(ai);
            for (auto& v : g) v += self.grad[0];
        });
    }
    return out;
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
    if (a.numel() == 0) throw ShapeError("mean_all: empty tensor");
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.numel()));
}

// --------------------------------------------------------------- shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (numel_of(new_shape) != a.numel())
        throw ShapeError(cat("reshape: cannot view ", shape_str(a.shape()), " as ",
                             shape_str(new_shape)));
    Tensor<T> out = Tensor<T>::from_data(std::move(new_shape), a.impl->data);
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl}, [ai = a.impl](TensorImpl<T>& self) {
            detail::axpy(autodiff::grad_of(ai), self.grad, T(1));
        });
    }
    return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    int64_t rank = parts[0].rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError(cat("concat: bad axis ", axis));
    Shape out_shape = parts[0].shape();
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
        for (int64_t d = 0; d < rank; ++d)
            if (d != axis && p.dim(d) != out_shape[static_cast<size_t>(d)])
                throw ShapeError(cat("concat: dim ", d, " mismatch ", shape_str(p.shape()),
                                     " vs ", shape_str(parts[0].shape())));
        axis_total += p.dim(axis);
    }
    out_shape[static_cast<size_t>(axis)] = axis_total;

    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
    for (int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];

    Tensor<T> out(out_shape);
    int64_t out_row = axis_total * inner;
    int64_t offset = 0;
    for (const auto& p : parts) {
        int64_t blk = p.dim(axis) * inner;
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + o * out_row + offset, p.data() + o * blk,
                        static_cast<size_t>(blk) * sizeof(T));
        offset += blk;
    }
    bool rec = false;
    for (const auto& p : parts)
        if (GradMode::enabled() && p.requires_grad()) rec = true;
    if (rec) {
        std::vector<std::shared_ptr<TensorImpl<T>>> parents;
        std::vector<int64_t> blocks;
        for (const auto& p : parts) {
            parents.push_back(p.impl);
            blocks.push_back(p.dim(axis) * inner);
        }
        autodiff::record(out, std::move(parents),
                         [blocks, outer, out_row](TensorImpl<T>& self) {
                             int64_t off = 0;
                             for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                                 auto& parent = self.parents[pi];
                                 int64_t blk = blocks[pi];
                                 if (parent->requires_grad) {
                                     auto& g = autodiff::grad_of(parent);
                                     for (int64_t o = 0; o < outer; ++o)
                                         for (int64_t i = 0; i < blk; ++i)
                                             g[o * blk + i] += self.grad[o * out_row + off + i];
                                 }
                                 off += blk;
                             }
                         });
    }
    return out;
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, int64_t axis, int64_t start, int64_t len) {
    int64_t rank = a.rank();
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError(cat("slice: bad axis ", axis));
    if (start < 0 || len < 0 || start + len > a.dim(axis))
        throw ShapeError(cat("slice: range [", start, ",", start + len, ") exceeds dim ",
                             a.dim(axis)));
    Shape out_shape = a.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (int64_t i = axis + 1; i < rank; ++i) inner *= a.dim(i);
    int64_t in_row = a.dim(axis) * inner, out_row = len * inner;

    Tensor<T> out(out_shape);
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * out_row, a.data() + o * in_row + start * inner,
                    static_cast<size_t>(out_row) * sizeof(T));
    if (autodiff::recording<T>({&a})) {
        autodiff::record(out, {a.impl},
                         [ai = a.impl, outer, inner, in_row, out_row, start](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(ai);
                             for (int64_t o = 0; o < outer; ++o)
                                 for (int64_t i = 0; i < out_row; ++i)
                                     g[o * in_row + start * inner + i] += self.grad[o * out_row + i];
                         });
    }
    return out;
}

// ------------------------------------------------------------------- conv2d

namespace detail {

template <class T>
void conv2d_forward_kernel(const T* x, const T* w, const T* bias, T* out, int64_t ci, int64_t h,
                           int64_t ww, int64_t co, int64_t kh, int64_t kw, int64_t ho, int64_t wo,
                           int64_t stride, int64_t pad) {
    parallel_chunks(co, [&](int64_t oc0, int64_t oc1) {
        for (int64_t oc = oc0; oc < oc1; ++oc) {
            T* oplane = out + oc * ho * wo;
            if (bias) {
                for (int64_t i = 0; i < ho * wo; ++i) oplane[i] = bias[oc];
            }
            for (int64_t ic = 0; ic < ci; ++ic) {
                const T* xplane = x + ic * h * ww;
                for (int64_t m = 0; m < kh; ++m)
                    for (int64_t n = 0; n < kw; ++n) {
                        T wv = w[((oc * ci + ic) * kh + m) * kw + n];
                        if (wv == T(0)) continue;
                        for (int64_t oy = 0; oy < ho; ++oy) {
                            int64_t iy = oy * stride + m - pad;
                            if (iy < 0 || iy >= h) continue;
                            // valid ox range so that ix = ox*stride + n - pad is in [0, ww)
                            int64_t lo = 0;
                            while (lo < wo && lo * stride + n - pad < 0) ++lo;
                            int64_t hi = wo;
                            while (hi > lo && (hi - 1) * stride + n - pad >= ww) --hi;
                            const T* xrow = xplane + iy * ww + (lo * stride + n - pad);
                            T* orow = oplane + oy * wo;
                            if (stride == 1) {
                                for (int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * xrow[ox - lo];
                            } else {
                                for (int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * xrow[(ox - lo) * stride];
                            }
                        }
                    }
            }
        }
    });
}

} // namespace detail

// x: (c_in, h, w); weight: (c_out, c_in, kh, kw); bias: (c_out) or undefined.
// "valid" when pad == 0; same-padding via pad = k/2 for odd k.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride = 1, int64_t pad = 0) {
    if (x.rank() != 3 || weight.rank() != 4)
        throw ShapeError(cat("conv2d: expected (c,h,w) input and (co,ci,kh,kw) weight, got ",
                             shape_str(x.shape()), " and ", shape_str(weight.shape())));
    int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t co = weight.dim(0), wci = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (ci != wci)
        throw ShapeError(cat("conv2d: input channels ", ci, " != weight channels ", wci));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (h + 2 * pad < kh || w + 2 * pad < kw)
        throw ShapeError(cat("conv2d: input ", shape_str(x.shape()), " smaller than kernel ",
                             kh, "x", kw, " with pad ", pad));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co))
        throw ShapeError(cat("conv2d: bias shape ", shape_str(bias.shape()), " != (", co, ")"));
    int64_t ho = (h + 2 * pad - kh) / stride + 1;
    int64_t wo = (w + 2 * pad - kw) / stride + 1;

    Tensor<T> out(Shape{co, ho, wo});
    detail::conv2d_forward_kernel(x.data(), weight.data(), bias.defined() ? bias.data() : nullptr,
                                  out.data(), ci, h, w, co, kh, kw, ho, wo, stride, pad);

    bool rec = bias.defined() ? autodiff::recording<T>({&x, &weight, &bias})
                              : autodiff::recording<T>({&x, &weight});
    if (rec) {
        std::vector<std::shared_ptr<TensorImpl<T>>> parents{x.impl, weight.impl};
        if (bias.defined()) parents.push_back(bias.impl);
        autodiff::record(
            out, std::move(parents),
            [xi = x.impl, wi = weight.impl, bi = bias.defined() ? bias.impl : nullptr,
             xv = x.impl->data, wv = weight.impl->data, ci, h, w, co, kh, kw, ho, wo, stride,
             pad](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                if (wi->requires_grad) {
                    auto& gw = autodiff::grad_of(wi);
                    parallel_chunks(co, [&](int64_t oc0, int64_t oc1) {
                        for (int64_t oc = oc0; oc < oc1; ++oc)
                            for (int64_t ic = 0; ic < ci; ++ic)
                                for (int64_t m = 0; m < kh; ++m)
                                    for (int64_t n = 0; n < kw; ++n) {
                                        T acc = T(0);
                                        for (int64_t oy = 0; oy < ho; ++oy) {
                                            int64_t iy = oy * stride + m - pad;
                                            if (iy < 0 || iy >= h) continue;
                                            const T* grow = g.data() + (oc * ho + oy) * wo;
                                            const T* xrow = xv.data() + (ic * h + iy) * w;
                                            for (int64_t ox = 0; ox < wo; ++ox) {
                                                int64_t ix = ox * stride + n - pad;
                                                if (ix < 0 || ix >= w) continue;
                                                acc += grow[ox] * xrow[ix];
                                            }
                                        }
                                        gw[((oc * ci + ic) * kh + m) * kw + n] += acc;
                                    }
                    });
                }
                if (xi->requires_grad) {
                    auto& gx = autodiff::grad_of(xi);
                    parallel_chunks(ci, [&](int64_t ic0, int64_t ic1) {
                        for (int64_t ic = ic0; ic < ic1; ++ic)
                            for (int64_t oc = 0; oc < co; ++oc)
                                for (int64_t m = 0; m < kh; ++m)
                                    for (int64_t n = 0; n < kw; ++n) {
                                        T wvv = wv[((oc * ci + ic) * kh + m) * kw + n];
                                        if (wvv == T(0)) continue;
                                        for (int64_t oy = 0; oy < ho; ++oy) {
                                            int64_t iy = oy * stride + m - pad;
                                            if (iy < 0 || iy >= h) continue;
                                            const T* grow = g.data() + (oc * ho + oy) * wo;
                                            T* xrow = gx.data() + (ic * h + iy) * w;
                                            for (int64_t ox = 0; ox < wo; ++ox) {
                                                int64_t ix = ox * stride + n - pad;
                                                if (ix < 0 || ix >= w) continue;
                                                xrow[ix] += wvv * grow[ox];
                                            }
                                        }
                                    }
                    });
                }
                if (bi && bi->requires_grad) {
                    auto& gb = autodiff::grad_of(bi);
                    for (int64_t oc = 0; oc < co; ++oc) {
                        T acc = T(0);
                        for (int64_t i = 0; i < ho * wo; ++i) acc += g[oc * ho * wo + i];
                        gb[oc] += acc;
                    }
                }
            });
    }
    return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, int64_t stride = 1,
                 int64_t pad = 0) {
    return conv2d(x, weight, Tensor<T>(), stride, pad);
}

// zero-pad the spatial dims of (c, h, w) by p on every side
template <class T>
Tensor<T> pad2d(const Tensor<T>& x, int64_t p) {
    if (x.rank() != 3) throw ShapeError(cat("pad2d: expected (c,h,w), got ",
                                            shape_str(x.shape())));
    if (p < 0) throw ShapeError("pad2d: negative padding");
    if (p == 0) return x;
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t ho = h + 2 * p, wo = w + 2 * p;
    Tensor<T> out(Shape{c, ho, wo});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            std::memcpy(out.data() + (ch * ho + y + p) * wo + p, x.data() + (ch * h + y) * w,
                        static_cast<size_t>(w) * sizeof(T));
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl}, [xi = x.impl, c, h, w, ho, wo, p](TensorImpl<T>& self) {
            auto& g = autodiff::grad_of(xi);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t xx = 0; xx < w; ++xx)
                        g[(ch * h + y) * w + xx] += self.grad[(ch * ho + y + p) * wo + p + xx];
        });
    }
    return out;
}

// ------------------------------------------------------------------ pooling

template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t factor) {
    if (x.rank() != 3) throw ShapeError(cat("avg_pool2d: expected (c,h,w), got ",
                                            shape_str(x.shape())));
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (factor < 1 || h % factor != 0 || w % factor != 0)
        throw ShapeError(cat("avg_pool2d: dims ", h, "x", w, " not divisible by factor ", factor));
    int64_t ho = h / factor, wo = w / factor;
    Tensor<T> out(Shape{c, ho, wo});
    T inv = T(1) / static_cast<T>(factor * factor);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oy = 0; oy < ho; ++oy)
            for (int64_t ox = 0; ox < wo; ++ox) {
                T s = T(0);
                for (int64_t dy = 0; dy < factor; ++dy)
                    for (int64_t dx = 0; dx < factor; ++dx)
                        s += x.data()[(ch * h + oy * factor + dy) * w + ox * factor + dx];
                out.data()[(ch * ho + oy) * wo + ox] = s * inv;
            }
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl},
                         [xi = x.impl, c, h, w, ho, wo, factor, inv](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(xi);
                             for (int64_t ch = 0; ch < c; ++ch)
                                 for (int64_t oy = 0; oy < ho; ++oy)
                                     for (int64_t ox = 0; ox < wo; ++ox) {
                                         T gv = self.grad[(ch * ho + oy) * wo + ox] * inv;
                                         for (int64_t dy = 0; dy < factor; ++dy)
                                             for (int64_t dx = 0; dx < factor; ++dx)
                                                 g[(ch * h + oy * factor + dy) * w + ox * factor +
                                                   dx] += gv;
                                     }
                         });
    }
    return out;
}

template <class T>
Tensor<T> upsample_nearest2d(const Tensor<T>& x, int64_t factor) {
    if (x.rank() != 3) throw ShapeError(cat("upsample_nearest2d: expected (c,h,w), got ",
                                            shape_str(x.shape())));
    if (factor < 1) throw ShapeError("upsample_nearest2d: factor must be >= 1");
    int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    int64_t ho = h * factor, wo = w * factor;
    Tensor<T> out(Shape{c, ho, wo});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t oy = 0; oy < ho; ++oy) {
            const T* xrow = x.data() + (ch * h + oy / factor) * w;
            T* orow = out.data() + (ch * ho + oy) * wo;
            for (int64_t ox = 0; ox < wo; ++ox) orow[ox] = xrow[ox / factor];
        }
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl}, [xi = x.impl, c, h, w, ho, wo, factor](TensorImpl<T>& self) {
            auto& g = autodiff::grad_of(xi);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t oy = 0; oy < ho; ++oy) {
                    const T* grow = self.grad.data() + (ch * ho + oy) * wo;
                    T* xrow = g.data() + (ch * h + oy / factor) * w;
                    for (int64_t ox = 0; ox < wo; ++ox) xrow[ox / factor] += grow[ox];
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------- batchnorm

// Normalizes (N, C) over rows per channel when stats==nullptr (training with
// batch statistics), or uses the provided fixed mean/var (eval). batch_mean /
// batch_var, when non-null, receive the biased batch statistics.
template <class T>
Tensor<T> batchnorm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         T eps, const std::vector<T>* fixed_mean, const std::vector<T>* fixed_var,
                         std::vector<T>* batch_mean = nullptr,
                         std::vector<T>* batch_var = nullptr) {
    if (x.rank() != 2) throw ShapeError(cat("batchnorm: expected (N,C), got ",
                                            shape_str(x.shape())));
    int64_t n = x.dim(0), c = x.dim(1);
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError(cat("batchnorm: gamma/beta size != channels ", c));
    if (n < 1) throw ShapeError("batchnorm: empty batch");

    std::vector<T> mean(static_cast<size_t>(c), T(0)), var(static_cast<size_t>(c), T(0));
    bool use_batch = (fixed_mean == nullptr);
    if (use_batch) {
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += x.data()[i * c + j];
        for (auto& m : mean) m /= static_cast<T>(n);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < c; ++j) {
                T d = x.data()[i * c + j] - mean[static_cast<size_t>(j)];
                var[static_cast<size_t>(j)] += d * d;
            }
        for (auto& v : var) v /= static_cast<T>(n);
    } else {
        mean = *fixed_mean;
        var = *fixed_var;
    }
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;

    std::vector<T> inv_std(static_cast<size_t>(c));
    for (int64_t j = 0; j < c; ++j)
        inv_std[static_cast<size_t>(j)] = T(1) / std::sqrt(var[static_cast<size_t>(j)] + eps);

    Tensor<T> out(x.shape());
    std::vector<T> xhat(static_cast<size_t>(n * c));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) {
            T xh = (x.data()[i * c + j] - mean[static_cast<size_t>(j)]) *
                   inv_std[static_cast<size_t>(j)];
            xhat[static_cast<size_t>(i * c + j)] = xh;
            out.data()[i * c + j] = gamma.data()[j] * xh + beta.data()[j];
        }

    if (autodiff::recording<T>({&x, &gamma, &beta})) {
        autodiff::record(
            out, {x.impl, gamma.impl, beta.impl},
            [xi = x.impl, gi = gamma.impl, bi = beta.impl, xhat = std::move(xhat),
             inv_std = std::move(inv_std), gv = gamma.impl->data, n, c,
             use_batch](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                if (bi->requires_grad) {
                    auto& gb = autodiff::grad_of(bi);
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
                }
                if (gi->requires_grad) {
                    auto& gg = autodiff::grad_of(gi);
                    for (int64_t i = 0; i < n; ++i)
                        for (int64_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
                }
                if (xi->requires_grad) {
                    auto& gx = autodiff::grad_of(xi);
                    if (!use_batch) {
                        for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < c; ++j)
                                gx[i * c + j] += g[i * c + j] * gv[j] * inv_std[j];
                    } else {
                        std::vector<T> sum_g(static_cast<size_t>(c), T(0)),
                            sum_gx(static_cast<size_t>(c), T(0));
                        for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < c; ++j) {
                                sum_g[static_cast<size_t>(j)] += g[i * c + j];
                                sum_gx[static_cast<size_t>(j)] += g[i * c + j] * xhat[i * c + j];
                            }
                        T invn = T(1) / static_cast<T>(n);
                        for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < c; ++j) {
                                T t = g[i * c + j] - sum_g[static_cast<size_t>(j)] * invn -
                                      xhat[i * c + j] * sum_gx[static_cast<size_t>(j)] * invn;
                                gx[i * c + j] += gv[j] * inv_std[j] * t;
                            }
                    }
                }
            });
    }
    return out;
}

// ------------------------------------------------------------- pillar ops

// x: (P, Np, C); counts[p] valid rows per pillar; max over valid rows only.
template <class T>
Tensor<T> pillar_max(const Tensor<T>& x, const std::vector<int64_t>& counts) {
    if (x.rank() != 3) throw ShapeError(cat("pillar_max: expected (P,Np,C), got ",
                                            shape_str(x.shape())));
    int64_t p = x.dim(0), np = x.dim(1), c = x.dim(2);
    if (static_cast<int64_t>(counts.size()) != p)
        throw ShapeError(cat("pillar_max: counts size ", counts.size(), " != pillars ", p));
    Tensor<T> out(Shape{p, c});
    std::vector<int32_t> arg(static_cast<size_t>(p * c), 0);
    for (int64_t i = 0; i < p; ++i) {
        int64_t cnt = counts[static_cast<size_t>(i)];
        if (cnt < 1 || cnt > np)
            throw ValueError(cat("pillar_max: pillar ", i, " has invalid count ", cnt));
        for (int64_t j = 0; j < c; ++j) {
            T best = x.data()[(i * np) * c + j];
            int32_t bj = 0;
            for (int64_t r = 1; r < cnt; ++r) {
                T v = x.data()[(i * np + r) * c + j];
                if (v > best) {
                    best = v;
                    bj = static_cast<int32_t>(r);
                }
            }
            out.data()[i * c + j] = best;
            arg[static_cast<size_t>(i * c + j)] = bj;
        }
    }
    if (autodiff::recording<T>({&x})) {
        autodiff::record(out, {x.impl},
                         [xi = x.impl, arg = std::move(arg), p, np, c](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(xi);
                             for (int64_t i = 0; i < p; ++i)
                                 for (int64_t j = 0; j < c; ++j)
                                     g[(i * np + arg[static_cast<size_t>(i * c + j)]) * c + j] +=
                                         self.grad[i * c + j];
                         });
    }
    return out;
}

// features: (P, C) scattered into a zero (C, H, W) canvas at integer coords.
template <class T>
Tensor<T> pillar_scatter(const Tensor<T>& features, const std::vector<int32_t>& coord_x,
                         const std::vector<int32_t>& coord_y, int64_t h, int64_t w) {
    if (features.rank() != 2) throw ShapeError(cat("pillar_scatter: expected (P,C), got ",
                                                   shape_str(features.shape())));
    int64_t p = features.dim(0), c = features.dim(1);
    if (static_cast<int64_t>(coord_x.size()) != p || static_cast<int64_t>(coord_y.size()) != p)
        throw ShapeError("pillar_scatter: coord size mismatch");
    std::vector<char> occupied(static_cast<size_t>(h * w), 0);
    for (int64_t i = 0; i < p; ++i) {
        int32_t ix = coord_x[static_cast<size_t>(i)], iy = coord_y[static_cast<size_t>(i)];
        if (ix < 0 || ix >= w || iy < 0 || iy >= h)
            throw ShapeError(cat("pillar_scatter: coord (", ix, ",", iy, ") outside ", w, "x", h));
        char& occ = occupied[static_cast<size_t>(iy * w + ix)];
        if (occ) throw ValueError(cat("pillar_scatter: duplicate coord (", ix, ",", iy, ")"));
        occ = 1;
    }
    Tensor<T> out(Shape{c, h, w});
    for (int64_t i = 0; i < p; ++i) {
        int64_t cell = coord_y[static_cast<size_t>(i)] * w + coord_x[static_cast<size_t>(i)];
        for (int64_t j = 0; j < c; ++j) out.data()[j * h * w + cell] = features.data()[i * c + j];
    }
    if (autodiff::recording<T>({&features})) {
        autodiff::record(out, {features.impl},
                         [fi = features.impl, coord_x, coord_y, h, w, p, c](TensorImpl<T>& self) {
                             auto& g = autodiff::grad_of(fi);
                             for (int64_t i = 0; i < p; ++i) {
                                 int64_t cell = coord_y[static_cast<size_t>(i)] * w +
                                                coord_x[static_cast<size_t>(i)];
                                 for (int64_t j = 0; j < c; ++j)
                                     g[i * c + j] += self.grad[j * h * w + cell];
                             }
                         });
    }
    return out;
}

// Lift-splat: accumulate prob-weighted features into BEV cells.
//   probs: (D, hf, wf) depth distribution per pixel
//   feats: (C, hf, wf) per-pixel features
//   cells: D*hf*wf flattened BEV cell index per (depth, pixel), -1 = outside
template <class T>
Tensor<T> lift_splat(const Tensor<T>& probs, const Tensor<T>& feats,
                     const std::vector<int32_t>& cells, int64_t h, int64_t w) {
    if (probs.rank() != 3 || feats.rank() != 3)
        throw ShapeError(cat("lift_splat: expected rank-3 probs/feats, got ",
                             shape_str(probs.shape()), " and ", shape_str(feats.shape())));
    int64_t d = probs.dim(0), hf = probs.dim(1), wf = probs.dim(2);
    int64_t c = feats.dim(0);
    if (feats.dim(1) != hf || feats.dim(2) != wf)
        throw ShapeError(cat("lift_splat: pixel grids differ ", shape_str(probs.shape()), " vs ",
                             shape_str(feats.shape())));
    int64_t npix = hf * wf;
    if (static_cast<int64_t>(cells.size()) != d * npix)
        throw ShapeError("lift_splat: cell map size mismatch");
    Tensor<T> out(Shape{c, h, w});
    const T* pp = probs.data();
    const T* pf = feats.data();
    T* po = out.data();
    for (int64_t dd = 0; dd < d; ++dd)
        for (int64_t px = 0; px < npix; ++px) {
            int32_t cell = cells[static_cast<size_t>(dd * npix + px)];
            if (cell < 0) continue;
            T pr = pp[dd * npix + px];
            for (int64_t ch = 0; ch < c; ++ch) po[ch * h * w + cell] += pr * pf[ch * npix + px];
        }
    if (autodiff::recording<T>({&probs, &feats})) {
        autodiff::record(
            out, {probs.impl, feats.impl},
            [pi = probs.impl, fi = feats.impl, pv = probs.impl->data, fv = feats.impl->data,
             cells, d, npix, c, h, w](TensorImpl<T>& self) {
                const std::vector<T>& g = self.grad;
                if (pi->requires_grad) {
                    auto& gp = autodiff::grad_of(pi);
                    for (int64_t dd = 0; dd < d; ++dd)
                        for (int64_t px = 0; px < npix; ++px) {
                            int32_t cell = cells[static_cast<size_t>(dd * npix + px)];
                            if (cell < 0) continue;
                            T acc = T(0);
                            for (int64_t ch = 0; ch < c; ++ch)
                                acc += g[ch * h * w + cell] * fv[ch * npix + px];
                            gp[dd * npix + px] += acc;
                        }
                }
                if (fi->requires_grad) {
                    auto& gf = autodiff::grad_of(fi);
                    for (int64_t dd = 0; dd < d; ++dd)
                        for (int64_t px = 0; px < npix; ++px) {
                            int32_t cell = cells[static_cast<size_t>(dd * npix + px)];
                            if (cell < 0) continue;
                            T pr = pv[dd * npix + px];
                            for (int64_t ch = 0; ch < c; ++ch)
                                gf[ch * npix + px] += pr * g[ch * h * w + cell];
                        }
                }
            });
    }
    return out;
}

} // namespace kf
