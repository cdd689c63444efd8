#pragma once

#include <cmath>
#include <vector>

#include "kanfuse/common.hpp"

namespace kf {

// Uniform B-spline grid over [lower, upper] with `grid_count` interior cells
// and `order`-fold uniform extension at each end. Knots t_i = lower + (i -
// order) * h for i in [0, grid_count + 2*order], giving grid_count + order
// basis functions.
struct SplineGrid {
    double lower = -1.0, upper = 1.0;
    int grid_count = 5; // G
    int order = 3;      // k
    std::vector<double> knots;

    SplineGrid() { rebuild(); }
    SplineGrid(double lo, double hi, int g, int k) : lower(lo), upper(hi), grid_count(g), order(k) {
        rebuild();
    }

    void rebuild() {
        if (!(lower < upper)) throw ValueError(cat("spline grid: lower ", lower, " >= upper ", upper));
        if (grid_count < 1) throw ValueError("spline grid: need at least one cell");
        if (order < 0) throw ValueError("spline grid: negative order");
        double h = (upper - lower) / grid_count;
        knots.resize(static_cast<size_t>(grid_count + 2 * order + 1));
        for (int i = 0; i <= grid_count + 2 * order; ++i) {
            int j = i - order;
            if (j <= 0)
                knots[static_cast<size_t>(i)] = lower + j * h;
            else if (j >= grid_count)
                knots[static_cast<size_t>(i)] = upper + (j - grid_count) * h;
            else // interior: lerp keeps both domain ends exact
                knots[static_cast<size_t>(i)] =
                    ((grid_count - j) * lower + j * upper) / grid_count;
        }
        for (size_t i = 1; i < knots.size(); ++i)
            if (knots[i] < knots[i - 1]) throw ValueError("spline grid: non-monotone knots");
    }

    int basis_count() const { return grid_count + order; }
    double cell_width() const { return (upper - lower) / grid_count; }

    double clamp_x(double x) const { return std::min(upper, std::max(lower, x)); }

    // cell index in [0, G): x == upper maps to the last cell
    int cell_of(double x_clamped) const {
        int c = static_cast<int>(std::floor((x_clamped - lower) / cell_width()));
        if (c < 0) c = 0;
        if (c >= grid_count) c = grid_count - 1;
        return c;
    }
};

constexpr int kMaxSplineOrder = 11;

// Nonzero basis window at x: vals[j] = B_{first+j, order}(clamp(x)) for
// j in [0, order], from one de Boor triangle; no heap traffic on the hot
// path. When dvals is non-null it receives d/dx of the same window, zero
// outside the domain (the clamp kills the spline gradient there).
inline void bspline_window(const SplineGrid& g, double x, int& first, double* vals,
                           double* dvals = nullptr) {
    int k = g.order;
    if (k > kMaxSplineOrder) throw ValueError(cat("spline order ", k, " exceeds limit"));
    double xc = g.clamp_x(x);
    int cell = g.cell_of(xc);
    int span = cell + k; // knot span index: t_span <= x < t_span+1
    first = cell;        // index of the first nonzero basis function

    double left[kMaxSplineOrder + 2], right[kMaxSplineOrder + 2];
    double km1[kMaxSplineOrder + 1]; // order k-1 row of the triangle
    vals[0] = 1.0;
    for (int d = 1; d <= k; ++d) {
        if (d == k && dvals)
            for (int i = 0; i < k; ++i) km1[i] = vals[i];
        left[d] = xc - g.knots[static_cast<size_t>(span + 1 - d)];
        right[d] = g.knots[static_cast<size_t>(span + d)] - xc;
        double saved = 0.0;
        for (int r = 0; r < d; ++r) {
            double temp = vals[r] / (right[r + 1] + left[d - r]);
            vals[r] = saved + right[r + 1] * temp;
            saved = left[d - r] * temp;
        }
        vals[d] = saved;
    }

    if (dvals) {
        if (k == 0) {
            dvals[0] = 0.0;
            return;
        }
        // km1[r] = B_{cell+1+r, k-1}; uniform knots give t_{i+k}-t_i = k*h, so
        // B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h
        double invh = (x >= g.lower && x <= g.upper) ? 1.0 / g.cell_width() : 0.0;
        for (int j = 0; j <= k; ++j) {
            double a = (j == 0) ? 0.0 : km1[j - 1];
            double b = (j == k) ? 0.0 : km1[j];
            dvals[j] = (a - b) * invh;
        }
    }
}

// Dense basis vector of length basis_count(); the public contract. x outside
// the domain is clamped first.
inline std::vector<double> bspline_basis(const SplineGrid& g, double x) {
    if (!std::isfinite(x)) throw ValueError("bspline_basis: non-finite input");
    std::vector<double> out(static_cast<size_t>(g.basis_count()), 0.0);
    std::vector<double> window(static_cast<size_t>(g.order + 1));
    int first = 0;
    bspline_window(g, x, first, window.data());
    for (int i = 0; i <= g.order; ++i) out[static_cast<size_t>(first + i)] = window[static_cast<size_t>(i)];
    return out;
}

} // namespace kf
