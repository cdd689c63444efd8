#pragma once

#include <cmath>

#include "kanfuse/tensor.hpp"

namespace kf {

// Ground-plane grid shared by both sensor branches, the detection head and
// the synthetic scenes. Cells are square; (ix, iy) index (x, y) world axes.
struct BevGridConfig {
    double x_min = 4.0, x_max = 64.0;
    double y_min = -30.0, y_max = 30.0;
    double cell = 0.625;

    int64_t width() const { return static_cast<int64_t>(std::llround((x_max - x_min) / cell)); }
    int64_t height() const { return static_cast<int64_t>(std::llround((y_max - y_min) / cell)); }

    void validate() const {
        if (!(x_min < x_max) || !(y_min < y_max) || cell <= 0)
            throw ValueError("bev grid: empty extent");
        if (std::abs(width() * cell - (x_max - x_min)) > 1e-9 ||
            std::abs(height() * cell - (y_max - y_min)) > 1e-9)
            throw ValueError("bev grid: extent is not a whole number of cells");
    }

    bool cell_of(double x, double y, int64_t& ix, int64_t& iy) const {
        if (x < x_min || x >= x_max || y < y_min || y >= y_max) return false;
        ix = static_cast<int64_t>(std::floor((x - x_min) / cell));
        iy = static_cast<int64_t>(std::floor((y - y_min) / cell));
        if (ix < 0 || ix >= width() || iy < 0 || iy >= height()) return false;
        return true;
    }
};

template <class T>
struct BevFeature {
    enum class Source { lidar, camera, fused };

    Tensor<T> data; // (c, h, w)
    Source source = Source::lidar;

    BevFeature() = default;
    BevFeature(Tensor<T> d, Source s) : data(std::move(d)), source(s) {
        if (data.rank() != 3)
            throw ShapeError(cat("bev feature: expected (c,h,w), got ", shape_str(data.shape())));
    }

    int64_t channels() const { return data.dim(0); }
    int64_t height() const { return data.dim(1); }
    int64_t width() const { return data.dim(2); }
};

} // namespace kf
