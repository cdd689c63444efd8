#pragma once

#include <unordered_map>

#include "kanfuse/bev.hpp"
#include "kanfuse/kan.hpp"

namespace kf {

// N x 4 rows of (x, y, z, intensity); stored as f32, matching the on-disk
// KFPC format so dataset round-trips are bit-exact.
struct PointCloud {
    std::vector<float> pts;

    int64_t size() const { return static_cast<int64_t>(pts.size()) / 4; }
    const float* row(int64_t i) const { return pts.data() + i * 4; }
    void push(float x, float y, float z, float intensity) {
        pts.insert(pts.end(), {x, y, z, intensity});
    }
};

struct PillarConfig {
    int64_t max_pillars = 4096;
    int64_t max_points = 24;
};

// Voxelized pillars with the 9-feature PointPillars decoration per point:
// (x, y, z, intensity, xc, yc, zc, xp, yp) where (xc,yc,zc) are offsets to
// the pillar's point mean and (xp,yp) to the cell center.
struct PillarGrid {
    int64_t n_pillars = 0;
    int64_t n_point_slots = 0;      // Np
    std::vector<double> features;   // P * Np * 9, zero padded
    std::vector<int32_t> coord_x, coord_y;
    std::vector<int64_t> counts;

    static constexpr int64_t kFeatureDim = 9;
};

inline PillarGrid pillarize(const PointCloud& cloud, const BevGridConfig& grid,
                            const PillarConfig& cfg, uint64_t seed) {
    grid.validate();
    if (cfg.max_pillars < 1 || cfg.max_points < 1)
        throw ValueError("pillarize: max_pillars/max_points must be positive");
    int64_t w = grid.width();

    std::unordered_map<int64_t, std::vector<int64_t>> bins; // cell -> point indices
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const float* p = cloud.row(i);
        int64_t ix, iy;
        if (!grid.cell_of(p[0], p[1], ix, iy)) continue;
        bins[iy * w + ix].push_back(i);
    }

    // rank pillars by point count, ties by cell index; keep the top P
    std::vector<std::pair<int64_t, const std::vector<int64_t>*>> cells;
    cells.reserve(bins.size());
    for (const auto& [cell, pts] : bins) cells.emplace_back(cell, &pts);
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
        if (a.second->size() != b.second->size()) return a.second->size() > b.second->size();
        return a.first < b.first;
    });
    if (static_cast<int64_t>(cells.size()) > cfg.max_pillars) cells.resize(static_cast<size_t>(cfg.max_pillars));
    // stable output order: by cell index
    std::sort(cells.begin(), cells.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    PillarGrid out;
    out.n_pillars = static_cast<int64_t>(cells.size());
    out.n_point_slots = cfg.max_points;
    out.features.assign(static_cast<size_t>(out.n_pillars * cfg.max_points * PillarGrid::kFeatureDim), 0.0);
    out.coord_x.resize(static_cast<size_t>(out.n_pillars));
    out.coord_y.resize(static_cast<size_t>(out.n_pillars));
    out.counts.resize(static_cast<size_t>(out.n_pillars));

    for (int64_t pi = 0; pi < out.n_pillars; ++pi) {
        int64_t cell = cells[static_cast<size_t>(pi)].first;
        const std::vector<int64_t>& idx_all = *cells[static_cast<size_t>(pi)].second;
        int32_t ix = static_cast<int32_t>(cell % w), iy = static_cast<int32_t>(cell / w);
        out.coord_x[static_cast<size_t>(pi)] = ix;
        out.coord_y[static_cast<size_t>(pi)] = iy;

        // seeded subsample without replacement when over capacity
        std::vector<int64_t> idx = idx_all;
        if (static_cast<int64_t>(idx.size()) > cfg.max_points) {
            Rng rng(derive_seed(seed, static_cast<uint64_t>(cell)));
            for (int64_t i = 0; i < cfg.max_points; ++i) {
                int64_t j = i + rng.uniform_int(static_cast<int64_t>(idx.size()) - i);
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
            }
            idx.resize(static_cast<size_t>(cfg.max_points));
            std::sort(idx.begin(), idx.end());
        }
        int64_t n = static_cast<int64_t>(idx.size());
        out.counts[static_cast<size_t>(pi)] = n;

        double mx = 0, my = 0, mz = 0;
        for (int64_t i : idx) {
            const float* p = cloud.row(i);
            mx += p[0];
            my += p[1];
            mz += p[2];
        }
        mx /= n;
        my /= n;
        mz /= n;
        double cx = grid.x_min + (ix + 0.5) * grid.cell;
        double cy = grid.y_min + (iy + 0.5) * grid.cell;

        for (int64_t r = 0; r < n; ++r) {
            const float* p = cloud.row(idx[static_cast<size_t>(r)]);
            double* f = out.features.data() +
                        (pi * cfg.max_points + r) * PillarGrid::kFeatureDim;
            f[0] = p[0];
            f[1] = p[1];
            f[2] = p[2];
            f[3] = p[3];
            f[4] = p[0] - mx;
            f[5] = p[1] - my;
            f[6] = p[2] - mz;
            f[7] = p[0] - cx;
            f[8] = p[1] - cy;
        }
    }
    return out;
}

// Two stacked pillar feature nets; the linear layers are KAN layers when
// use_kan is on, each followed by batchnorm, with a masked max over the
// valid points after the first stage. An input batchnorm precedes the
// first layer so raw metric decorations land inside the spline domain.
template <class T>
struct PointEncoder {
    int64_t c_hidden = 32, c_out = 64;
    BatchNorm<T> bn_in;
    KanOrLinear<T> stage1;
    BatchNorm<T> bn1;
    KanOrLinear<T> stage2;
    BatchNorm<T> bn2;

    PointEncoder() = default;
    PointEncoder(int64_t hidden, int64_t out, bool use_kan, const SplineGrid& g, Rng& rng)
        : c_hidden(hidden), c_out(out), bn_in(PillarGrid::kFeatureDim),
          stage1(KanOrLinear<T>::make(use_kan, PillarGrid::kFeatureDim, hidden, g, rng)),
          bn1(hidden), stage2(KanOrLinear<T>::make(use_kan, hidden, out, g, rng)), bn2(out) {}

    // -> (c_out, h, w) lidar BEV feature
    Tensor<T> forward(const PillarGrid& pillars, int64_t h, int64_t w, bool training,
                      bool update_running = true) {
        if (pillars.n_pillars == 0) return Tensor<T>::zeros({c_out, h, w});
        int64_t p = pillars.n_pillars, np = pillars.n_point_slots;

        Tensor<T> x(Shape{p * np, PillarGrid::kFeatureDim});
        for (int64_t i = 0; i < x.numel(); ++i)
            x.data()[i] = static_cast<T>(pillars.features[static_cast<size_t>(i)]);

        Tensor<T> h1 = bn1.forward_rows(stage1.forward(bn_in.forward_rows(x, training, update_running)),
                                        training, update_running);
        Tensor<T> pooled = pillar_max(reshape(h1, {p, np, c_hidden}), pillars.counts);
        Tensor<T> h2 = bn2.forward_rows(stage2.forward(pooled), training, update_running);
        return pillar_scatter(h2, pillars.coord_x, pillars.coord_y, h, w);
    }

    void params(ParamMap<T>& m, const std::string& prefix) {
        bn_in.params(m, prefix + ".bn_in");
        stage1.params(m, prefix + ".pfn1");
        bn1.params(m, prefix + ".bn1");
        stage2.params(m, prefix + ".pfn2");
        bn2.params(m, prefix + ".bn2");
    }
};

} // namespace kf
