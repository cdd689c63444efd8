#pragma once

#include "kanfuse/config.hpp"
#include "kanfuse/tensor_io.hpp"

namespace kf {

// One scene plus its sensor readings, as stored on disk.
struct SceneRecord {
    Scene scene;
    PointCloud cloud;
    Tensor<float> cam_features; // (c0, H, W)
};

struct Dataset {
    uint64_t master_seed = 0;
    std::string config_hash;
    BevGridConfig bev;
    SceneSetConfig cfg;
    std::vector<SceneRecord> scenes;
    std::vector<int64_t> train_ids, val_ids;

    const std::vector<int64_t>& split(const std::string& name) const {
        if (name == "train") return train_ids;
        if (name == "val") return val_ids;
        throw ValueError(cat("dataset: unknown split '", name, "'"));
    }
};

// KFPC binary point cloud: magic "KFPC", u64 N, then N x 4 LE f32 rows.
void write_kfpc(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_kfpc(const std::filesystem::path& path);

// Derives per-scene seeds from the master seed, casts rays and renders
// camera features; fully deterministic.
Dataset generate_dataset(uint64_t master_seed, const SceneSetConfig& cfg,
                         const BevGridConfig& bev, const std::string& cfg_hash = "");

// Directory layout: manifest.json + scenes/scene_%05d.{kfpc,kft,json}.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

} // namespace kf
