#pragma once

#include "kanfuse/camera.hpp"
#include "kanfuse/geometry.hpp"
#include "kanfuse/pillars.hpp"

namespace kf {

struct LidarConfig {
    double az_min_deg = -55.0, az_max_deg = 55.0;
    int az_steps = 440;
    double el_min_deg = -22.0, el_max_deg = 1.0;
    int el_steps = 46;
    double range_noise = 0.02; // meters, sigma
    double max_range = 90.0;
};

// Scene-set generation knobs. class_mix and dist_mix are probabilities over
// {car, truck, pedestrian} and the three distance bands (<40, 40-50, >50 m).
struct SceneSetConfig {
    int64_t scene_count = 40;
    double train_frac = 0.8;
    std::array<double, 3> class_mix{0.5, 0.25, 0.25};
    std::array<double, 3> dist_mix{0.55, 0.25, 0.2};
    int min_objects = 3, max_objects = 8;
    double occluder_density = 0.5; // probability a scene gets a gantry
    bool hotspot = false;
    double hotspot_magnitude = 7.0;
    double feature_noise = 0.05;
    int64_t cam_channels = 8;
    int64_t cam_image = 128;
    double depth_min = 2.0, depth_max = 80.0;
    int64_t depth_bins = 32;
    LidarConfig lidar;

    void validate() const {
        auto sums_to_one = [](const std::array<double, 3>& p) {
            return std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-9 && p[0] >= 0 && p[1] >= 0 &&
                   p[2] >= 0;
        };
        if (!sums_to_one(class_mix)) throw ConfigError("scene config: class_mix must sum to 1");
        if (!sums_to_one(dist_mix)) throw ConfigError("scene config: dist_mix must sum to 1");
        if (scene_count < 1 || min_objects < 0 || max_objects < min_objects)
            throw ConfigError("scene config: bad object counts");
        if (train_frac < 0 || train_frac > 1) throw ConfigError("scene config: bad train_frac");
    }
};

// One synthetic roadside scene: ground-truth boxes, static occluders, the
// sensor rig, and the per-box statistics filled in by the ray cast.
struct Scene {
    uint64_t seed = 0;
    BevGridConfig bev;
    std::vector<Box3D> boxes;
    std::vector<Box3D> occluders;
    std::array<double, 3> lidar_pos{0.0, 0.0, 6.0};
    CameraModel cam;
    std::vector<int> point_counts;  // per box, after raycast
    std::vector<double> occlusion;  // per box shadowed-surface ratio, after raycast
};

// deterministic fixed rig shared by every scene of a set
CameraModel make_roadside_camera(const SceneSetConfig& cfg);

Scene generate_scene(uint64_t seed, const SceneSetConfig& cfg, const BevGridConfig& bev);

// First-hit ray cast over the azimuth/elevation grid; fills per-box point
// counts (membership test over the emitted noisy cloud) and occlusion
// fractions (1 - first-hit rays / unobstructed rays).
PointCloud raycast_lidar(Scene& scene, const LidarConfig& cfg);

// (c0, H, W) synthetic camera features: textured background, class-colored
// gaussian blobs at projected box centers, and in hotspot mode one
// high-magnitude blob near the image bottom uncorrelated with any object.
Tensor<float> render_camera_features(const Scene& scene, const SceneSetConfig& cfg);

double box_distance(const Scene& scene, const Box3D& b); // ground distance to the rig

} // namespace kf
