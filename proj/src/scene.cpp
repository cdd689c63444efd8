#include "kanfuse/scene.hpp"

namespace kf {

namespace {

constexpr double kPi = 3.14159265358979323846;

// class templates: {w, l, h} mean and jitter
struct ClassShape {
    double w, l, h, jw, jl, jh;
};
const ClassShape kShapes[kNumClasses] = {
    {1.9, 4.5, 1.6, 0.15, 0.40, 0.10},  // car
    {2.55, 9.0, 3.4, 0.10, 1.50, 0.30}, // truck
    {0.7, 0.7, 1.75, 0.08, 0.08, 0.10}, // pedestrian
};

// per-class camera feature signatures over 8 channels
const double kClassChannel[kNumClasses][8] = {
    {1.0, 0.0, 0.1, 0.7, 0.0, 0.5, 0.0, 0.2},
    {0.1, 1.0, 0.0, 0.6, 0.1, 0.0, 0.6, 0.0},
    {0.0, 0.1, 1.0, 0.0, 0.7, 0.1, 0.0, 0.5},
};

int sample_category(Rng& rng, const std::array<double, 3>& mix) {
    double u = rng.uniform();
    if (u < mix[0]) return 0;
    if (u < mix[0] + mix[1]) return 1;
    return 2;
}

} // namespace

double box_distance(const Scene& scene, const Box3D& b) {
    double dx = b.x - scene.lidar_pos[0], dy = b.y - scene.lidar_pos[1];
    return std::sqrt(dx * dx + dy * dy);
}

CameraModel make_roadside_camera(const SceneSetConfig& cfg) {
    CameraModel cam;
    cam.img_w = cfg.cam_image;
    cam.img_h = cfg.cam_image;
    cam.depth_min = cfg.depth_min;
    cam.depth_max = cfg.depth_max;
    cam.depth_bins = cfg.depth_bins;

    double f = 0.85 * static_cast<double>(cfg.cam_image);
    cam.intrinsic = {f, 0, 0.5 * cfg.cam_image, 0, f, 0.45 * cfg.cam_image, 0, 0, 1};

    // rig at (1, 0, 6), optical axis down +x with a 9 degree downward pitch;
    // camera x right (-y world), camera y down
    double pitch = 9.0 * kPi / 180.0;
    std::array<double, 3> center{1.0, 0.0, 6.0};
    std::array<double, 3> zc{std::cos(pitch), 0.0, -std::sin(pitch)};
    std::array<double, 3> xc{0.0, -1.0, 0.0};
    std::array<double, 3> yc{zc[1] * xc[2] - zc[2] * xc[1], zc[2] * xc[0] - zc[0] * xc[2],
                             zc[0] * xc[1] - zc[1] * xc[0]};
    cam.rotation = {xc[0], xc[1], xc[2], yc[0], yc[1], yc[2], zc[0], zc[1], zc[2]};
    for (int i = 0; i < 3; ++i)
        cam.translation[static_cast<size_t>(i)] =
            -(cam.rotation[static_cast<size_t>(i * 3)] * center[0] +
              cam.rotation[static_cast<size_t>(i * 3 + 1)] * center[1] +
              cam.rotation[static_cast<size_t>(i * 3 + 2)] * center[2]);
    cam.validate();
    return cam;
}

Scene generate_scene(uint64_t seed, const SceneSetConfig& cfg, const BevGridConfig& bev) {
    cfg.validate();
    bev.validate();
    Scene scene;
    scene.seed = seed;
    scene.bev = bev;
    scene.lidar_pos = {0.0, 0.0, 6.0};
    scene.cam = make_roadside_camera(cfg);

    Rng rng(derive_seed(seed, 0xA11CE));
    int n_obj = cfg.min_objects;
    if (cfg.max_objects > cfg.min_objects)
        n_obj += static_cast<int>(rng.uniform_int(cfg.max_objects - cfg.min_objects + 1));

    double margin = 3.0;
    double max_r = std::sqrt(bev.x_max * bev.x_max + std::max(bev.y_max * bev.y_max,
                                                              bev.y_min * bev.y_min));
    for (int i = 0; i < n_obj; ++i) {
        int cls = sample_category(rng, cfg.class_mix);
        const ClassShape& sh = kShapes[cls];
        Box3D b;
        b.cls = cls;
        b.w = std::max(0.3, sh.w + sh.jw * rng.normal());
        b.l = std::max(0.3, sh.l + sh.jl * rng.normal());
        b.h = std::max(0.5, sh.h + sh.jh * rng.normal());
        b.z = b.h * 0.5;
        b.yaw = wrap_angle(rng.uniform(-kPi, kPi));

        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            int band = sample_category(rng, cfg.dist_mix);
            double r;
            if (band == 0)
                r = rng.uniform(std::max(8.0, bev.x_min + margin), 38.0);
            else if (band == 1)
                r = rng.uniform(40.0, 50.0);
            else
                r = rng.uniform(51.0, std::min(max_r - margin, 62.0));
            double theta = rng.uniform(-0.42 * kPi, 0.42 * kPi);
            b.x = r * std::cos(theta);
            b.y = r * std::sin(theta);
            if (b.x < bev.x_min + margin || b.x > bev.x_max - margin ||
                b.y < bev.y_min + margin || b.y > bev.y_max - margin)
                continue;
            bool overlap = false;
            for (const Box3D& other : scene.boxes)
                if (bev_iou(b, other) > 1e-6) overlap = true;
            if (!overlap) placed = true;
        }
        if (placed) scene.boxes.push_back(b);
    }

    if (rng.uniform() < cfg.occluder_density) {
        // gantry: a crossbeam spanning part of the road plus two posts
        double gx = rng.uniform(9.0, 18.0);
        double gy = rng.uniform(-10.0, 2.0);
        Box3D beam;
        beam.x = gx;
        beam.y = gy;
        beam.z = 4.2;
        beam.l = 0.5;
        beam.w = 12.0;
        beam.h = 2.2;
        beam.yaw = 0.0;
        scene.occluders.push_back(beam);
        for (double side : {-6.0, 6.0}) {
            Box3D post;
            post.x = gx;
            post.y = gy + side;
            post.z = 1.6;
            post.l = 0.5;
            post.w = 0.5;
            post.h = 3.2;
            post.yaw = 0.0;
            scene.occluders.push_back(post);
        }
    }

    scene.point_counts.assign(scene.boxes.size(), 0);
    scene.occlusion.assign(scene.boxes.size(), 0.0);
    return scene;
}

PointCloud raycast_lidar(Scene& scene, const LidarConfig& cfg) {
    const std::array<double, 3>& origin = scene.lidar_pos;
    size_t n_targets = scene.boxes.size();
    std::vector<int> first_hits(n_targets, 0); // full-scene first-hit counts
    std::vector<int> free_hits(n_targets, 0);  // single-box unobstructed counts
    PointCloud cloud;

    double az0 = cfg.az_min_deg * kPi / 180.0, az1 = cfg.az_max_deg * kPi / 180.0;
    double el0 = cfg.el_min_deg * kPi / 180.0, el1 = cfg.el_max_deg * kPi / 180.0;

    for (int ai = 0; ai < cfg.az_steps; ++ai) {
        double az = az0 + (az1 - az0) * (ai + 0.5) / cfg.az_steps;
        for (int ei = 0; ei < cfg.el_steps; ++ei) {
            double el = el0 + (el1 - el0) * (ei + 0.5) / cfg.el_steps;
            std::array<double, 3> dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                      std::sin(el)};
            uint64_t ridx = static_cast<uint64_t>(ai) * static_cast<uint64_t>(cfg.el_steps) +
                            static_cast<uint64_t>(ei);
            Rng ray_rng(derive_seed(scene.seed ^ 0x11DA2ULL, ridx));
            double range_noise = ray_rng.normal(0.0, cfg.range_noise);
            double intensity_noise = ray_rng.normal(0.0, 1.0);

            // unobstructed hits per box, independent of the rest of the scene
            double t_hit;
            for (size_t b = 0; b < n_targets; ++b)
                if (ray_box_intersect(scene.boxes[b], origin, dir, t_hit) &&
                    t_hit <= cfg.max_range)
                    ++free_hits[b];

            // full-scene first hit: targets, occluders, ground plane
            double best_t = cfg.max_range;
            int best_kind = -1; // 0..n_targets-1 target, -2 occluder, -3 ground
            for (size_t b = 0; b < n_targets; ++b)
                if (ray_box_intersect(scene.boxes[b], origin, dir, t_hit) && t_hit < best_t) {
                    best_t = t_hit;
                    best_kind = static_cast<int>(b);
                }
            for (const Box3D& occ : scene.occluders)
                if (ray_box_intersect(occ, origin, dir, t_hit) && t_hit < best_t) {
                    best_t = t_hit;
                    best_kind = -2;
                }
            if (dir[2] < -1e-9) {
                double t_ground = -origin[2] / dir[2];
                if (t_ground < best_t) {
                    best_t = t_ground;
                    best_kind = -3;
                }
            }
            if (best_kind == -1) continue;
            if (best_kind >= 0) ++first_hits[static_cast<size_t>(best_kind)];

            double t_noisy = best_t + range_noise;
            double px = origin[0] + t_noisy * dir[0];
            double py = origin[1] + t_noisy * dir[1];
            double pz = origin[2] + t_noisy * dir[2];

            double intensity;
            if (best_kind >= 0) {
                const double base[kNumClasses] = {0.8, 0.6, 0.35};
                intensity = base[scene.boxes[static_cast<size_t>(best_kind)].cls];
            } else if (best_kind == -2) {
                intensity = 0.5;
            } else {
                intensity = 0.15;
                // keep only ground returns inside the BEV extent
                if (px < scene.bev.x_min || px >= scene.bev.x_max || py < scene.bev.y_min ||
                    py >= scene.bev.y_max)
                    continue;
            }
            intensity = std::min(1.0, std::max(0.0, intensity + 0.05 * intensity_noise));
            cloud.push(static_cast<float>(px), static_cast<float>(py), static_cast<float>(pz),
                       static_cast<float>(intensity));
        }
    }

    // point counts by membership over the emitted (noisy) cloud
    scene.point_counts.assign(n_targets, 0);
    for (int64_t i = 0; i < cloud.size(); ++i) {
        const float* p = cloud.row(i);
        for (size_t b = 0; b < n_targets; ++b)
            if (point_in_box(scene.boxes[b], p[0], p[1], p[2]))
                ++scene.point_counts[b];
    }
    scene.occlusion.assign(n_targets, 0.0);
    for (size_t b = 0; b < n_targets; ++b) {
        if (free_hits[b] > 0) {
            double occ = 1.0 - static_cast<double>(first_hits[b]) / free_hits[b];
            scene.occlusion[b] = std::min(1.0, std::max(0.0, occ));
        }
    }
    return cloud;
}

Tensor<float> render_camera_features(const Scene& scene, const SceneSetConfig& cfg) {
    int64_t c0 = cfg.cam_channels, hh = scene.cam.img_h, ww = scene.cam.img_w;
    Tensor<float> feat = Tensor<float>::zeros({c0, hh, ww});
    Rng rng(derive_seed(scene.seed ^ 0xCA3E7ULL, 0));

    // low-frequency textured background plus per-pixel noise
    for (int64_t ch = 0; ch < c0; ++ch) {
        double fx = rng.uniform(0.5, 2.5), fy = rng.uniform(0.5, 2.5);
        double phase = rng.uniform(0.0, 2.0 * kPi);
        for (int64_t y = 0; y < hh; ++y)
            for (int64_t x = 0; x < ww; ++x) {
                double u = static_cast<double>(x) / ww, v = static_cast<double>(y) / hh;
                double bg = 0.06 * std::sin(2.0 * kPi * (fx * u + fy * v) + phase) +
                            cfg.feature_noise * rng.normal();
                feat.data()[(ch * hh + y) * ww + x] = static_cast<float>(bg);
            }
    }

    for (const Box3D& b : scene.boxes) {
        auto proj = scene.cam.project({b.x, b.y, b.z});
        if (!proj) continue; // behind the camera
        double u = (*proj)[0], v = (*proj)[1], depth = (*proj)[2];
        if (u < 0 || u >= static_cast<double>(ww) || v < 0 || v >= static_cast<double>(hh))
            continue;
        double fpx = scene.cam.intrinsic[0];
        double sigma = std::min(static_cast<double>(hh) / 6.0,
                                std::max(1.5, 0.35 * fpx * std::max(b.w, b.l) / depth));
        int64_t rad = static_cast<int64_t>(3.0 * sigma) + 1;
        for (int64_t dy = -rad; dy <= rad; ++dy)
            for (int64_t dx = -rad; dx <= rad; ++dx) {
                int64_t yy = static_cast<int64_t>(v) + dy, xx = static_cast<int64_t>(u) + dx;
                if (yy < 0 || yy >= hh || xx < 0 || xx >= ww) continue;
                double du = static_cast<double>(xx) + 0.5 - u;
                double dv = static_cast<double>(yy) + 0.5 - v;
                double g = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
                for (int64_t ch = 0; ch < c0; ++ch)
                    feat.data()[(ch * hh + yy) * ww + xx] += static_cast<float>(
                        kClassChannel[b.cls][ch % 8] * g);
            }
    }

    if (cfg.hotspot) {
        // localized high-magnitude artifact near the image bottom,
        // uncorrelated with the scene content
        Rng hot(derive_seed(scene.seed ^ 0x407501ULL, 1));
        double u0 = hot.uniform(0.30, 0.70) * ww;
        double v0 = hot.uniform(0.78, 0.92) * hh;
        double sigma = static_cast<double>(hh) / 14.0;
        std::array<double, 8> hw{};
        for (auto& wv : hw) wv = hot.uniform(0.85, 1.0);
        int64_t rad = static_cast<int64_t>(3.0 * sigma) + 1;
        for (int64_t dy = -rad; dy <= rad; ++dy)
            for (int64_t dx = -rad; dx <= rad; ++dx) {
                int64_t yy = static_cast<int64_t>(v0) + dy, xx = static_cast<int64_t>(u0) + dx;
                if (yy < 0 || yy >= hh || xx < 0 || xx >= ww) continue;
                double du = static_cast<double>(xx) + 0.5 - u0;
                double dv = static_cast<double>(yy) + 0.5 - v0;
                double g = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
                for (int64_t ch = 0; ch < c0; ++ch)
                    feat.data()[(ch * hh + yy) * ww + xx] +=
                        static_cast<float>(cfg.hotspot_magnitude * hw[static_cast<size_t>(ch % 8)] * g);
            }
    }
    return feat;
}

} // namespace kf
