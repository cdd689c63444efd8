#include "kanfuse/dataset.hpp"

#include <fstream>

namespace kf {

namespace {

ordered_json box_to_json(const Box3D& b) {
    return ordered_json{{"x", b.x}, {"y", b.y},     {"z", b.z},     {"w", b.w},
                        {"l", b.l}, {"h", b.h},     {"yaw", b.yaw}, {"cls", b.cls},
                        {"score", b.score}};
}

Box3D box_from_json(const json& j) {
    Box3D b;
    j.at("x").get_to(b.x);
    j.at("y").get_to(b.y);
    j.at("z").get_to(b.z);
    j.at("w").get_to(b.w);
    j.at("l").get_to(b.l);
    j.at("h").get_to(b.h);
    j.at("yaw").get_to(b.yaw);
    j.at("cls").get_to(b.cls);
    if (j.contains("score")) j.at("score").get_to(b.score);
    return b;
}

ordered_json camera_to_json(const CameraModel& c) {
    return ordered_json{{"intrinsic", c.intrinsic}, {"rotation", c.rotation},
                        {"translation", c.translation}, {"img_w", c.img_w},
                        {"img_h", c.img_h},         {"depth_min", c.depth_min},
                        {"depth_max", c.depth_max}, {"depth_bins", c.depth_bins}};
}

CameraModel camera_from_json(const json& j) {
    CameraModel c;
    j.at("intrinsic").get_to(c.intrinsic);
    j.at("rotation").get_to(c.rotation);
    j.at("translation").get_to(c.translation);
    j.at("img_w").get_to(c.img_w);
    j.at("img_h").get_to(c.img_h);
    j.at("depth_min").get_to(c.depth_min);
    j.at("depth_max").get_to(c.depth_max);
    j.at("depth_bins").get_to(c.depth_bins);
    return c;
}

ordered_json scene_to_json(const Scene& s) {
    ordered_json boxes = ordered_json::array();
    for (const Box3D& b : s.boxes) boxes.push_back(box_to_json(b));
    ordered_json occ = ordered_json::array();
    for (const Box3D& b : s.occluders) occ.push_back(box_to_json(b));
    return ordered_json{{"seed", s.seed},
                        {"bev", bev_to_json(s.bev)},
                        {"boxes", boxes},
                        {"occluders", occ},
                        {"lidar_pos", s.lidar_pos},
                        {"camera", camera_to_json(s.cam)},
                        {"point_counts", s.point_counts},
                        {"occlusion", s.occlusion}};
}

Scene scene_from_json(const json& j) {
    Scene s;
    j.at("seed").get_to(s.seed);
    s.bev = bev_from_json(j.at("bev"));
    for (const json& b : j.at("boxes")) s.boxes.push_back(box_from_json(b));
    for (const json& b : j.at("occluders")) s.occluders.push_back(box_from_json(b));
    j.at("lidar_pos").get_to(s.lidar_pos);
    s.cam = camera_from_json(j.at("camera"));
    j.at("point_counts").get_to(s.point_counts);
    j.at("occlusion").get_to(s.occlusion);
    return s;
}

std::string scene_stem(int64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%05lld", static_cast<long long>(id));
    return buf;
}

} // namespace

void write_kfpc(const std::filesystem::path& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError(cat("kfpc: cannot open ", path.string(), " for writing"));
    os.write("KFPC", 4);
    uint64_t n = static_cast<uint64_t>(cloud.size());
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(cloud.pts.data()),
             static_cast<std::streamsize>(cloud.pts.size() * sizeof(float)));
    if (!os) throw IoError(cat("kfpc: write failed for ", path.string()));
}

PointCloud read_kfpc(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(cat("kfpc: cannot open ", path.string()));
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "KFPC", 4) != 0)
        throw IoError(cat("kfpc: bad magic in ", path.string()));
    uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    PointCloud cloud;
    cloud.pts.resize(static_cast<size_t>(n) * 4);
    is.read(reinterpret_cast<char*>(cloud.pts.data()),
            static_cast<std::streamsize>(cloud.pts.size() * sizeof(float)));
    if (!is) throw IoError(cat("kfpc: truncated cloud in ", path.string()));
    return cloud;
}

Dataset generate_dataset(uint64_t master_seed, const SceneSetConfig& cfg,
                         const BevGridConfig& bev, const std::string& cfg_hash) {
    cfg.validate();
    bev.validate();
    Dataset ds;
    ds.master_seed = master_seed;
    ds.config_hash = cfg_hash;
    ds.bev = bev;
    ds.cfg = cfg;
    for (int64_t i = 0; i < cfg.scene_count; ++i) {
        SceneRecord rec;
        rec.scene = generate_scene(derive_seed(master_seed, static_cast<uint64_t>(i)), cfg, bev);
        rec.cloud = raycast_lidar(rec.scene, cfg.lidar);
        rec.cam_features = render_camera_features(rec.scene, cfg);
        ds.scenes.push_back(std::move(rec));
    }
    int64_t n_train = static_cast<int64_t>(std::llround(cfg.train_frac * cfg.scene_count));
    n_train = std::min(cfg.scene_count, std::max<int64_t>(0, n_train));
    for (int64_t i = 0; i < cfg.scene_count; ++i)
        (i < n_train ? ds.train_ids : ds.val_ids).push_back(i);
    return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir / "scenes");
    ordered_json manifest{{"format", "kanfuse-dataset-v1"},
                          {"master_seed", ds.master_seed},
                          {"config_hash", ds.config_hash},
                          {"bev", bev_to_json(ds.bev)},
                          {"data", scene_cfg_to_json(ds.cfg)},
                          {"splits", ordered_json{{"train", ds.train_ids}, {"val", ds.val_ids}}},
                          {"scene_count", ds.scenes.size()}};
    {
        std::ofstream os(dir / "manifest.json");
        if (!os) throw IoError(cat("dataset: cannot write manifest in ", dir.string()));
        os << manifest.dump(2) << "\n";
    }
    for (size_t i = 0; i < ds.scenes.size(); ++i) {
        const SceneRecord& rec = ds.scenes[i];
        std::string stem = scene_stem(static_cast<int64_t>(i));
        write_kfpc(dir / "scenes" / (stem + ".kfpc"), rec.cloud);
        write_kft(dir / "scenes" / (stem + ".kft"), rec.cam_features);
        std::ofstream os(dir / "scenes" / (stem + ".json"));
        if (!os) throw IoError(cat("dataset: cannot write ", stem, ".json"));
        os << scene_to_json(rec.scene).dump(2) << "\n";
    }
}

Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError(cat("dataset: missing manifest.json in ", dir.string()));
    json manifest;
    try {
        is >> manifest;
    } catch (const json::exception& e) {
        throw IoError(cat("dataset: corrupt manifest in ", dir.string(), ": ", e.what()));
    }
    Dataset ds;
    manifest.at("master_seed").get_to(ds.master_seed);
    manifest.at("config_hash").get_to(ds.config_hash);
    ds.bev = bev_from_json(manifest.at("bev"));
    ds.cfg = scene_cfg_from_json(manifest.at("data"));
    manifest.at("splits").at("train").get_to(ds.train_ids);
    manifest.at("splits").at("val").get_to(ds.val_ids);
    int64_t n = manifest.at("scene_count").get<int64_t>();
    for (int64_t i = 0; i < n; ++i) {
        std::string stem = scene_stem(i);
        SceneRecord rec;
        try {
            std::ifstream sj(dir / "scenes" / (stem + ".json"));
            if (!sj) throw IoError("missing scene json");
            json j;
            sj >> j;
            rec.scene = scene_from_json(j);
            rec.cloud = read_kfpc(dir / "scenes" / (stem + ".kfpc"));
            rec.cam_features = read_kft<float>(dir / "scenes" / (stem + ".kft"));
        } catch (const std::exception& e) {
            throw IoError(cat("dataset: scene ", stem, " unreadable: ", e.what()));
        }
        ds.scenes.push_back(std::move(rec));
    }
    return ds;
}

} // namespace kf
