#include "kanfuse/config.hpp"

#include <fstream>
#include <set>

namespace kf {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(cat("config: ", where, " must be an object"));
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError(cat("config: unknown key '", key, "' in ", where));
    }
}

template <class T>
void get_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) j.at(key).get_to(out);
}

} // namespace

ordered_json bev_to_json(const BevGridConfig& b) {
    return ordered_json{{"x_min", b.x_min}, {"x_max", b.x_max}, {"y_min", b.y_min},
                        {"y_max", b.y_max}, {"cell", b.cell}};
}

BevGridConfig bev_from_json(const json& j) {
    check_keys(j, {"x_min", "x_max", "y_min", "y_max", "cell"}, "bev");
    BevGridConfig b;
    get_to(j, "x_min", b.x_min);
    get_to(j, "x_max", b.x_max);
    get_to(j, "y_min", b.y_min);
    get_to(j, "y_max", b.y_max);
    get_to(j, "cell", b.cell);
    return b;
}

ordered_json scene_cfg_to_json(const SceneSetConfig& c) {
    return ordered_json{{"scene_count", c.scene_count},
                        {"train_frac", c.train_frac},
                        {"class_mix", c.class_mix},
                        {"dist_mix", c.dist_mix},
                        {"min_objects", c.min_objects},
                        {"max_objects", c.max_objects},
                        {"occluder_density", c.occluder_density},
                        {"hotspot", c.hotspot},
                        {"hotspot_magnitude", c.hotspot_magnitude},
                        {"feature_noise", c.feature_noise},
                        {"cam_channels", c.cam_channels},
                        {"cam_image", c.cam_image},
                        {"depth_min", c.depth_min},
                        {"depth_max", c.depth_max},
                        {"depth_bins", c.depth_bins},
                        {"lidar",
                         ordered_json{{"az_min_deg", c.lidar.az_min_deg},
                                      {"az_max_deg", c.lidar.az_max_deg},
                                      {"az_steps", c.lidar.az_steps},
                                      {"el_min_deg", c.lidar.el_min_deg},
                                      {"el_max_deg", c.lidar.el_max_deg},
                                      {"el_steps", c.lidar.el_steps},
                                      {"range_noise", c.lidar.range_noise},
                                      {"max_range", c.lidar.max_range}}}};
}

SceneSetConfig scene_cfg_from_json(const json& j) {
    check_keys(j,
               {"scene_count", "train_frac", "class_mix", "dist_mix", "min_objects",
                "max_objects", "occluder_density", "hotspot", "hotspot_magnitude",
                "feature_noise", "cam_channels", "cam_image", "depth_min", "depth_max",
                "depth_bins", "lidar"},
               "data");
    SceneSetConfig c;
    get_to(j, "scene_count", c.scene_count);
    get_to(j, "train_frac", c.train_frac);
    get_to(j, "class_mix", c.class_mix);
    get_to(j, "dist_mix", c.dist_mix);
    get_to(j, "min_objects", c.min_objects);
    get_to(j, "max_objects", c.max_objects);
    get_to(j, "occluder_density", c.occluder_density);
    get_to(j, "hotspot", c.hotspot);
    get_to(j, "hotspot_magnitude", c.hotspot_magnitude);
    get_to(j, "feature_noise", c.feature_noise);
    get_to(j, "cam_channels", c.cam_channels);
    get_to(j, "cam_image", c.cam_image);
    get_to(j, "depth_min", c.depth_min);
    get_to(j, "depth_max", c.depth_max);
    get_to(j, "depth_bins", c.depth_bins);
    if (j.contains("lidar")) {
        const json& l = j.at("lidar");
        check_keys(l,
                   {"az_min_deg", "az_max_deg", "az_steps", "el_min_deg", "el_max_deg",
                    "el_steps", "range_noise", "max_range"},
                   "data.lidar");
        get_to(l, "az_min_deg", c.lidar.az_min_deg);
        get_to(l, "az_max_deg", c.lidar.az_max_deg);
        get_to(l, "az_steps", c.lidar.az_steps);
        get_to(l, "el_min_deg", c.lidar.el_min_deg);
        get_to(l, "el_max_deg", c.lidar.el_max_deg);
        get_to(l, "el_steps", c.lidar.el_steps);
        get_to(l, "range_noise", c.lidar.range_noise);
        get_to(l, "max_range", c.lidar.max_range);
    }
    return c;
}

void RunConfig::validate() const {
    bev.validate();
    data.validate();
    if (model.attn_downsample < 1 || bev.height() % model.attn_downsample ||
        bev.width() % model.attn_downsample)
        throw ConfigError("config: attn_downsample must divide the BEV dims");
    if (model.attn_heads < 1 || model.pfn_out % model.attn_heads)
        throw ConfigError("config: attention heads must divide the BEV channel count");
    if (model.cam_feat != model.pfn_out)
        throw ConfigError("config: camera and lidar BEV channel counts must match");
    if (model.kan_grid < 1 || model.kan_order < 0 ||
        !(model.kan_domain_min < model.kan_domain_max))
        throw ConfigError("config: bad KAN grid settings");
    if (optimizer.batch_size < 1) throw ConfigError("config: batch_size must be positive");
    for (int64_t e : optimizer.stage_epochs)
        if (e < 0) throw ConfigError("config: negative stage epochs");
    if (optimizer.warmup_ratio < 0 || optimizer.warmup_ratio > 1 || optimizer.warmup_frac < 0 ||
        optimizer.warmup_frac > 1)
        throw ConfigError("config: warmup settings out of range");
    if (model.score_thresh < 0 || model.score_thresh > 1 || model.nms_iou < 0 ||
        model.nms_iou > 1)
        throw ConfigError("config: decode thresholds must be in [0,1]");
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, {"seed", "bev", "model", "optimizer", "data", "ablation"}, "config root");
    RunConfig c;
    get_to(j, "seed", c.seed);
    if (j.contains("bev")) c.bev = bev_from_json(j.at("bev"));
    if (j.contains("data")) c.data = scene_cfg_from_json(j.at("data"));
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"attn_downsample", "pfn_hidden", "pfn_out", "max_pillars",
                    "max_points_per_pillar", "cam_backbone", "cam_mid", "cam_feat", "kan_grid",
                    "kan_order", "kan_domain_min", "kan_domain_max", "attn_heads", "fuser_out",
                    "fuser_k", "head_mid", "score_thresh", "nms_iou"},
                   "model");
        get_to(m, "attn_downsample", c.model.attn_downsample);
        get_to(m, "pfn_hidden", c.model.pfn_hidden);
        get_to(m, "pfn_out", c.model.pfn_out);
        get_to(m, "max_pillars", c.model.max_pillars);
        get_to(m, "max_points_per_pillar", c.model.max_points_per_pillar);
        get_to(m, "cam_backbone", c.model.cam_backbone);
        get_to(m, "cam_mid", c.model.cam_mid);
        get_to(m, "cam_feat", c.model.cam_feat);
        get_to(m, "kan_grid", c.model.kan_grid);
        get_to(m, "kan_order", c.model.kan_order);
        get_to(m, "kan_domain_min", c.model.kan_domain_min);
        get_to(m, "kan_domain_max", c.model.kan_domain_max);
        get_to(m, "attn_heads", c.model.attn_heads);
        get_to(m, "fuser_out", c.model.fuser_out);
        get_to(m, "fuser_k", c.model.fuser_k);
        get_to(m, "head_mid", c.model.head_mid);
        get_to(m, "score_thresh", c.model.score_thresh);
        get_to(m, "nms_iou", c.model.nms_iou);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o,
                   {"lr", "weight_decay", "warmup_ratio", "warmup_frac", "lr_floor", "clip_norm",
                    "batch_size", "stage_epochs"},
                   "optimizer");
        get_to(o, "lr", c.optimizer.lr);
        get_to(o, "weight_decay", c.optimizer.weight_decay);
        get_to(o, "warmup_ratio", c.optimizer.warmup_ratio);
        get_to(o, "warmup_frac", c.optimizer.warmup_frac);
        get_to(o, "lr_floor", c.optimizer.lr_floor);
        get_to(o, "clip_norm", c.optimizer.clip_norm);
        get_to(o, "batch_size", c.optimizer.batch_size);
        get_to(o, "stage_epochs", c.optimizer.stage_epochs);
    }
    if (j.contains("ablation")) {
        const json& a = j.at("ablation");
        check_keys(a,
                   {"use_kan_point_encoder", "use_kanv_transform", "use_conv_kan_fuser",
                    "use_cross_attn"},
                   "ablation");
        get_to(a, "use_kan_point_encoder", c.ablation.use_kan_point_encoder);
        get_to(a, "use_kanv_transform", c.ablation.use_kanv_transform);
        get_to(a, "use_conv_kan_fuser", c.ablation.use_conv_kan_fuser);
        get_to(a, "use_cross_attn", c.ablation.use_cross_attn);
    }
    c.validate();
    return c;
}

ordered_json run_config_to_json(const RunConfig& c) {
    return ordered_json{
        {"seed", c.seed},
        {"bev", bev_to_json(c.bev)},
        {"model",
         ordered_json{{"attn_downsample", c.model.attn_downsample},
                      {"pfn_hidden", c.model.pfn_hidden},
                      {"pfn_out", c.model.pfn_out},
                      {"max_pillars", c.model.max_pillars},
                      {"max_points_per_pillar", c.model.max_points_per_pillar},
                      {"cam_backbone", c.model.cam_backbone},
                      {"cam_mid", c.model.cam_mid},
                      {"cam_feat", c.model.cam_feat},
                      {"kan_grid", c.model.kan_grid},
                      {"kan_order", c.model.kan_order},
                      {"kan_domain_min", c.model.kan_domain_min},
                      {"kan_domain_max", c.model.kan_domain_max},
                      {"attn_heads", c.model.attn_heads},
                      {"fuser_out", c.model.fuser_out},
                      {"fuser_k", c.model.fuser_k},
                      {"head_mid", c.model.head_mid},
                      {"score_thresh", c.model.score_thresh},
                      {"nms_iou", c.model.nms_iou}}},
        {"optimizer",
         ordered_json{{"lr", c.optimizer.lr},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"warmup_ratio", c.optimizer.warmup_ratio},
                      {"warmup_frac", c.optimizer.warmup_frac},
                      {"lr_floor", c.optimizer.lr_floor},
                      {"clip_norm", c.optimizer.clip_norm},
                      {"batch_size", c.optimizer.batch_size},
                      {"stage_epochs", c.optimizer.stage_epochs}}},
        {"data", scene_cfg_to_json(c.data)},
        {"ablation",
         ordered_json{{"use_kan_point_encoder", c.ablation.use_kan_point_encoder},
                      {"use_kanv_transform", c.ablation.use_kanv_transform},
                      {"use_conv_kan_fuser", c.ablation.use_conv_kan_fuser},
                      {"use_cross_attn", c.ablation.use_cross_attn}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(cat("config: cannot open ", path.string()));
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError(cat("config: parse error in ", path.string(), ": ", e.what()));
    }
    return run_config_from_json(j);
}

std::string config_hash(const RunConfig& c) {
    std::string dump = run_config_to_json(c).dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace kf
