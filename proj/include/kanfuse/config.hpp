#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "kanfuse/scene.hpp"

namespace kf {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct ModelConfig {
    int64_t attn_downsample = 6;
    int64_t pfn_hidden = 32, pfn_out = 64;
    int64_t max_pillars = 4096, max_points_per_pillar = 24;
    int64_t cam_backbone = 32, cam_mid = 64, cam_feat = 64;
    int64_t kan_grid = 5, kan_order = 3;
    double kan_domain_min = -1.0, kan_domain_max = 1.0;
    int64_t attn_heads = 4;
    int64_t fuser_out = 64, fuser_k = 3;
    int64_t head_mid = 32;
    double score_thresh = 0.20, nms_iou = 0.5;
};

struct OptimConfig {
    double lr = 1e-4;
    double weight_decay = 0.01;
    double warmup_ratio = 0.3;   // lr factor at step 0
    double warmup_frac = 0.1;    // fraction of total steps spent ramping
    double lr_floor = 0.0;
    double clip_norm = 10.0;
    int64_t batch_size = 4;
    std::array<int64_t, 3> stage_epochs{5, 5, 15}; // paper ratio 20/20/60 at toy scale 1/4
};

// Table-style module toggles; all four off is the plain conv baseline.
struct AblationConfig {
    bool use_kan_point_encoder = true;
    bool use_kanv_transform = true;
    bool use_conv_kan_fuser = true;
    bool use_cross_attn = true;
};

struct RunConfig {
    uint64_t seed = 0;
    BevGridConfig bev;
    ModelConfig model;
    OptimConfig optimizer;
    SceneSetConfig data;
    AblationConfig ablation;

    void validate() const;
};

RunConfig run_config_from_json(const json& j);
ordered_json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// FNV-1a hex digest of the canonical JSON dump; echoed into dataset and
// checkpoint manifests for provenance
std::string config_hash(const RunConfig& c);

ordered_json bev_to_json(const BevGridConfig& b);
BevGridConfig bev_from_json(const json& j);
ordered_json scene_cfg_to_json(const SceneSetConfig& c);
SceneSetConfig scene_cfg_from_json(const json& j);

} // namespace kf
