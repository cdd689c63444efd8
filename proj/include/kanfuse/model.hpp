#pragma once

#include "kanfuse/camera.hpp"
#include "kanfuse/dataset.hpp"
#include "kanfuse/detection.hpp"
#include "kanfuse/fusion.hpp"
#include "kanfuse/metrics.hpp"

namespace kf {

// Parameter groups for the three training stages:
//   0 point-encoder layers   (stage 1 trains these alone)
//   1 conv-replaced modules: depthnet, dtransform, fuser (stage 2)
//   2 everything else: backbone stub, downsample, attention, head (stage 3)
inline int param_group(const std::string& name) {
    auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
    if (starts("pe.")) return 0;
    if (starts("vt.depthnet") || starts("vt.dtransform") || starts("fuser.")) return 1;
    return 2;
}

inline const char* param_group_name(int g) {
    switch (g) {
        case 0: return "encoder_linear";
        case 1: return "convlike";
        default: return "other";
    }
}

// The full camera-LiDAR fusion pipeline with the four ablation toggles.
template <class T>
struct FusionModel {
    RunConfig cfg;
    SplineGrid grid;
    PointEncoder<T> pe;
    CameraBackboneStub<T> bb;
    KanVTransform<T> vt;
    std::optional<CrossAttnBlock<T>> attn;
    ConvKanFuser<T> fuser;
    DetectionHead<T> head;
    std::optional<LiftGeometry> lift; // built from the first scene's rig

    FusionModel(const RunConfig& c, uint64_t init_seed)
        : cfg(c), grid(c.model.kan_domain_min, c.model.kan_domain_max,
                       static_cast<int>(c.model.kan_grid), static_cast<int>(c.model.kan_order)) {
        cfg.validate();
        Rng rng(derive_seed(init_seed, 0xF00D));
        pe = PointEncoder<T>(c.model.pfn_hidden, c.model.pfn_out,
                             c.ablation.use_kan_point_encoder, grid, rng);
        bb = CameraBackboneStub<T>(c.data.cam_channels, c.model.cam_backbone, rng);
        vt = KanVTransform<T>(c.model.cam_backbone, c.model.cam_mid, c.model.cam_feat,
                              c.data.depth_bins, c.ablation.use_kanv_transform, grid, rng);
        if (c.ablation.use_cross_attn)
            attn.emplace(c.model.attn_downsample, c.model.attn_heads, c.model.pfn_out, rng);
        fuser = ConvKanFuser<T>(c.model.pfn_out, c.model.cam_feat, c.model.fuser_out,
                                c.model.fuser_k, c.ablation.use_conv_kan_fuser, grid, rng);
        head = DetectionHead<T>(c.model.fuser_out, c.model.head_mid, rng);
    }

    struct Forward {
        BevFeature<T> lidar, camera, attended, fused;
        HeadOutput<T> head_out;
        Tensor<T> attn_weights; // (n, S, S) when requested and attention is on
    };

    Forward forward(const SceneRecord& rec, bool training, bool update_running = true,
                    bool want_attn_weights = false) {
        int64_t bh = cfg.bev.height(), bw = cfg.bev.width();

        PillarConfig pcfg{cfg.model.max_pillars, cfg.model.max_points_per_pillar};
        PillarGrid pillars = pillarize(rec.cloud, cfg.bev, pcfg, rec.scene.seed);

        Forward out;
        out.lidar = BevFeature<T>(pe.forward(pillars, bh, bw, training, update_running),
                                  BevFeature<T>::Source::lidar);

        Tensor<T> image(rec.cam_features.shape());
        for (int64_t i = 0; i < image.numel(); ++i)
            image.data()[i] = static_cast<T>(rec.cam_features.data()[i]);
        Tensor<T> feat = bb.forward(image, training, update_running);

        if (!lift) {
            int64_t hf = (feat.dim(1) + 1) / 2, wf = (feat.dim(2) + 1) / 2; // after stride-2 down
            lift = LiftGeometry::build(rec.scene.cam, cfg.bev, hf, wf);
        }
        out.camera = BevFeature<T>(vt.forward(feat, *lift, training, update_running).bev,
                                   BevFeature<T>::Source::camera);

        if (attn) {
            Tensor<T> weights;
            out.attended =
                attn->forward(out.lidar, out.camera, want_attn_weights ? &weights : nullptr);
            out.attn_weights = weights;
        } else {
            out.attended = out.camera;
        }
        out.fused = fuser.forward(out.lidar, out.attended, training, update_running);
        out.head_out = head.forward(out.fused);
        return out;
    }

    ParamMap<T> params() {
        ParamMap<T> m;
        pe.params(m, "pe");
        bb.params(m, "bb");
        vt.params(m, "vt");
        if (attn) attn->params(m, "attn");
        fuser.params(m, "fuser");
        head.params(m, "head");
        return m;
    }
};

// ------------------------------------------------------------- checkpoints
//
// Directory layout: manifest.json (config echo + hash, precision, tensor
// index, spline-grid metadata) + weights.bin (concatenated KFT1 records:
// parameters in manifest order, then batchnorm running buffers).

template <class T>
void save_checkpoint(const std::filesystem::path& dir, FusionModel<T>& model) {
    std::filesystem::create_directories(dir);
    ParamMap<T> m = model.params();
    ordered_json params = ordered_json::array();
    for (auto& [name, t] : m.params)
        params.push_back(ordered_json{{"name", name}, {"shape", t.shape()}});
    ordered_json buffers = ordered_json::array();
    for (auto& [name, buf] : m.buffers)
        buffers.push_back(ordered_json{{"name", name}, {"size", buf->size()}});
    ordered_json manifest{
        {"format", "kanfuse-checkpoint-v1"},
        {"precision", std::is_same_v<T, float> ? "f32" : "f64"},
        {"config_hash", config_hash(model.cfg)},
        {"config", run_config_to_json(model.cfg)},
        {"spline_grid", ordered_json{{"lower", model.grid.lower},
                                     {"upper", model.grid.upper},
                                     {"grid_count", model.grid.grid_count},
                                     {"order", model.grid.order}}},
        {"params", params},
        {"buffers", buffers}};
    {
        std::ofstream os(dir / "manifest.json");
        if (!os) throw IoError(cat("checkpoint: cannot write manifest in ", dir.string()));
        os << manifest.dump(2) << "\n";
    }
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    if (!os) throw IoError(cat("checkpoint: cannot write weights in ", dir.string()));
    for (auto& [name, t] : m.params) write_kft(os, t);
    for (auto& [name, buf] : m.buffers)
        write_kft(os, Tensor<T>::from_data({static_cast<int64_t>(buf->size())}, *buf));
}

inline json checkpoint_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw IoError(cat("checkpoint: missing manifest.json in ", dir.string()));
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw IoError(cat("checkpoint: corrupt manifest: ", e.what()));
    }
    return j;
}

template <class T>
void load_checkpoint_weights(const std::filesystem::path& dir, FusionModel<T>& model) {
    json manifest = checkpoint_manifest(dir);
    ParamMap<T> m = model.params();
    std::ifstream is(dir / "weights.bin", std::ios::binary);
    if (!is) throw IoError(cat("checkpoint: missing weights.bin in ", dir.string()));
    size_t pi = 0;
    for (const json& entry : manifest.at("params")) {
        std::string name = entry.at("name").get<std::string>();
        if (pi >= m.params.size() || m.params[pi].first != name)
            throw IoError(cat("checkpoint: parameter order mismatch at '", name, "'"));
        Tensor<T> loaded = read_kft<T>(is, name);
        Tensor<T>& dst = m.params[pi].second;
        if (loaded.shape() != dst.shape())
            throw IoError(cat("checkpoint: shape mismatch for ", name, ": ",
                              shape_str(loaded.shape()), " vs ", shape_str(dst.shape())));
        dst.vec() = loaded.vec();
        ++pi;
    }
    size_t bi = 0;
    for (const json& entry : manifest.at("buffers")) {
        std::string name = entry.at("name").get<std::string>();
        if (bi >= m.buffers.size() || m.buffers[bi].first != name)
            throw IoError(cat("checkpoint: buffer order mismatch at '", name, "'"));
        Tensor<T> loaded = read_kft<T>(is, name);
        if (static_cast<size_t>(loaded.numel()) != m.buffers[bi].second->size())
            throw IoError(cat("checkpoint: buffer size mismatch for ", name));
        *m.buffers[bi].second = loaded.vec();
        ++bi;
    }
}

template <class T>
FusionModel<T> load_checkpoint(const std::filesystem::path& dir) {
    json manifest = checkpoint_manifest(dir);
    RunConfig cfg = run_config_from_json(manifest.at("config"));
    FusionModel<T> model(cfg, cfg.seed);
    load_checkpoint_weights(dir, model);
    return model;
}

// ------------------------------------------------------------- inference

template <class T>
std::vector<Box3D> predict_scene(FusionModel<T>& model, const SceneRecord& rec) {
    NoGradGuard ng;
    auto fwd = model.forward(rec, /*training=*/false);
    return decode_detections(fwd.head_out, model.cfg.bev, model.cfg.model.score_thresh,
                             model.cfg.model.nms_iou);
}

template <class T>
EvalReport evaluate_model(FusionModel<T>& model, const Dataset& ds, const std::string& split) {
    const std::vector<int64_t>& ids = ds.split(split);
    if (ids.empty()) throw ValueError(cat("evaluate: split '", split, "' is empty"));
    std::vector<std::vector<Box3D>> preds;
    std::vector<const Scene*> scenes;
    for (int64_t id : ids) {
        const SceneRecord& rec = ds.scenes[static_cast<size_t>(id)];
        preds.push_back(predict_scene(model, rec));
        scenes.push_back(&rec.scene);
    }
    return evaluate(preds, scenes, /*iou_thresh=*/0.5);
}

} // namespace kf
