#pragma once

#include <optional>

#include "kanfuse/detection.hpp"
#include "kanfuse/scene.hpp"

namespace kf {

enum class Tier { Easy = 0, Moderate = 1, Hard = 2 };

const char* tier_name(Tier t);

// Distance/point-count/occlusion tiers. Hard takes the union of its two
// conditions (points < 20 OR farther than 50 m); Easy requires all three of
// its conditions; everything else is Moderate.
Tier classify_difficulty(double distance_m, int point_count, double occlusion_frac);

// Greedy per-scene matching, descending prediction score, same class only,
// each ground truth matched at most once at IoU >= iou_thresh.
struct MatchResult {
    std::vector<int> pred_to_gt; // per prediction: gt index or -1
    std::vector<char> gt_matched;
};
MatchResult match_detections(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                             double iou_thresh);

// 40-point interpolated AP. scored holds (score, flag) with flag 1 = TP,
// 0 = FP, -1 = ignored (matched a GT outside the evaluated tier). Absent
// (not zero) when the tier has no ground truth.
std::optional<double> average_precision_40(std::vector<std::pair<double, int>> scored,
                                           int64_t n_gt);

struct EvalReport {
    struct Cell {
        std::optional<double> ap;
        int64_t gt_count = 0;
    };
    Cell cells[kNumClasses][3];
    std::array<std::optional<double>, 3> tier_map; // mean over classes with GT in the tier
    std::array<int64_t, 3> tier_gt{0, 0, 0};
    std::array<int64_t, 3> tier_pred{0, 0, 0}; // TP+FP attributed to the tier
    double avg_map = 0.0;                      // GT-count-weighted mean over tiers

    std::string to_text() const;
    std::string to_csv() const;
};

// Full protocol: per-scene greedy matching, per-class per-tier AP with
// cross-tier matches ignored, tier mAP as the class mean, Avg as the
// GT-weighted tier mean.
EvalReport evaluate(const std::vector<std::vector<Box3D>>& preds_per_scene,
                    const std::vector<const Scene*>& scenes, double iou_thresh = 0.5);

} // namespace kf
