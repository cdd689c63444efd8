#include "kanfuse/metrics.hpp"

#include <algorithm>
#include <sstream>

namespace kf {

const char* tier_name(Tier t) {
    switch (t) {
        case Tier::Easy: return "easy";
        case Tier::Moderate: return "moderate";
        default: return "hard";
    }
}

Tier classify_difficulty(double distance_m, int point_count, double occlusion_frac) {
    if (!(distance_m >= 0) || point_count < 0 || !(occlusion_frac >= 0))
        throw ValueError("classify_difficulty: inputs must be finite and non-negative");
    if (point_count > 50 && distance_m < 40.0 && occlusion_frac < 0.1) return Tier::Easy;
    if (point_count < 20 || distance_m > 50.0) return Tier::Hard;
    return Tier::Moderate;
}

MatchResult match_detections(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                             double iou_thresh) {
    MatchResult r;
    r.pred_to_gt.assign(preds.size(), -1);
    r.gt_matched.assign(gts.size(), 0);
    std::vector<int> order(preds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
    });
    for (int pi : order) {
        const Box3D& p = preds[static_cast<size_t>(pi)];
        int best = -1;
        double best_iou = -1.0;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (r.gt_matched[gi] || gts[gi].cls != p.cls) continue;
            double iou = bev_iou(p, gts[gi]);
            if (iou >= iou_thresh && iou > best_iou) { // ties keep the first GT
                best_iou = iou;
                best = static_cast<int>(gi);
            }
        }
        if (best >= 0) {
            r.pred_to_gt[static_cast<size_t>(pi)] = best;
            r.gt_matched[static_cast<size_t>(best)] = 1;
        }
    }
    return r;
}

std::optional<double> average_precision_40(std::vector<std::pair<double, int>> scored,
                                           int64_t n_gt) {
    if (n_gt <= 0) return std::nullopt;
    scored.erase(std::remove_if(scored.begin(), scored.end(),
                                [](const auto& s) { return s.second < 0; }),
                 scored.end());
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> precision(scored.size()), recall(scored.size());
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < scored.size(); ++i) {
        if (scored[i].second == 1)
            ++tp;
        else
            ++fp;
        precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
        recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    double ap = 0.0;
    for (int i = 1; i <= 40; ++i) {
        double r = static_cast<double>(i) / 40.0;
        double best = 0.0;
        for (size_t j = 0; j < scored.size(); ++j)
            if (recall[j] >= r) best = std::max(best, precision[j]);
        ap += best / 40.0;
    }
    return ap;
}

EvalReport evaluate(const std::vector<std::vector<Box3D>>& preds_per_scene,
                    const std::vector<const Scene*>& scenes, double iou_thresh) {
    if (preds_per_scene.size() != scenes.size())
        throw ValueError(cat("evaluate: ", preds_per_scene.size(), " prediction sets for ",
                             scenes.size(), " scenes"));
    EvalReport rep;

    for (int cls = 0; cls < kNumClasses; ++cls) {
        // gather per-scene matches once, then slice per tier
        struct Flagged {
            double score;
            int gt_tier; // -1 unmatched
        };
        std::vector<Flagged> flagged;
        std::array<int64_t, 3> gt_per_tier{0, 0, 0};

        for (size_t si = 0; si < scenes.size(); ++si) {
            const Scene& sc = *scenes[si];
            std::vector<Box3D> gts;
            std::vector<Tier> tiers;
            for (size_t bi = 0; bi < sc.boxes.size(); ++bi) {
                if (sc.boxes[bi].cls != cls) continue;
                gts.push_back(sc.boxes[bi]);
                Tier t = classify_difficulty(box_distance(sc, sc.boxes[bi]),
                                             sc.point_counts[bi], sc.occlusion[bi]);
                tiers.push_back(t);
                ++gt_per_tier[static_cast<size_t>(t)];
            }
            std::vector<Box3D> preds;
            for (const Box3D& p : preds_per_scene[si])
                if (p.cls == cls) preds.push_back(p);
            MatchResult m = match_detections(preds, gts, iou_thresh);
            for (size_t pi = 0; pi < preds.size(); ++pi) {
                int gi = m.pred_to_gt[pi];
                flagged.push_back(
                    {preds[pi].score,
                     gi >= 0 ? static_cast<int>(tiers[static_cast<size_t>(gi)]) : -1});
            }
        }

        for (int t = 0; t < 3; ++t) {
            std::vector<std::pair<double, int>> scored;
            for (const Flagged& f : flagged) {
                int flag;
                if (f.gt_tier == t)
                    flag = 1; // TP in this tier
                else if (f.gt_tier >= 0)
                    flag = -1; // matched another tier: ignored here
                else
                    flag = 0; // pure false positive counts everywhere
                scored.emplace_back(f.score, flag);
                if (flag >= 0) ++rep.tier_pred[static_cast<size_t>(t)];
            }
            rep.cells[cls][t].gt_count = gt_per_tier[static_cast<size_t>(t)];
            rep.cells[cls][t].ap = average_precision_40(scored, gt_per_tier[static_cast<size_t>(t)]);
        }
    }

    double weighted = 0.0;
    int64_t total_gt = 0;
    for (int t = 0; t < 3; ++t) {
        double sum = 0.0;
        int n = 0;
        int64_t gt = 0;
        for (int cls = 0; cls < kNumClasses; ++cls) {
            gt += rep.cells[cls][t].gt_count;
            if (rep.cells[cls][t].ap) {
                sum += *rep.cells[cls][t].ap;
                ++n;
            }
        }
        rep.tier_gt[static_cast<size_t>(t)] = gt;
        if (n > 0) {
            rep.tier_map[static_cast<size_t>(t)] = sum / n;
            weighted += gt * (sum / n);
            total_gt += gt;
        }
    }
    rep.avg_map = total_gt > 0 ? weighted / total_gt : 0.0;
    return rep;
}

std::string EvalReport::to_text() const {
    static const char* cls_names[kNumClasses] = {"car", "truck", "pedestrian"};
    std::ostringstream os;
    os << "mAP3D report (BEV IoU matching)\n";
    os << "class        tier       AP       GT\n";
    for (int cls = 0; cls < kNumClasses; ++cls)
        for (int t = 0; t < 3; ++t) {
            const Cell& c = cells[cls][t];
            char buf[96];
            if (c.ap)
                std::snprintf(buf, sizeof(buf), "%-12s %-9s %8.4f %7lld\n", cls_names[cls],
                              tier_name(static_cast<Tier>(t)), *c.ap,
                              static_cast<long long>(c.gt_count));
            else
                std::snprintf(buf, sizeof(buf), "%-12s %-9s %8s %7lld\n", cls_names[cls],
                              tier_name(static_cast<Tier>(t)), "absent",
                              static_cast<long long>(c.gt_count));
            os << buf;
        }
    for (int t = 0; t < 3; ++t) {
        char buf[96];
        if (tier_map[static_cast<size_t>(t)])
            std::snprintf(buf, sizeof(buf), "%-12s %-9s %8.4f %7lld\n", "mAP",
                          tier_name(static_cast<Tier>(t)), *tier_map[static_cast<size_t>(t)],
                          static_cast<long long>(tier_gt[static_cast<size_t>(t)]));
        else
            std::snprintf(buf, sizeof(buf), "%-12s %-9s %8s %7lld\n", "mAP",
                          tier_name(static_cast<Tier>(t)), "absent",
                          static_cast<long long>(tier_gt[static_cast<size_t>(t)]));
        os << buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mAP3D (GT-weighted avg): %.4f\n", avg_map);
    os << buf;
    return os.str();
}

std::string EvalReport::to_csv() const {
    static const char* cls_names[kNumClasses] = {"car", "truck", "pedestrian"};
    std::ostringstream os;
    os << "class,tier,ap,support\n";
    char buf[128];
    for (int cls = 0; cls < kNumClasses; ++cls)
        for (int t = 0; t < 3; ++t) {
            const Cell& c = cells[cls][t];
            if (c.ap)
                std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%lld\n", cls_names[cls],
                              tier_name(static_cast<Tier>(t)), *c.ap,
                              static_cast<long long>(c.gt_count));
            else
                std::snprintf(buf, sizeof(buf), "%s,%s,,%lld\n", cls_names[cls],
                              tier_name(static_cast<Tier>(t)),
                              static_cast<long long>(c.gt_count));
            os << buf;
        }
    for (int t = 0; t < 3; ++t) {
        if (tier_map[static_cast<size_t>(t)])
            std::snprintf(buf, sizeof(buf), "all,%s,%.6f,%lld\n",
                          tier_name(static_cast<Tier>(t)), *tier_map[static_cast<size_t>(t)],
                          static_cast<long long>(tier_gt[static_cast<size_t>(t)]));
        else
            std::snprintf(buf, sizeof(buf), "all,%s,,%lld\n", tier_name(static_cast<Tier>(t)),
                          static_cast<long long>(tier_gt[static_cast<size_t>(t)]));
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "all,avg,%.6f,%lld\n", avg_map,
                  static_cast<long long>(tier_gt[0] + tier_gt[1] + tier_gt[2]));
    os << buf;
    return os.str();
}

} // namespace kf
