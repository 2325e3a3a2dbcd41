#include "metrics.hpp"

#include <algorithm>

namespace nforge {

MatchResult match(const std::vector<Detection>& dets, const std::vector<Box3>& gts,
                  Scalar iou_thresh) {
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    MatchResult res;
    res.is_tp.assign(dets.size(), false);
    std::vector<bool> gt_used(gts.size(), false);
    for (size_t i : order) {
        Scalar best = 0.0;
        int64_t best_gt = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_used[g]) continue;
            Scalar v = iou3d(dets[i].box, gts[g]);
            if (v > best) {
                best = v;
                best_gt = static_cast<int64_t>(g);
            }
        }
        if (best_gt >= 0 && best >= iou_thresh) {
            res.is_tp[i] = true;
            gt_used[static_cast<size_t>(best_gt)] = true;
        }
    }
    res.unmatched_gt =
        static_cast<int64_t>(std::count(gt_used.begin(), gt_used.end(), false));
    return res;
}

Scalar precision(const ConfusionCounts& c) {
    if (c.tp + c.fp == 0) return 1.0;
    return static_cast<Scalar>(c.tp) / static_cast<Scalar>(c.tp + c.fp);
}

Scalar recall(const ConfusionCounts& c) {
    if (c.tp + c.fn == 0) return 0.0;
    return static_cast<Scalar>(c.tp) / static_cast<Scalar>(c.tp + c.fn);
}

PRCurve pr_curve(const std::vector<Detection>& dets, const std::vector<Box3>& gts,
                 Scalar iou_thresh) {
    MatchResult m = match(dets, gts, iou_thresh);
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    PRCurve curve;
    int64_t n_gt = static_cast<int64_t>(gts.size());
    int64_t tp = 0, fp = 0;
    for (size_t oi = 0; oi < order.size(); ++oi) {
        size_t i = order[oi];
        if (m.is_tp[i])
            ++tp;
        else
            ++fp;
        // Emit one point per distinct score (at the last det of a tie group).
        bool last_of_score =
            oi + 1 == order.size() || dets[order[oi + 1]].score != dets[i].score;
        if (!last_of_score) continue;
        PRPoint p;
        p.score_threshold = dets[i].score;
        p.precision = precision({tp, fp, 0});
        p.recall = recall({tp, 0, n_gt - tp});
        curve.points.push_back(p);
    }
    return curve;
}

Scalar average_precision(const PRCurve& curve) {
    size_t n = curve.points.size();
    if (n == 0) return 0.0;
    std::vector<Scalar> env(n);
    Scalar running = 0.0;
    for (size_t i = n; i-- > 0;) {
        running = std::max(running, curve.points[i].precision);
        env[i] = running;
    }
    Scalar ap = 0.0, prev_recall = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ap += (curve.points[i].recall - prev_recall) * env[i];
        prev_recall = curve.points[i].recall;
    }
    return ap;
}

APReport ap_report(const std::vector<Detection>& dets, const std::vector<Box3>& gts) {
    APReport rep;
    for (int i = 0; i < 10; ++i) {
        Scalar thr = 0.50 + 0.05 * i;
        Scalar ap = average_precision(pr_curve(dets, gts, thr));
        rep.per_threshold.push_back(ap);
        rep.ap += ap;
    }
    rep.ap /= 10.0;
    rep.ap50 = rep.per_threshold[0];
    rep.ap75 = rep.per_threshold[5];
    return rep;
}

}  // namespace nforge
