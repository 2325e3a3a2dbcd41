#pragma once

#include "boxes.hpp"

namespace nforge {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0;
};

struct PRPoint {
    Scalar score_threshold = 0;
    Scalar precision = 0;
    Scalar recall = 0;
};

struct PRCurve {
    std::vector<PRPoint> points;  // ordered by descending score threshold
};

struct APReport {
    Scalar ap = 0;    // mean over IoU thresholds 0.50:0.05:0.95
    Scalar ap50 = 0;
    Scalar ap75 = 0;
    std::vector<Scalar> per_threshold;  // ten entries
};

struct MatchResult {
    std::vector<bool> is_tp;  // per detection, in input order
    int64_t unmatched_gt = 0;
};

// Greedy matching in descending score order: a detection is TP if its
// best-IoU still-unmatched GT reaches iou_thresh. Each GT matches once.
// Score ties break by input order.
MatchResult match(const std::vector<Detection>& dets, const std::vector<Box3>& gts,
                  Scalar iou_thresh);

// 0/0 conventions: precision 1 when no detections, recall 0 when no GT.
Scalar precision(const ConfusionCounts& c);
Scalar recall(const ConfusionCounts& c);

// One point per distinct score, swept descending, from cumulative TP/FP.
PRCurve pr_curve(const std::vector<Detection>& dets, const std::vector<Box3>& gts,
                 Scalar iou_thresh);

// Area under the monotone (running-max-from-the-right) precision envelope,
// summed exactly over recall increments.
Scalar average_precision(const PRCurve& curve);

// AP at IoU 0.50:0.05:0.95 plus the ap50/ap75 extracts.
APReport ap_report(const std::vector<Detection>& dets, const std::vector<Box3>& gts);

}  // namespace nforge
