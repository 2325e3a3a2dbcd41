#include "boxes.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace nforge {

namespace {
Scalar overlap_1d(Scalar c1, Scalar d1, Scalar c2, Scalar d2) {
    Scalar lo = std::max(c1 - d1 / 2, c2 - d2 / 2);
    Scalar hi = std::min(c1 + d1 / 2, c2 + d2 / 2);
    return std::max<Scalar>(0.0, hi - lo);
}
}  // namespace

Scalar iou3d(const Box3& a, const Box3& b) {
    if (a.d <= 0 || b.d <= 0)
        throw std::invalid_argument("iou3d: non-positive cube diameter");
    Scalar inter = overlap_1d(a.cx, a.d, b.cx, b.d) * overlap_1d(a.cy, a.d, b.cy, b.d) *
                   overlap_1d(a.cz, a.d, b.cz, b.d);
    Scalar uni = a.d * a.d * a.d + b.d * b.d * b.d - inter;
    return inter / uni;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, Scalar iou_thresh) {
    if (iou_thresh < 0.0 || iou_thresh > 1.0)
        throw std::invalid_argument("nms: iou_thresh must be in [0,1]");
    // Score-descending order, stable so ties keep input order.
    std::vector<size_t> order(dets.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[a].score > dets[b].score; });
    std::vector<Detection> kept;
    std::vector<bool> dropped(dets.size(), false);
    for (size_t oi = 0; oi < order.size(); ++oi) {
        size_t i = order[oi];
        if (dropped[i]) continue;
        kept.push_back(dets[i]);
        for (size_t oj = oi + 1; oj < order.size(); ++oj) {
            size_t j = order[oj];
            if (!dropped[j] && iou3d(dets[i].box, dets[j].box) > iou_thresh) dropped[j] = true;
        }
    }
    return kept;
}

std::vector<Detection> filter_small(const std::vector<Detection>& dets,
                                    Scalar min_diameter_mm) {
    std::vector<Detection> out;
    for (const auto& d : dets)
        if (d.box.d >= min_diameter_mm) out.push_back(d);
    return out;
}

Detection to_world(const Detection& det, const std::array<Scalar, 3>& patch_origin_voxels,
                   const std::array<Scalar, 3>& spacing_mm) {
    for (Scalar s : spacing_mm)
        if (s <= 0) throw std::invalid_argument("to_world: spacing must be positive");
    Detection out = det;
    out.box.cx = (patch_origin_voxels[0] + det.box.cx) * spacing_mm[0];
    out.box.cy = (patch_origin_voxels[1] + det.box.cy) * spacing_mm[1];
    out.box.cz = (patch_origin_voxels[2] + det.box.cz) * spacing_mm[2];
    out.box.d = det.box.d * (spacing_mm[0] + spacing_mm[1] + spacing_mm[2]) / 3.0;
    return out;
}

}  // namespace nforge
