#include "eval.hpp"

#include <algorithm>
#include <map>

#include "metrics.hpp"
#include "patches.hpp"

namespace nforge {

std::vector<WorldDetection> infer_volume(Detector& model, const Volume& vol, int64_t edge,
                                         Scalar window_lo, Scalar window_hi) {
    auto patches = extract_patches(vol, {}, edge, edge / 2, window_lo, window_hi);
    std::vector<Detection> merged;
    for (const auto& p : patches) {
        std::array<Scalar, 3> origin{static_cast<Scalar>(p.origin[0]),
                                     static_cast<Scalar>(p.origin[1]),
                                     static_cast<Scalar>(p.origin[2])};
        for (const auto& det : model.detect_patch(p))
            merged.push_back(to_world(det, origin, vol.header.spacing));
    }
    merged = filter_small(merged, 3.0);
    std::stable_sort(merged.begin(), merged.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    merged = nms(merged, model.detect_config().nms_iou);
    std::vector<WorldDetection> out;
    out.reserve(merged.size());
    for (const auto& det : merged) out.push_back({vol.header.volume_id, det});
    return out;
}

namespace {

// Pools per-volume matching into one AP sweep by translating each volume's
// boxes far apart along x, so cross-volume IoU is exactly zero and the
// single-list machinery applies unchanged.
Scalar volume_offset(const std::map<std::string, int>& index, const std::string& id) {
    auto it = index.find(id);
    if (it == index.end()) return -1;
    return static_cast<Scalar>(it->second) * 1e7;
}

APReport pooled(const std::vector<WorldDetection>& dets, const std::vector<Annotation>& anns) {
    std::map<std::string, int> index;
    for (const auto& a : anns) index.emplace(a.volume_id, 0);
    for (const auto& d : dets) index.emplace(d.volume_id, 0);
    int next = 0;
    for (auto& [id, slot] : index) slot = next++;

    std::vector<Detection> dpool;
    dpool.reserve(dets.size());
    for (const auto& wd : dets) {
        Detection d = wd.det;
        d.box.cx += volume_offset(index, wd.volume_id);
        dpool.push_back(d);
    }
    std::vector<Box3> gpool;
    gpool.reserve(anns.size());
    for (const auto& a : anns)
        gpool.push_back({a.x_mm + volume_offset(index, a.volume_id), a.y_mm, a.z_mm,
                         a.diameter_mm});
    return ap_report(dpool, gpool);
}

}  // namespace

APReport pooled_ap_report(const std::vector<WorldDetection>& dets,
                          const std::vector<Annotation>& anns) {
    return pooled(dets, anns);
}

APReport small_nodule_ap_report(const std::vector<WorldDetection>& dets,
                                const std::vector<Annotation>& anns, Scalar max_diameter_mm) {
    std::vector<Annotation> small;
    for (const auto& a : anns)
        if (a.diameter_mm < max_diameter_mm) small.push_back(a);

    // a detection whose best-overlap GT is excluded is dropped, not an FP
    std::vector<WorldDetection> kept;
    for (const auto& wd : dets) {
        Box3 db = wd.det.box;
        Scalar best = 0;
        bool best_small = true;
        for (const auto& a : anns) {
            if (a.volume_id != wd.volume_id) continue;
            Scalar v = iou3d(db, {a.x_mm, a.y_mm, a.z_mm, a.diameter_mm});
            if (v > best) {
                best = v;
                best_small = a.diameter_mm < max_diameter_mm;
            }
        }
        if (best == 0 || best_small) kept.push_back(wd);
    }
    return pooled(kept, small);
}

APReport evaluate(Detector& model, const std::vector<Volume>& volumes,
                  const std::vector<Annotation>& anns, int64_t edge, Scalar window_lo,
                  Scalar window_hi) {
    std::vector<WorldDetection> dets;
    for (const auto& vol : volumes) {
        auto vd = infer_volume(model, vol, edge, window_lo, window_hi);
        dets.insert(dets.end(), vd.begin(), vd.end());
    }
    return pooled_ap_report(dets, anns);
}

}  // namespace nforge
