#pragma once

#include "csvio.hpp"
#include "model.hpp"

namespace nforge {

// Whole-volume inference: tile at stride edge/2, detect per patch, map to the
// mm frame, merge, drop sub-3mm boxes, NMS, sort by score.
std::vector<WorldDetection> infer_volume(Detector& model, const Volume& vol, int64_t edge,
                                         Scalar window_lo = -1000.0,
                                         Scalar window_hi = 400.0);

// Pooled AP over many volumes: detections and annotations are matched within
// their volume, the PR sweep runs over the pooled score list.
APReport pooled_ap_report(const std::vector<WorldDetection>& dets,
                          const std::vector<Annotation>& anns);

// Same, restricted to ground truth below max_diameter_mm; detections whose
// best-overlap GT is excluded are dropped rather than counted as FPs.
APReport small_nodule_ap_report(const std::vector<WorldDetection>& dets,
                                const std::vector<Annotation>& anns, Scalar max_diameter_mm);

APReport evaluate(Detector& model, const std::vector<Volume>& volumes,
                  const std::vector<Annotation>& anns, int64_t edge,
                  Scalar window_lo = -1000.0, Scalar window_hi = 400.0);

}  // namespace nforge
