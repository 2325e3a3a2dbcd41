#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace nforge {

// Axis-aligned cube: center (cx,cy,cz) and edge length d, in a coordinate
// frame carried by the caller (voxel or mm). Realization: [c-d/2, c+d/2]^3.
struct Box3 {
    Scalar cx = 0, cy = 0, cz = 0;
    Scalar d = 0;
};

// Volume IoU of two axis-aligned cubes; 0 when disjoint.
Scalar iou3d(const Box3& a, const Box3& b);

struct Detection {
    Box3 box;
    Scalar score = 0;  // in [0,1]
    int stage = 0;     // producing cascade stage
};

// Greedy NMS: keep highest score, drop IoU > thresh against a kept box.
// Ties break by input order (stable).
std::vector<Detection> nms(const std::vector<Detection>& dets, Scalar iou_thresh);

// Drops detections with physical diameter below min_diameter_mm; boundary
// kept. Boxes are assumed to already be in the mm frame.
std::vector<Detection> filter_small(const std::vector<Detection>& dets,
                                    Scalar min_diameter_mm = 3.0);

// Patch-voxel frame -> volume mm frame. Cube edge scales by the mean spacing.
Detection to_world(const Detection& det, const std::array<Scalar, 3>& patch_origin_voxels,
                   const std::array<Scalar, 3>& spacing_mm);

}  // namespace nforge
