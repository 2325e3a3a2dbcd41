#pragma once

#include "boxes.hpp"
#include "tensor.hpp"

namespace nforge {

// 3D RoI Align: samples out^3 points at bin centers of `box` (feature-cell
// frame, voxel i covering [i, i+1)) from features [C,D,H,W] via trilinear
// interpolation; out-of-bounds reads 0. Differentiable w.r.t. features.
// Returns [C, out, out, out] with box axes (x,y,z) mapped to (W,H,D).
Tensor roi_align(const Tensor& features, const Box3& box, int64_t out);

}  // namespace nforge
