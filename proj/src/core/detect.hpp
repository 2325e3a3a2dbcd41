#pragma once

#include <array>
#include <optional>

#include "boxes.hpp"
#include "tensor.hpp"

namespace nforge {

// One pyramid level as the anchor generator sees it: cell grid (nx,ny,nz)
// and the stride back to input voxels.
struct LevelShape {
    std::array<int64_t, 3> cells{};
    int64_t stride = 1;
};
using PyramidShape = std::vector<LevelShape>;

struct Anchor {
    Box3 box;  // input-voxel frame, center (cell + 0.5) * stride
    int level = 0;
    std::array<int64_t, 3> cell{};
    int scale = 0;  // index into the level's scale list
};

enum class AnchorLabel { positive, negative, ignored };

struct Assignment {
    AnchorLabel label = AnchorLabel::ignored;
    std::optional<int64_t> matched_gt;  // present iff positive
    Scalar iou = 0;
};

struct RegressionTarget {
    Scalar tx = 0, ty = 0, tz = 0, td = 0;
};

struct LossConfig {
    Scalar lambda = 0.5;
    Scalar pos_iou = 0.5;
    Scalar neg_iou = 0.2;
    Scalar w_pos = 1.0;
    Scalar w_neg = 1.0;
    std::vector<Scalar> cascade_ious{0.5, 0.6, 0.7};

    void validate() const;  // throws std::invalid_argument on bad thresholds
};

// One anchor per (level, cell, scale); ordering is level-major, cells swept
// k,j,i (x fastest), scales innermost. scales[l] are diameters in voxels.
std::vector<Anchor> generate_anchors(const PyramidShape& shape,
                                     const std::vector<std::vector<Scalar>>& scales);

// Threshold rule: IoU > pos_iou positive (argmax GT), < neg_iou negative,
// otherwise ignored. Each GT's single best-IoU anchor is promoted to
// positive so no GT goes unmatched.
std::vector<Assignment> assign(const std::vector<Anchor>& anchors,
                               const std::vector<Box3>& gts, const LossConfig& cfg);

// Faster-R-CNN parameterization adapted to cubes:
// t = ((gt.c - a.c)/a.d per axis, ln(gt.d/a.d)).
RegressionTarget encode(const Box3& gt, const Box3& anchor);
Box3 decode(const RegressionTarget& t, const Box3& anchor);

// Per-batch positive-class weight: clamp(n_neg/n_pos, 1, 50); 1 when no
// positives.
Scalar balance_weight(int64_t n_pos, int64_t n_neg);

Scalar smooth_l1(Scalar delta);  // 0.5 d^2 for |d|<1, |d|-0.5 otherwise

// Weighted BCE, mean over elements. p holds probabilities (clamped to
// [1e-7, 1-1e-7] inside); p_star entries are 0 or 1; weight w_pos/w_neg by
// label. Differentiable w.r.t. p.
Tensor cls_loss(const Tensor& p, const std::vector<Scalar>& p_star, const LossConfig& cfg);

// Sum of smooth-L1 over the 4 coordinates, mean over rows. t is [n,4],
// differentiable; t_star are constants.
Tensor reg_loss(const Tensor& t, const std::vector<RegressionTarget>& t_star);

// lambda * cls over all scored anchors + reg averaged over positives
// (t/t_star rows are the positives only; zero contribution if none).
Tensor total_loss(const Tensor& p, const std::vector<Scalar>& p_star, const Tensor& t_pos,
                  const std::vector<RegressionTarget>& t_star_pos, const LossConfig& cfg);

}  // namespace nforge
