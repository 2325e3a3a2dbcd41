#pragma once

#include <random>

#include "detect.hpp"
#include "nn.hpp"
#include "roi_align.hpp"

namespace nforge {

struct DetectConfig {
    int64_t top_k = 128;        // RPN proposals kept before NMS
    Scalar nms_iou = 0.25;
    // Looser NMS between cascade stages: RPN scores are too flat to pick the
    // right member of an overlapping cluster, so keep the cluster and let the
    // refine heads re-rank before the final nms_iou pass.
    Scalar proposal_nms_iou = 0.5;
    Scalar score_thresh = 0.05; // RPN proposal floor
    int64_t roi_size = 4;       // RoI Align output edge
    // Context multiplier for refine-head crops. Inside its own extent a
    // too-small box on a large nodule looks like a well-fitted one; the
    // enlarged second crop shows the object spilling past the border.
    Scalar roi_context = 1.5;
};

struct RpnOut {
    Tensor score_logits;             // [n_anchors], generate_anchors order
    Tensor deltas;                   // [n_anchors, 4]
    std::vector<Tensor> proj_feats;  // per-level projected maps for RoI Align
};

// Shared per-anchor branch over the pyramid: per-level 1x1x1 projection to
// head_width + ReLU, then shared 1x1x1 score and delta convs (zero-init so an
// untrained head scores sigmoid(0) with zero deltas).
struct RpnHead {
    int64_t head_width = 0;
    int64_t n_scales = 0;  // per cell, same for every level
    std::vector<Conv3dLayer> proj;
    Conv3dLayer score;
    Conv3dLayer delta;

    static RpnHead make(const std::vector<int64_t>& level_channels, int64_t head_width,
                        int64_t n_scales, std::mt19937_64& rng);
    // pyramid maps are [1,C,D,H,W]; anchor ordering matches generate_anchors
    // for the pyramid's shape.
    RpnOut forward(const std::vector<Tensor>& pyramid);
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
};

struct RefineOut {
    Tensor score_logits;  // [n]
    Tensor deltas;        // [n, 4]
};

// Two-layer FC over the flattened aligned RoI: hidden + ReLU + dropout 0.5,
// then zero-init score/delta outputs.
struct RefineHead {
    LinearLayer fc1;
    LinearLayer score;
    LinearLayer delta;
    Scalar dropout_rate = 0.5;

    static RefineHead make(int64_t in_features, int64_t hidden, std::mt19937_64& rng);
    RefineOut forward(const Tensor& rois /*[n,in_features]*/, bool train,
                      std::mt19937_64& rng);
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
};

// Refine-head input for one proposal: the box crop concatenated with the
// roi_context-enlarged crop, flattened (2 * C * roi_size^3 features).
Tensor roi_with_context(const Tensor& feat, const Box3& box, const DetectConfig& dcfg);

// Inference-time cascade: RPN proposals (score floor, top-K, NMS), then each
// refine stage re-aligns RoIs on its proposal's level and re-decodes. Final
// detections carry last-stage scores; boxes are in the input-voxel frame.
std::vector<Detection> cascade_detect(const std::vector<Tensor>& pyramid,
                                      const PyramidShape& pshape,
                                      const std::vector<Anchor>& anchors, RpnHead& rpn,
                                      std::vector<RefineHead>& refine,
                                      const LossConfig& lcfg, const DetectConfig& dcfg);

}  // namespace nforge
