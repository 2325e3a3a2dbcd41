#pragma once

#include <map>

#include "backbone.hpp"
#include "config.hpp"
#include "heads.hpp"
#include "patches.hpp"

namespace nforge {

// Full detector: backbone pyramid -> RPN over anchors -> cascade refinement.
class Detector {
  public:
    static Detector build(const PipelineConfig& cfg, uint64_t seed);

    // Mean Eq.-6 loss over a batch of patches (train mode: batchnorm updates,
    // dropout active, negatives sampled through rng).
    Tensor batch_loss(const std::vector<const Patch*>& batch, const TrainConfig& tcfg,
                      std::mt19937_64& rng);

    // Eval-mode detection on one patch; boxes in the patch voxel frame.
    std::vector<Detection> detect_patch(const Patch& p);

    std::vector<NamedTensor> params();
    std::vector<NamedTensor> buffers();
    void save(const std::string& path);  // params + buffers, one container
    void load(const std::string& path);

    const std::vector<Anchor>& anchors_for(int64_t edge);
    PyramidShape pyramid_shape(int64_t edge) const;

    Backbone& backbone() { return backbone_; }
    const LossConfig& loss_config() const { return loss_; }
    const DetectConfig& detect_config() const { return detect_; }

  private:
    Backbone backbone_;
    RpnHead rpn_;
    std::vector<RefineHead> refine_;
    LossConfig loss_;
    DetectConfig detect_;
    std::vector<std::vector<Scalar>> anchor_scales_;
    std::map<int64_t, std::vector<Anchor>> anchor_cache_;

    Tensor patch_loss(const Patch& p, const TrainConfig& tcfg, std::mt19937_64& rng);
};

}  // namespace nforge
