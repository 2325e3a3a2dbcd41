#pragma once

#include <map>
#include <random>

#include "nn.hpp"

namespace nforge {

enum class Variant { serial, hrnet, pro_hrnet };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

struct StreamSpec {
    int resolution_level = 0;  // spatial extent = input / 2^r
    int64_t width = 0;
    int block_count = 2;
    int64_t dilation = 1;
};

struct StageSpec {
    std::vector<StreamSpec> streams;  // resolution_level strictly increasing
};

struct BackboneConfig {
    Variant variant = Variant::hrnet;
    int64_t base_width = 8;
    int blocks_per_stream = 2;
    bool fusion = true;     // full pairwise exchange at every stage end
    bool batchnorm = true;
    std::vector<StageSpec> stages;  // stage s holds s+1 streams

    void validate() const;
};

// Four stages, widths doubling per level, dilation 1 everywhere. make_pro
// turns the result into the dilated variant.
BackboneConfig make_config(Variant variant, int64_t base_width = 8,
                           int blocks_per_stream = 2);

// Dilation 2 on the highest-resolution stream's convs in stages 3-4;
// parameter shapes unchanged. Idempotent; serial input is rejected.
BackboneConfig make_pro(const BackboneConfig& cfg);

struct FeaturePyramid {
    std::vector<Tensor> levels;    // highest resolution first
    std::vector<int64_t> strides;  // 2^r per level
};

// One full-pairwise exchange unit: out_r = sum_q path(q->r) where the path is
// identity + 1x1 conv (q==r), nearest-upsample + 1x1 conv (q>r), or a chain
// of stride-2 3^3 convs (q<r).
struct ExchangeUnit {
    struct Path {
        std::vector<Conv3dLayer> down;  // stride-2 chain for q<r, else empty
        Conv3dLayer mix;                // 1x1 conv, used when down is empty
    };
    std::vector<std::vector<Path>> paths;  // [target r][source q]

    static ExchangeUnit make(const std::vector<int64_t>& widths, std::mt19937_64& rng);
    std::vector<Tensor> forward(const std::vector<Tensor>& feats) const;
    void params(const std::string& prefix, std::vector<NamedTensor>& out);
};

std::vector<Tensor> exchange_fuse(const ExchangeUnit& unit, const std::vector<Tensor>& feats);

class Backbone {
  public:
    static Backbone build(const BackboneConfig& cfg, uint64_t seed);

    // patch is [N,1,D,H,W]; D,H,W must be divisible by 2^(stages-1).
    FeaturePyramid forward(const Tensor& patch, bool train);

    const BackboneConfig& config() const { return cfg_; }
    std::vector<int64_t> level_widths() const;
    std::vector<NamedTensor> params();
    int64_t param_count();
    std::vector<NamedTensor> buffers();
    void load_buffers(const std::map<std::string, Tensor>& src);

  private:
    BackboneConfig cfg_;
    ConvBlock stem_;
    // blocks_[s][r] is the conv stack of stream r in stage s
    std::vector<std::vector<std::vector<ConvBlock>>> blocks_;
    std::vector<ConvBlock> transitions_;    // new stream at stage s (index s-1)
    std::vector<ExchangeUnit> exchanges_;   // per stage when fusion is on

    FeaturePyramid forward_serial(const Tensor& patch, bool train);
    FeaturePyramid forward_parallel(const Tensor& patch, bool train);
};

}  // namespace nforge
