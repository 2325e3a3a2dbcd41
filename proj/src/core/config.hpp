#pragma once

#include <string>

#include "backbone.hpp"
#include "detect.hpp"
#include "heads.hpp"
#include "synth.hpp"

namespace nforge {

struct TrainConfig {
    Scalar lr = 0.01;
    Scalar momentum = 0.9;
    int lr_decay_epoch = 20;   // lr *= lr_decay from this epoch on
    Scalar lr_decay = 0.1;
    int batch_size = 4;        // paper trains with 8; desk default 4
    int epochs = 30;
    Scalar dropout = 0.5;
    uint64_t seed = 0;
    bool augment = true;
    int neg_per_pos = 4;       // sampled negative anchors per positive
    int min_neg = 16;          // floor when a patch has no positives
    int refine_proposals = 8;  // proposals fed to each refine stage in training
    Scalar grad_clip = 5.0;    // global grad-norm ceiling (0 = off)
    int patches_per_epoch = 0; // cap on patches visited per epoch (0 = all)
    int bn_freeze_epoch = 0;   // freeze batchnorm running stats from this epoch (0 = never)
    Scalar ema_decay = 0;      // per-step weight EMA used for eval + final model (0 = off)
    int val_volumes = 6;       // test volumes scored per epoch for the AP log (0 = off)

    void validate() const;
};

// Everything the CLI needs, one file. TOML-subset: [section] headers,
// key = value with numbers, strings, booleans, and (nested) numeric arrays.
struct PipelineConfig {
    // [data]
    std::string data_dir = "data";
    int64_t patch_edge = 32;  // training patch edge
    int64_t eval_edge = 64;   // inference tiling edge (stride edge/2)
    Scalar window_lo = -1000.0;
    Scalar window_hi = 400.0;
    Scalar negative_patch_fraction = 0.25;  // extra all-background patches

    // [synth]
    SynthConfig synth;

    // [split]
    std::string split_kind = "holdout";
    int split_k = 10;

    // [model]
    std::string variant = "pro_hrnet";
    int64_t base_width = 4;
    int blocks_per_stream = 1;
    int64_t head_width = 16;
    int64_t refine_hidden = 64;
    std::vector<std::vector<Scalar>> anchor_scales{{4}, {6}, {9}, {13}};

    // [loss] / [detect]
    LossConfig loss;
    DetectConfig detect;

    // [train]
    TrainConfig train;

    BackboneConfig backbone_config() const;
    void validate() const;
};

PipelineConfig load_config(const std::string& path);
PipelineConfig parse_config_text(const std::string& text);  // throws on errors

}  // namespace nforge
