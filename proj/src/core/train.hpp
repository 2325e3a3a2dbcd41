#pragma once

#include <random>

#include "csvio.hpp"
#include "model.hpp"

namespace nforge {

// SGD with classical momentum: v <- momentum*v + g; w <- w - lr*v.
// Velocity slots are allocated on first step and keyed by parameter order.
struct Sgd {
    Scalar lr = 0.01;
    Scalar momentum = 0.9;
    std::vector<std::vector<Scalar>> velocity;

    void step(std::vector<NamedTensor>& params);
};

struct TrainOptions {
    std::string out_dir;  // checkpoints + epoch log land here; "" = no files

    // optional whole-volume validation, reported per epoch in the log
    const std::vector<Volume>* val_volumes = nullptr;
    const std::vector<Annotation>* val_annotations = nullptr;
    int64_t eval_edge = 64;
    Scalar window_lo = -1000.0;
    Scalar window_hi = 400.0;

    // optional held-out patches scored (loss only) per epoch
    const std::vector<Patch>* val_patches = nullptr;

    // path prefix of a checkpoint written by a previous run; training resumes
    // bitwise from the epoch after it
    std::string resume_from;
};

// Runs the full schedule and returns one log row per epoch actually trained.
// Throws on a non-finite batch loss, naming the epoch, batch, and seed.
std::vector<EpochLog> train(Detector& model, const std::vector<Patch>& patches,
                            const TrainConfig& cfg, const TrainOptions& opts);

}  // namespace nforge
