#pragma once

#include <random>

#include "volume.hpp"

namespace nforge {

struct SynthConfig {
    int n_volumes = 1;
    std::array<int64_t, 3> dims{64, 64, 64};   // (D,H,W)
    std::array<Scalar, 3> spacing{1, 1, 1};    // (x,y,z) mm
    int min_nodules = 1;
    int max_nodules = 3;
    Scalar min_diameter_mm = 4.0;
    Scalar max_diameter_mm = 12.0;
    Scalar background_hu = -850.0;  // parenchyma base
    Scalar contrast_hu = 900.0;     // bump height toward +50 HU
    Scalar noise_sigma = 50.0;
    std::string id_prefix = "vol";

    void validate() const;
};

struct SynthVolume {
    Volume volume;
    std::vector<Annotation> annotations;  // exact planted ground truth, mm frame
};

// Deterministic per seed. Nodules are smooth radial bumps (sigmoid falloff at
// radius d/2) on a noisy background, placed without mutual overlap; stored
// values use m=1, b=-1024. Throws on placement failure after bounded retries.
std::vector<SynthVolume> synth_generate(const SynthConfig& cfg, uint64_t seed);

}  // namespace nforge
