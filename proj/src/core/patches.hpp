#pragma once

#include <random>

#include "boxes.hpp"
#include "volume.hpp"

namespace nforge {

struct Patch {
    int64_t edge = 0;
    std::array<int64_t, 3> origin{};   // (x,y,z) voxel offset in the parent
    std::vector<Scalar> voxels;        // edge^3 normalized intensities, W fastest
    std::vector<Box3> boxes;           // patch voxel frame, diameters in voxels
    std::string volume_id;
};

// Sliding-window tiling at the given stride; the last window per axis is
// clamped flush to the boundary so every voxel is covered. A nodule belongs
// to the patches whose extent contains its center. Intensities are
// normalized HU under the given window.
std::vector<Patch> extract_patches(const Volume& vol, const std::vector<Annotation>& anns,
                                   int64_t edge, int64_t stride, Scalar window_lo = -1000.0,
                                   Scalar window_hi = 400.0);

// Positive-sample augmentation: uniform rescale in [0.75, 1.25] about the
// patch center (trilinear, clamp-to-edge), independent 50% flips per axis,
// and a random 90-degree-multiple rotation about z. Annotations transform
// consistently; nodule count is preserved.
Patch augment(const Patch& p, std::mt19937_64& rng);

}  // namespace nforge
