#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace nforge {

// Coordinate conventions: dims are (D,H,W) = (z,y,x) array extents; spacing
// is carried as (x,y,z) mm per voxel. Continuous voxel coordinate u has the
// center of voxel index i at u = i + 0.5; mm = u * spacing.
struct VolumeHeader {
    std::array<int64_t, 3> dims{};      // (D,H,W)
    std::array<Scalar, 3> spacing{};    // (x,y,z) mm
    Scalar rescale_slope = 1.0;         // m of the stored-value affine map
    Scalar rescale_intercept = -1024.0; // b
    std::string volume_id;

    int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
    void validate() const;
};

struct Volume {
    VolumeHeader header;
    std::vector<int16_t> sv;  // stored values, W fastest-varying

    std::vector<Scalar> hu() const;  // m * SV + b, exact
};

struct Annotation {
    std::string volume_id;
    Scalar x_mm = 0, y_mm = 0, z_mm = 0;
    Scalar diameter_mm = 0;
};

Scalar rescale_to_hu(Scalar sv, Scalar m, Scalar b);

// Clamp to [lo, hi] then map linearly onto [0,1].
std::vector<Scalar> normalize(const std::vector<Scalar>& hu, Scalar lo = -1000.0,
                              Scalar hi = 400.0);

// Sidecar JSON header (volume_id, dims [D,H,W], spacing_mm [z,y,x],
// rescale_slope, rescale_intercept, raw_file) + raw little-endian int16
// payload. base_path gets ".json"/".raw" appended; read takes the .json path.
void write_volume(const std::string& base_path, const Volume& v);
Volume read_volume(const std::string& json_path);

}  // namespace nforge
