#include "patches.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nforge {

namespace {

std::vector<int64_t> window_starts(int64_t dim, int64_t edge, int64_t stride) {
    std::vector<int64_t> out;
    for (int64_t s = 0; s + edge < dim; s += stride) out.push_back(s);
    out.push_back(dim - edge);  // clamp the final window flush to the boundary
    return out;
}

inline size_t vox_index(int64_t x, int64_t y, int64_t z, int64_t H, int64_t W) {
    return static_cast<size_t>((z * H + y) * W + x);
}

// trilinear sample at continuous coordinate (voxel i center = i + 0.5),
// clamp-to-edge
Scalar sample(const std::vector<Scalar>& v, int64_t P, Scalar x, Scalar y, Scalar z) {
    auto clampi = [P](int64_t i) { return std::clamp<int64_t>(i, 0, P - 1); };
    Scalar px = x - 0.5, py = y - 0.5, pz = z - 0.5;
    int64_t x0 = static_cast<int64_t>(std::floor(px));
    int64_t y0 = static_cast<int64_t>(std::floor(py));
    int64_t z0 = static_cast<int64_t>(std::floor(pz));
    Scalar fx = px - x0, fy = py - y0, fz = pz - z0;
    Scalar acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                Scalar w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                acc += w * v[vox_index(clampi(x0 + dx), clampi(y0 + dy), clampi(z0 + dz), P, P)];
            }
    return acc;
}

}  // namespace

std::vector<Patch> extract_patches(const Volume& vol, const std::vector<Annotation>& anns,
                                   int64_t edge, int64_t stride, Scalar window_lo,
                                   Scalar window_hi) {
    vol.header.validate();
    const auto& dims = vol.header.dims;  // (D,H,W)
    if (stride < 1) throw std::invalid_argument("extract_patches: stride must be >= 1");
    if (edge < 1 || edge > dims[0] || edge > dims[1] || edge > dims[2])
        throw std::invalid_argument("extract_patches: edge must fit inside the volume");

    std::vector<Scalar> norm = normalize(vol.hu(), window_lo, window_hi);
    const auto& sp = vol.header.spacing;  // (x,y,z)
    Scalar mean_sp = (sp[0] + sp[1] + sp[2]) / 3.0;

    // annotations to volume voxel frame
    struct VoxAnn {
        Scalar x, y, z, d;
    };
    std::vector<VoxAnn> vans;
    for (const auto& a : anns) {
        if (a.volume_id != vol.header.volume_id) continue;
        vans.push_back({a.x_mm / sp[0], a.y_mm / sp[1], a.z_mm / sp[2], a.diameter_mm / mean_sp});
    }

    auto xs = window_starts(dims[2], edge, stride);
    auto ys = window_starts(dims[1], edge, stride);
    auto zs = window_starts(dims[0], edge, stride);
    int64_t H = dims[1], W = dims[2];

    std::vector<Patch> patches;
    for (int64_t z0 : zs)
        for (int64_t y0 : ys)
            for (int64_t x0 : xs) {
                Patch p;
                p.edge = edge;
                p.origin = {x0, y0, z0};
                p.volume_id = vol.header.volume_id;
                p.voxels.resize(static_cast<size_t>(edge * edge * edge));
                for (int64_t z = 0; z < edge; ++z)
                    for (int64_t y = 0; y < edge; ++y) {
                        const Scalar* src = &norm[vox_index(x0, y0 + y, z0 + z, H, W)];
                        std::copy(src, src + edge,
                                  &p.voxels[vox_index(0, y, z, edge, edge)]);
                    }
                for (const auto& a : vans)
                    if (a.x >= x0 && a.x < x0 + edge && a.y >= y0 && a.y < y0 + edge &&
                        a.z >= z0 && a.z < z0 + edge)
                        p.boxes.push_back({a.x - x0, a.y - y0, a.z - z0, a.d});
                patches.push_back(std::move(p));
            }
    return patches;
}

Patch augment(const Patch& p, std::mt19937_64& rng) {
    int64_t P = p.edge;
    Scalar C = static_cast<Scalar>(P) / 2.0;
    std::uniform_real_distribution<Scalar> sdist(0.75, 1.25);
    Scalar s = sdist(rng);
    bool flip[3];
    for (bool& f : flip) f = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    int rot = std::uniform_int_distribution<int>(0, 3)(rng);

    Patch out;
    out.edge = P;
    out.origin = p.origin;
    out.volume_id = p.volume_id;

    // 1) uniform rescale about the center, trilinear resample back to edge P
    std::vector<Scalar> scaled(p.voxels.size());
    for (int64_t z = 0; z < P; ++z)
        for (int64_t y = 0; y < P; ++y)
            for (int64_t x = 0; x < P; ++x)
                scaled[vox_index(x, y, z, P, P)] =
                    sample(p.voxels, P, C + (x + 0.5 - C) / s, C + (y + 0.5 - C) / s,
                           C + (z + 0.5 - C) / s);
    std::vector<Box3> boxes;
    for (const auto& b : p.boxes)
        boxes.push_back({C + (b.cx - C) * s, C + (b.cy - C) * s, C + (b.cz - C) * s, b.d * s});

    // 2) independent axis flips (exact index reversal)
    std::vector<Scalar> flipped(scaled.size());
    for (int64_t z = 0; z < P; ++z)
        for (int64_t y = 0; y < P; ++y)
            for (int64_t x = 0; x < P; ++x) {
                int64_t sx = flip[0] ? P - 1 - x : x;
                int64_t sy = flip[1] ? P - 1 - y : y;
                int64_t sz = flip[2] ? P - 1 - z : z;
                flipped[vox_index(x, y, z, P, P)] = scaled[vox_index(sx, sy, sz, P, P)];
            }
    for (auto& b : boxes) {
        if (flip[0]) b.cx = P - b.cx;
        if (flip[1]) b.cy = P - b.cy;
        if (flip[2]) b.cz = P - b.cz;
    }

    // 3) rotation about z by rot * 90 degrees: (x,y) -> (P-y, x) per step
    std::vector<Scalar> cur = std::move(flipped);
    for (int r = 0; r < rot; ++r) {
        std::vector<Scalar> next(cur.size());
        for (int64_t z = 0; z < P; ++z)
            for (int64_t y = 0; y < P; ++y)
                for (int64_t x = 0; x < P; ++x)
                    next[vox_index(x, y, z, P, P)] = cur[vox_index(y, P - 1 - x, z, P, P)];
        cur = std::move(next);
        for (auto& b : boxes) {
            Scalar nx = P - b.cy, ny = b.cx;
            b.cx = nx;
            b.cy = ny;
        }
    }
    out.voxels = std::move(cur);
    out.boxes = std::move(boxes);
    return out;
}

}  // namespace nforge
