#include "roi_align.hpp"

#include <cmath>
#include <stdexcept>

namespace nforge {

namespace {

// One trilinear sample: up to 8 (flat_index, weight) taps, OOB taps dropped.
struct Taps {
    int count = 0;
    int64_t idx[8];
    Scalar w[8];
};

Taps trilinear_taps(Scalar x, Scalar y, Scalar z, int64_t D, int64_t H, int64_t W) {
    // continuous coordinate -> voxel-center frame
    Scalar px = x - 0.5, py = y - 0.5, pz = z - 0.5;
    int64_t x0 = static_cast<int64_t>(std::floor(px));
    int64_t y0 = static_cast<int64_t>(std::floor(py));
    int64_t z0 = static_cast<int64_t>(std::floor(pz));
    Scalar fx = px - x0, fy = py - y0, fz = pz - z0;
    Taps t;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                int64_t xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
                if (xi < 0 || xi >= W || yi < 0 || yi >= H || zi < 0 || zi >= D) continue;
                Scalar w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                if (w == 0.0) continue;
                t.idx[t.count] = (zi * H + yi) * W + xi;
                t.w[t.count] = w;
                ++t.count;
            }
    return t;
}

}  // namespace

Tensor roi_align(const Tensor& features, const Box3& box, int64_t out) {
    if (features.shape().rank() != 4)
        throw std::invalid_argument("roi_align: features must be [C,D,H,W]");
    if (box.d <= 0) throw std::invalid_argument("roi_align: degenerate box");
    if (out < 1) throw std::invalid_argument("roi_align: out size must be >= 1");
    int64_t C = features.shape()[0], D = features.shape()[1], H = features.shape()[2],
            W = features.shape()[3];
    int64_t spatial = D * H * W;
    int64_t n_bins = out * out * out;

    // Precompute taps once per bin; reused across channels forward+backward.
    std::vector<Taps> taps(static_cast<size_t>(n_bins));
    Scalar lo_x = box.cx - box.d / 2, lo_y = box.cy - box.d / 2, lo_z = box.cz - box.d / 2;
    Scalar bin = box.d / static_cast<Scalar>(out);
    for (int64_t k = 0; k < out; ++k)
        for (int64_t j = 0; j < out; ++j)
            for (int64_t i = 0; i < out; ++i)
                taps[static_cast<size_t>((k * out + j) * out + i)] =
                    trilinear_taps(lo_x + (i + 0.5) * bin, lo_y + (j + 0.5) * bin,
                                   lo_z + (k + 0.5) * bin, D, H, W);

    const auto& fv = features.values();
    std::vector<Scalar> vals(static_cast<size_t>(C * n_bins), 0.0);
    for (int64_t c = 0; c < C; ++c) {
        const Scalar* src = fv.data() + c * spatial;
        Scalar* dst = vals.data() + c * n_bins;
        for (int64_t b = 0; b < n_bins; ++b) {
            const Taps& t = taps[static_cast<size_t>(b)];
            Scalar acc = 0.0;
            for (int n = 0; n < t.count; ++n) acc += t.w[n] * src[t.idx[n]];
            dst[b] = acc;
        }
    }

    return Tensor::from_op(
        Shape{C, out, out, out}, std::move(vals), {features},
        [fn = features.node(), taps = std::move(taps), C, spatial,
         n_bins](detail::TensorData& self) {
            auto& g = fn->ensure_grad();
            for (int64_t c = 0; c < C; ++c) {
                const Scalar* go = self.grad.data() + c * n_bins;
                Scalar* dst = g.data() + c * spatial;
                for (int64_t b = 0; b < n_bins; ++b) {
                    const Taps& t = taps[static_cast<size_t>(b)];
                    for (int n = 0; n < t.count; ++n) dst[t.idx[n]] += go[b] * t.w[n];
                }
            }
        });
}

}  // namespace nforge
