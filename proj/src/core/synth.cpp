#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nforge {

void SynthConfig::validate() const {
    if (n_volumes < 1) throw std::invalid_argument("SynthConfig: n_volumes must be >= 1");
    for (int64_t d : dims)
        if (d < 8) throw std::invalid_argument("SynthConfig: dims too small");
    for (Scalar s : spacing)
        if (!(s > 0)) throw std::invalid_argument("SynthConfig: spacing must be > 0");
    if (min_nodules < 0 || max_nodules < min_nodules)
        throw std::invalid_argument("SynthConfig: bad nodule count range");
    if (!(min_diameter_mm > 0) || max_diameter_mm < min_diameter_mm)
        throw std::invalid_argument("SynthConfig: bad diameter range");
    Scalar mean_sp = (spacing[0] + spacing[1] + spacing[2]) / 3.0;
    if (min_diameter_mm / mean_sp < 2.0)
        throw std::invalid_argument("SynthConfig: diameters must span >= 2 voxels");
    if (noise_sigma < 0) throw std::invalid_argument("SynthConfig: negative noise sigma");
}

namespace {

struct Planted {
    Scalar x, y, z, d;  // voxel frame
};

}  // namespace

std::vector<SynthVolume> synth_generate(const SynthConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    Scalar mean_sp = (cfg.spacing[0] + cfg.spacing[1] + cfg.spacing[2]) / 3.0;
    int64_t D = cfg.dims[0], H = cfg.dims[1], W = cfg.dims[2];

    std::vector<SynthVolume> out;
    for (int v = 0; v < cfg.n_volumes; ++v) {
        SynthVolume sv;
        sv.volume.header.dims = cfg.dims;
        sv.volume.header.spacing = cfg.spacing;
        sv.volume.header.rescale_slope = 1.0;
        sv.volume.header.rescale_intercept = -1024.0;
        sv.volume.header.volume_id = cfg.id_prefix + std::to_string(v);

        std::vector<Scalar> hu(static_cast<size_t>(D * H * W), cfg.background_hu);
        std::normal_distribution<Scalar> noise(0.0, cfg.noise_sigma);
        if (cfg.noise_sigma > 0)
            for (auto& h : hu) h += noise(rng);

        int n_nodules =
            std::uniform_int_distribution<int>(cfg.min_nodules, cfg.max_nodules)(rng);
        std::uniform_real_distribution<Scalar> ddist(cfg.min_diameter_mm, cfg.max_diameter_mm);
        std::vector<Planted> planted;
        for (int n = 0; n < n_nodules; ++n) {
            Scalar d_mm = ddist(rng);
            Scalar d_vox = d_mm / mean_sp;
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                Scalar margin = d_vox / 2 + 1.0;
                auto cdist = [&](int64_t dim) {
                    return std::uniform_real_distribution<Scalar>(
                        margin, static_cast<Scalar>(dim) - margin)(rng);
                };
                Planted p{cdist(W), cdist(H), cdist(D), d_vox};
                bool clash = false;
                for (const auto& q : planted) {
                    Scalar dist = std::sqrt((p.x - q.x) * (p.x - q.x) +
                                            (p.y - q.y) * (p.y - q.y) +
                                            (p.z - q.z) * (p.z - q.z));
                    if (dist < (p.d + q.d) / 2 + 2.0) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                planted.push_back(p);
                placed = true;
            }
            if (!placed)
                throw std::runtime_error(
                    "synth_generate: could not place non-overlapping nodule in " +
                    sv.volume.header.volume_id);
        }

        for (const auto& p : planted) {
            // sigmoid radial falloff: ~contrast inside, 0.5*contrast at r = d/2
            Scalar radius = p.d / 2;
            Scalar width = std::clamp<Scalar>(p.d / 16.0, 0.35, 1.0);
            Scalar reach = radius + 6.0 * width;
            int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(p.x - reach));
            int64_t x1 = std::min<int64_t>(W - 1, static_cast<int64_t>(p.x + reach) + 1);
            int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(p.y - reach));
            int64_t y1 = std::min<int64_t>(H - 1, static_cast<int64_t>(p.y + reach) + 1);
            int64_t z0 = std::max<int64_t>(0, static_cast<int64_t>(p.z - reach));
            int64_t z1 = std::min<int64_t>(D - 1, static_cast<int64_t>(p.z + reach) + 1);
            for (int64_t z = z0; z <= z1; ++z)
                for (int64_t y = y0; y <= y1; ++y)
                    for (int64_t x = x0; x <= x1; ++x) {
                        Scalar dx = x + 0.5 - p.x, dy = y + 0.5 - p.y, dz = z + 0.5 - p.z;
                        Scalar r = std::sqrt(dx * dx + dy * dy + dz * dz);
                        hu[static_cast<size_t>((z * H + y) * W + x)] +=
                            cfg.contrast_hu / (1.0 + std::exp((r - radius) / width));
                    }
            Annotation a;
            a.volume_id = sv.volume.header.volume_id;
            a.x_mm = p.x * cfg.spacing[0];
            a.y_mm = p.y * cfg.spacing[1];
            a.z_mm = p.z * cfg.spacing[2];
            a.diameter_mm = p.d * mean_sp;
            sv.annotations.push_back(a);
        }

        sv.volume.sv.resize(hu.size());
        for (size_t i = 0; i < hu.size(); ++i) {
            Scalar stored = std::round(hu[i] + 1024.0);  // m=1, b=-1024
            sv.volume.sv[i] = static_cast<int16_t>(std::clamp<Scalar>(stored, -32768, 32767));
        }
        out.push_back(std::move(sv));
    }
    return out;
}

}  // namespace nforge
