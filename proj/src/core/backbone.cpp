#include "backbone.hpp"

#include <stdexcept>

namespace nforge {

Variant variant_from_string(const std::string& s) {
    if (s == "serial") return Variant::serial;
    if (s == "hrnet") return Variant::hrnet;
    if (s == "pro_hrnet") return Variant::pro_hrnet;
    throw std::invalid_argument("unknown backbone variant: " + s);
}

std::string variant_to_string(Variant v) {
    switch (v) {
        case Variant::serial: return "serial";
        case Variant::hrnet: return "hrnet";
        case Variant::pro_hrnet: return "pro_hrnet";
    }
    throw std::logic_error("bad variant");
}

void BackboneConfig::validate() const {
    if (base_width < 1 || blocks_per_stream < 1)
        throw std::invalid_argument("BackboneConfig: width and block count must be >= 1");
    if (stages.empty()) throw std::invalid_argument("BackboneConfig: no stages");
    for (size_t s = 0; s < stages.size(); ++s) {
        const auto& st = stages[s].streams;
        size_t want = variant == Variant::serial ? 1 : s + 1;
        if (st.size() != want)
            throw std::invalid_argument("BackboneConfig: stage stream count mismatch");
        for (size_t r = 0; r < st.size(); ++r) {
            if (st[r].width < 1 || st[r].dilation < 1 || st[r].block_count < 1)
                throw std::invalid_argument("BackboneConfig: bad stream spec");
            if (r > 0 && st[r].resolution_level <= st[r - 1].resolution_level)
                throw std::invalid_argument(
                    "BackboneConfig: resolution levels must strictly increase");
            // widths must be consistent per resolution level across stages
            int64_t want_w = base_width << st[r].resolution_level;
            if (st[r].width != want_w)
                throw std::invalid_argument("BackboneConfig: inconsistent stream width");
        }
    }
}

BackboneConfig make_config(Variant variant, int64_t base_width, int blocks_per_stream) {
    BackboneConfig cfg;
    cfg.variant = variant;
    cfg.base_width = base_width;
    cfg.blocks_per_stream = blocks_per_stream;
    for (int s = 0; s < 4; ++s) {
        StageSpec stage;
        int n_streams = variant == Variant::serial ? 1 : s + 1;
        for (int r = 0; r < n_streams; ++r) {
            StreamSpec sp;
            sp.resolution_level = variant == Variant::serial ? s : r;
            sp.width = base_width << sp.resolution_level;
            sp.block_count = blocks_per_stream;
            sp.dilation = 1;
            stage.streams.push_back(sp);
        }
        cfg.stages.push_back(stage);
    }
    cfg.validate();
    return cfg;
}

BackboneConfig make_pro(const BackboneConfig& cfg) {
    if (cfg.variant == Variant::serial)
        throw std::invalid_argument("make_pro: expects an hrnet config");
    BackboneConfig out = cfg;
    out.variant = Variant::pro_hrnet;
    for (size_t s = 2; s < out.stages.size(); ++s)
        out.stages[s].streams[0].dilation = 2;
    out.validate();
    return out;
}

ExchangeUnit ExchangeUnit::make(const std::vector<int64_t>& widths, std::mt19937_64& rng) {
    ExchangeUnit u;
    size_t n = widths.size();
    u.paths.resize(n);
    for (size_t r = 0; r < n; ++r) {
        u.paths[r].resize(n);
        for (size_t q = 0; q < n; ++q) {
            Path& p = u.paths[r][q];
            if (q < r) {
                // higher-res source: chain of r-q stride-2 convs; the last
                // one maps to the target width
                int64_t cin = widths[q];
                for (size_t step = q; step < r; ++step) {
                    int64_t cout = step + 1 == r ? widths[r] : cin;
                    p.down.push_back(Conv3dLayer::make(cin, cout, ConvSpec::same(3, 1, 2), rng));
                    cin = cout;
                }
            } else {
                // same res (identity) or lower-res source (nearest upsample),
                // then a 1x1 mix conv
                p.mix = Conv3dLayer::make(widths[q], widths[r], ConvSpec::same(1), rng);
            }
        }
    }
    return u;
}

std::vector<Tensor> ExchangeUnit::forward(const std::vector<Tensor>& feats) const {
    if (feats.size() != paths.size())
        throw std::invalid_argument("ExchangeUnit: stream count mismatch");
    for (const auto& f : feats)
        if (f.shape().rank() != 5 || f.shape()[0] != feats[0].shape()[0])
            throw std::invalid_argument("ExchangeUnit: mismatched batch shapes");
    std::vector<Tensor> out;
    for (size_t r = 0; r < paths.size(); ++r) {
        Tensor acc;
        for (size_t q = 0; q < paths.size(); ++q) {
            const Path& p = paths[r][q];
            Tensor y = feats[q];
            if (q < r) {
                for (const auto& conv : p.down) y = conv.forward(y);
            } else {
                if (q > r) y = upsample_nearest(y, int64_t{1} << (q - r));
                y = p.mix.forward(y);
            }
            acc = acc.defined() ? add(acc, y) : y;
        }
        out.push_back(acc);
    }
    return out;
}

void ExchangeUnit::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (size_t r = 0; r < paths.size(); ++r)
        for (size_t q = 0; q < paths.size(); ++q) {
            std::string base =
                prefix + ".to" + std::to_string(r) + ".from" + std::to_string(q);
            Path& p = paths[r][q];
            for (size_t i = 0; i < p.down.size(); ++i)
                p.down[i].params(base + ".down" + std::to_string(i), out);
            if (p.down.empty()) p.mix.params(base + ".mix", out);
        }
}

std::vector<Tensor> exchange_fuse(const ExchangeUnit& unit, const std::vector<Tensor>& feats) {
    return unit.forward(feats);
}

Backbone Backbone::build(const BackboneConfig& cfg, uint64_t seed) {
    cfg.validate();
    Backbone b;
    b.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    bool bn = cfg.batchnorm;
    b.stem_ = ConvBlock::make(1, cfg.base_width, ConvSpec::same(3), bn, rng);
    for (size_t s = 0; s < cfg.stages.size(); ++s) {
        const auto& streams = cfg.stages[s].streams;
        if (s > 0) {
            // new stream from the previous stage's lowest-resolution one
            const auto& prev = cfg.stages[s - 1].streams.back();
            const auto& nw = streams.back();
            b.transitions_.push_back(
                ConvBlock::make(prev.width, nw.width, ConvSpec::same(3, 1, 2), bn, rng));
        }
        b.blocks_.emplace_back();
        for (const auto& sp : streams) {
            std::vector<ConvBlock> stack;
            for (int i = 0; i < sp.block_count; ++i)
                stack.push_back(ConvBlock::make(sp.width, sp.width,
                                                ConvSpec::same(3, sp.dilation), bn, rng));
            b.blocks_.back().push_back(std::move(stack));
        }
        if (cfg.fusion && cfg.variant != Variant::serial) {
            std::vector<int64_t> widths;
            for (const auto& sp : streams) widths.push_back(sp.width);
            b.exchanges_.push_back(ExchangeUnit::make(widths, rng));
        }
    }
    return b;
}

std::vector<int64_t> Backbone::level_widths() const {
    std::vector<int64_t> w;
    if (cfg_.variant == Variant::serial) {
        for (const auto& st : cfg_.stages) w.push_back(st.streams[0].width);
    } else {
        for (const auto& sp : cfg_.stages.back().streams) w.push_back(sp.width);
    }
    return w;
}

FeaturePyramid Backbone::forward(const Tensor& patch, bool train) {
    if (patch.shape().rank() != 5 || patch.shape()[1] != 1)
        throw std::invalid_argument("Backbone: expected [N,1,D,H,W] input");
    int64_t levels = static_cast<int64_t>(cfg_.stages.size());
    int64_t div = int64_t{1} << (levels - 1);
    for (int axis = 2; axis < 5; ++axis)
        if (patch.shape()[axis] % div != 0)
            throw std::invalid_argument("Backbone: input extents must be divisible by " +
                                        std::to_string(div));
    FeaturePyramid p = cfg_.variant == Variant::serial ? forward_serial(patch, train)
                                                       : forward_parallel(patch, train);
    for (const auto& t : p.levels) t.check_finite("backbone output");
    return p;
}

FeaturePyramid Backbone::forward_serial(const Tensor& patch, bool train) {
    FeaturePyramid pyr;
    Tensor x = stem_.forward(patch, train);
    for (size_t s = 0; s < blocks_.size(); ++s) {
        if (s > 0) x = transitions_[s - 1].forward(x, train);
        for (auto& blk : blocks_[s][0]) x = blk.forward(x, train);
        pyr.levels.push_back(x);
        pyr.strides.push_back(int64_t{1} << s);
    }
    return pyr;
}

FeaturePyramid Backbone::forward_parallel(const Tensor& patch, bool train) {
    std::vector<Tensor> feats{stem_.forward(patch, train)};
    for (size_t s = 0; s < blocks_.size(); ++s) {
        if (s > 0) feats.push_back(transitions_[s - 1].forward(feats.back(), train));
        for (size_t r = 0; r < blocks_[s].size(); ++r)
            for (auto& blk : blocks_[s][r]) feats[r] = blk.forward(feats[r], train);
        if (cfg_.fusion) feats = exchanges_[s].forward(feats);
    }
    FeaturePyramid pyr;
    pyr.levels = std::move(feats);
    for (size_t r = 0; r < pyr.levels.size(); ++r) pyr.strides.push_back(int64_t{1} << r);
    return pyr;
}

std::vector<NamedTensor> Backbone::params() {
    std::vector<NamedTensor> out;
    stem_.params("stem", out);
    for (size_t s = 0; s < blocks_.size(); ++s) {
        std::string stage = "stage" + std::to_string(s + 1);
        for (size_t r = 0; r < blocks_[s].size(); ++r)
            for (size_t bIdx = 0; bIdx < blocks_[s][r].size(); ++bIdx)
                blocks_[s][r][bIdx].params(stage + ".stream" + std::to_string(r) + ".block" +
                                               std::to_string(bIdx),
                                           out);
        if (s > 0) transitions_[s - 1].params("transition" + std::to_string(s), out);
        if (cfg_.fusion && cfg_.variant != Variant::serial)
            exchanges_[s].params(stage + ".exchange", out);
    }
    return out;
}

int64_t Backbone::param_count() {
    int64_t n = 0;
    for (const auto& p : params()) n += p.tensor.numel();
    return n;
}

std::vector<NamedTensor> Backbone::buffers() {
    std::vector<NamedTensor> out;
    stem_.buffers("stem", out);
    for (size_t s = 0; s < blocks_.size(); ++s) {
        std::string stage = "stage" + std::to_string(s + 1);
        for (size_t r = 0; r < blocks_[s].size(); ++r)
            for (size_t bIdx = 0; bIdx < blocks_[s][r].size(); ++bIdx)
                blocks_[s][r][bIdx].buffers(stage + ".stream" + std::to_string(r) + ".block" +
                                                std::to_string(bIdx),
                                            out);
        if (s > 0) transitions_[s - 1].buffers("transition" + std::to_string(s), out);
    }
    return out;
}

void Backbone::load_buffers(const std::map<std::string, Tensor>& src) {
    stem_.load_buffers("stem", src);
    for (size_t s = 0; s < blocks_.size(); ++s) {
        std::string stage = "stage" + std::to_string(s + 1);
        for (size_t r = 0; r < blocks_[s].size(); ++r)
            for (size_t bIdx = 0; bIdx < blocks_[s][r].size(); ++bIdx)
                blocks_[s][r][bIdx].load_buffers(stage + ".stream" + std::to_string(r) +
                                                     ".block" + std::to_string(bIdx),
                                                 src);
        if (s > 0) transitions_[s - 1].load_buffers("transition" + std::to_string(s), src);
    }
}

}  // namespace nforge
