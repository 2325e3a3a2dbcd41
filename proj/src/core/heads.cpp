#include "heads.hpp"

#include <algorithm>
#include <stdexcept>

namespace nforge {

namespace {

void zero_layer(Conv3dLayer& l) {
    std::fill(l.weight.mutable_values().begin(), l.weight.mutable_values().end(), 0.0);
    std::fill(l.bias.mutable_values().begin(), l.bias.mutable_values().end(), 0.0);
}

}  // namespace

RpnHead RpnHead::make(const std::vector<int64_t>& level_channels, int64_t head_width,
                      int64_t n_scales, std::mt19937_64& rng) {
    if (level_channels.empty() || head_width < 1 || n_scales < 1)
        throw std::invalid_argument("RpnHead: bad configuration");
    RpnHead h;
    h.head_width = head_width;
    h.n_scales = n_scales;
    ConvSpec one = ConvSpec::same(1);
    for (int64_t c : level_channels)
        h.proj.push_back(Conv3dLayer::make(c, head_width, one, rng));
    h.score = Conv3dLayer::make(head_width, n_scales, one, rng);
    h.delta = Conv3dLayer::make(head_width, 4 * n_scales, one, rng);
    zero_layer(h.score);
    zero_layer(h.delta);
    return h;
}

RpnOut RpnHead::forward(const std::vector<Tensor>& pyramid) {
    if (pyramid.size() != proj.size())
        throw std::invalid_argument("RpnHead: pyramid level count mismatch");
    RpnOut out;
    std::vector<Tensor> score_parts, delta_parts;
    for (size_t l = 0; l < pyramid.size(); ++l) {
        const Tensor& x = pyramid[l];
        if (x.shape().rank() != 5 || x.shape()[0] != 1)
            throw std::invalid_argument("RpnHead: expected [1,C,D,H,W] level map");
        Tensor h = relu(proj[l].forward(x));
        Tensor smap = score.forward(h);  // [1,A,D,H,W]
        Tensor dmap = delta.forward(h);  // [1,4A,D,H,W]
        int64_t D = h.shape()[2], H = h.shape()[3], W = h.shape()[4];
        out.proj_feats.push_back(reshape(h, Shape{head_width, D, H, W}));
        // flatten to generate_anchors order: k,j,i sweep, scale innermost
        std::vector<int64_t> sidx, didx;
        sidx.reserve(static_cast<size_t>(n_scales * D * H * W));
        didx.reserve(static_cast<size_t>(4 * n_scales * D * H * W));
        for (int64_t k = 0; k < D; ++k)
            for (int64_t j = 0; j < H; ++j)
                for (int64_t i = 0; i < W; ++i)
                    for (int64_t a = 0; a < n_scales; ++a) {
                        sidx.push_back(((a * D + k) * H + j) * W + i);
                        for (int64_t c = 0; c < 4; ++c)
                            didx.push_back((((4 * a + c) * D + k) * H + j) * W + i);
                    }
        score_parts.push_back(gather(smap, std::move(sidx)));
        delta_parts.push_back(gather(dmap, std::move(didx)));
    }
    out.score_logits = concat(score_parts);
    Tensor d = concat(delta_parts);
    out.deltas = reshape(d, Shape{d.numel() / 4, 4});
    return out;
}

void RpnHead::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (size_t l = 0; l < proj.size(); ++l)
        proj[l].params(prefix + ".proj" + std::to_string(l), out);
    score.params(prefix + ".score", out);
    delta.params(prefix + ".delta", out);
}

RefineHead RefineHead::make(int64_t in_features, int64_t hidden, std::mt19937_64& rng) {
    if (in_features < 1 || hidden < 1)
        throw std::invalid_argument("RefineHead: bad configuration");
    RefineHead h;
    h.fc1 = LinearLayer::make(in_features, hidden, rng);
    h.score = LinearLayer::zeros(hidden, 1);
    h.delta = LinearLayer::zeros(hidden, 4);
    return h;
}

RefineOut RefineHead::forward(const Tensor& rois, bool train, std::mt19937_64& rng) {
    if (rois.shape().rank() != 2 || rois.shape()[1] != fc1.weight.shape()[0])
        throw std::invalid_argument("RefineHead: RoI feature width mismatch");
    int64_t n = rois.shape()[0];
    Tensor h = relu(fc1.forward(rois));
    h = dropout(h, dropout_rate, train, rng);
    RefineOut out;
    out.score_logits = reshape(score.forward(h), Shape{n});
    out.deltas = delta.forward(h);
    return out;
}

void RefineHead::params(const std::string& prefix, std::vector<NamedTensor>& out) {
    fc1.params(prefix + ".fc1", out);
    score.params(prefix + ".score", out);
    delta.params(prefix + ".delta", out);
}

namespace {

struct Proposal {
    Box3 box;  // input-voxel frame
    Scalar score = 0;      // current-stage score (drives per-stage NMS)
    Scalar score_sum = 0;  // across stages; the mean is the final score
    int stages = 0;
    int level = 0;
};

// Same greedy rule as boxes::nms, kept index-local so proposals retain their
// pyramid level.
std::vector<Proposal> nms_proposals(std::vector<Proposal> props, Scalar thresh) {
    std::stable_sort(props.begin(), props.end(),
                     [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    std::vector<Proposal> kept;
    for (const auto& p : props) {
        bool drop = false;
        for (const auto& k : kept)
            if (iou3d(k.box, p.box) > thresh) {
                drop = true;
                break;
            }
        if (!drop) kept.push_back(p);
    }
    return kept;
}

}  // namespace

Tensor roi_with_context(const Tensor& feat, const Box3& box, const DetectConfig& dcfg) {
    Box3 ctx{box.cx, box.cy, box.cz, box.d * dcfg.roi_context};
    return concat({roi_align(feat, box, dcfg.roi_size), roi_align(feat, ctx, dcfg.roi_size)});
}

std::vector<Detection> cascade_detect(const std::vector<Tensor>& pyramid,
                                      const PyramidShape& pshape,
                                      const std::vector<Anchor>& anchors, RpnHead& rpn,
                                      std::vector<RefineHead>& refine,
                                      const LossConfig& lcfg, const DetectConfig& dcfg) {
    lcfg.validate();
    if (pyramid.empty()) throw std::invalid_argument("cascade_detect: empty pyramid");
    if (pshape.size() != pyramid.size())
        throw std::invalid_argument("cascade_detect: pyramid shape mismatch");
    size_t stages = lcfg.cascade_ious.size();
    if (refine.size() != stages - 1)
        throw std::invalid_argument("cascade_detect: need one refine head per extra stage");

    NoGradGuard ng;
    std::mt19937_64 rng(0);  // never consumed: dropout is identity in eval

    RpnOut rpn_out = rpn.forward(pyramid);
    Tensor probs = sigmoid(rpn_out.score_logits);
    const auto& pv = probs.values();
    const auto& dv = rpn_out.deltas.values();
    if (pv.size() != anchors.size())
        throw std::invalid_argument("cascade_detect: anchor/score count mismatch");

    std::vector<Proposal> props;
    for (size_t i = 0; i < anchors.size(); ++i) {
        if (pv[i] < dcfg.score_thresh) continue;
        RegressionTarget t{dv[4 * i], dv[4 * i + 1], dv[4 * i + 2], dv[4 * i + 3]};
        props.push_back({decode(t, anchors[i].box), pv[i], pv[i], 1, anchors[i].level});
    }
    std::stable_sort(props.begin(), props.end(),
                     [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
    if (static_cast<int64_t>(props.size()) > dcfg.top_k)
        props.resize(static_cast<size_t>(dcfg.top_k));
    props = nms_proposals(std::move(props), dcfg.proposal_nms_iou);

    int last_stage = 0;
    for (size_t s = 1; s < stages && !props.empty(); ++s) {
        std::vector<Tensor> aligned;
        for (const auto& p : props) {
            Scalar st = static_cast<Scalar>(pshape[static_cast<size_t>(p.level)].stride);
            Box3 fbox{p.box.cx / st, p.box.cy / st, p.box.cz / st, p.box.d / st};
            aligned.push_back(
                roi_with_context(rpn_out.proj_feats[static_cast<size_t>(p.level)], fbox, dcfg));
        }
        RefineOut ro = refine[s - 1].forward(stack_flatten(aligned), false, rng);
        Tensor sp = sigmoid(ro.score_logits);
        const auto& spv = sp.values();
        const auto& rdv = ro.deltas.values();
        for (size_t i = 0; i < props.size(); ++i) {
            RegressionTarget t{rdv[4 * i], rdv[4 * i + 1], rdv[4 * i + 2], rdv[4 * i + 3]};
            props[i].box = decode(t, props[i].box);
            props[i].score = spv[i];
            props[i].score_sum += spv[i];
            props[i].stages += 1;
        }
        props = nms_proposals(std::move(props), dcfg.proposal_nms_iou);
        last_stage = static_cast<int>(s);
    }
    // final score averages the stages: stage heads make decorrelated ranking
    // mistakes, and the mean flips fewer near-ties than any single head
    for (auto& p : props) p.score = p.score_sum / static_cast<Scalar>(p.stages);
    props = nms_proposals(std::move(props), dcfg.nms_iou);

    std::vector<Detection> dets;
    for (const auto& p : props) dets.push_back({p.box, p.score, last_stage});
    return dets;
}

}  // namespace nforge
