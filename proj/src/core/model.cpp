#include "model.hpp"

#include <algorithm>
#include <stdexcept>

#include "checkpoint.hpp"

namespace nforge {

Detector Detector::build(const PipelineConfig& cfg, uint64_t seed) {
    cfg.validate();
    Detector d;
    d.loss_ = cfg.loss;
    d.detect_ = cfg.detect;
    d.anchor_scales_ = cfg.anchor_scales;
    d.backbone_ = Backbone::build(cfg.backbone_config(), seed);
    // head parameters draw from a distinct stream so backbone init is shared
    // across variants with the same seed
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    d.rpn_ = RpnHead::make(d.backbone_.level_widths(), cfg.head_width,
                           static_cast<int64_t>(cfg.anchor_scales[0].size()), rng);
    int64_t roi_feats =
        2 * cfg.head_width * cfg.detect.roi_size * cfg.detect.roi_size * cfg.detect.roi_size;
    for (size_t s = 1; s < cfg.loss.cascade_ious.size(); ++s)
        d.refine_.push_back(RefineHead::make(roi_feats, cfg.refine_hidden, rng));
    return d;
}

PyramidShape Detector::pyramid_shape(int64_t edge) const {
    PyramidShape shape;
    size_t levels = backbone_.config().stages.size();
    for (size_t r = 0; r < levels; ++r) {
        int64_t stride = int64_t{1} << r;
        shape.push_back({{edge / stride, edge / stride, edge / stride}, stride});
    }
    return shape;
}

const std::vector<Anchor>& Detector::anchors_for(int64_t edge) {
    auto it = anchor_cache_.find(edge);
    if (it == anchor_cache_.end())
        it = anchor_cache_.emplace(edge, generate_anchors(pyramid_shape(edge), anchor_scales_))
                 .first;
    return it->second;
}

namespace {

// level whose anchor diameters sit closest to the box diameter
int level_for_diameter(const std::vector<std::vector<Scalar>>& scales, Scalar d) {
    int best = 0;
    Scalar best_gap = 1e300;
    for (size_t l = 0; l < scales.size(); ++l) {
        Scalar mean = 0;
        for (Scalar s : scales[l]) mean += s;
        mean /= static_cast<Scalar>(scales[l].size());
        Scalar gap = std::abs(mean - d);
        if (gap < best_gap) {
            best_gap = gap;
            best = static_cast<int>(l);
        }
    }
    return best;
}

}  // namespace

Tensor Detector::patch_loss(const Patch& p, const TrainConfig& tcfg, std::mt19937_64& rng) {
    int64_t P = p.edge;
    Tensor x(Shape{1, 1, P, P, P}, p.voxels);
    FeaturePyramid pyr = backbone_.forward(x, true);
    const auto& anchors = anchors_for(P);
    auto assignments = assign(anchors, p.boxes, loss_);

    std::vector<int64_t> pos, neg;
    for (size_t i = 0; i < assignments.size(); ++i) {
        if (assignments[i].label == AnchorLabel::positive) pos.push_back(static_cast<int64_t>(i));
        else if (assignments[i].label == AnchorLabel::negative)
            neg.push_back(static_cast<int64_t>(i));
    }

    RpnOut rpn_out = rpn_.forward(pyr.levels);

    // negative cap: half hard-mined (highest scoring — random sampling almost
    // never visits the confident false positives clustered around nodules),
    // half random for coverage
    size_t want_neg = pos.empty() ? static_cast<size_t>(tcfg.min_neg)
                                  : pos.size() * static_cast<size_t>(tcfg.neg_per_pos);
    if (neg.size() > want_neg) {
        const auto& sv = rpn_out.score_logits.values();
        std::stable_sort(neg.begin(), neg.end(), [&](int64_t a, int64_t b) {
            return sv[static_cast<size_t>(a)] > sv[static_cast<size_t>(b)];
        });
        size_t hard = want_neg / 2;
        std::shuffle(neg.begin() + static_cast<int64_t>(hard), neg.end(), rng);
        neg.resize(want_neg);
        std::sort(neg.begin(), neg.end());  // fixed reduction order
    }
    std::vector<int64_t> sel = pos;
    sel.insert(sel.end(), neg.begin(), neg.end());
    if (sel.empty()) return Tensor::scalar(0.0);
    Tensor logits = gather(rpn_out.score_logits, sel);
    Tensor probs = sigmoid(logits);
    std::vector<Scalar> p_star(sel.size(), 0.0);
    for (size_t i = 0; i < pos.size(); ++i) p_star[i] = 1.0;

    Tensor t_pos;
    std::vector<RegressionTarget> t_star;
    if (!pos.empty()) {
        std::vector<int64_t> didx;
        for (int64_t i : pos)
            for (int64_t c = 0; c < 4; ++c) didx.push_back(4 * i + c);
        t_pos = reshape(gather(rpn_out.deltas, didx), Shape{static_cast<int64_t>(pos.size()), 4});
        for (int64_t i : pos) {
            const auto& as = assignments[static_cast<size_t>(i)];
            t_star.push_back(
                encode(p.boxes[static_cast<size_t>(*as.matched_gt)], anchors[static_cast<size_t>(i)].box));
        }
    }
    LossConfig lc = loss_;
    lc.w_pos = balance_weight(static_cast<int64_t>(pos.size()), static_cast<int64_t>(neg.size()));
    Tensor loss = total_loss(probs, p_star, t_pos, t_star, lc);

    // cascade refinement stages trained on RPN proposals (+ planted GT so
    // positives always exist); proposal boxes are constants, gradients flow
    // through RoI Align and the refine heads
    size_t stages = loss_.cascade_ious.size();
    if (stages > 1) {
        struct Prop {
            Box3 box;
            int level;
        };
        std::vector<Prop> props;
        {
            NoGradGuard ng;
            Tensor all_probs = sigmoid(rpn_out.score_logits);
            const auto& pv = all_probs.values();
            const auto& dv = rpn_out.deltas.values();
            std::vector<int64_t> order(anchors.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);
            std::stable_sort(order.begin(), order.end(),
                             [&](int64_t a, int64_t b) { return pv[static_cast<size_t>(a)] > pv[static_cast<size_t>(b)]; });
            size_t take = std::min<size_t>(static_cast<size_t>(tcfg.refine_proposals), order.size());
            for (size_t i = 0; i < take; ++i) {
                size_t a = static_cast<size_t>(order[i]);
                RegressionTarget t{dv[4 * a], dv[4 * a + 1], dv[4 * a + 2], dv[4 * a + 3]};
                Box3 b = decode(t, anchors[a].box);
                if (b.d > 0.5 && b.d < 2.0 * static_cast<Scalar>(P))
                    props.push_back({b, anchors[a].level});
            }
            std::uniform_real_distribution<Scalar> jc(-0.3, 0.3), js(-0.45, 0.35);
            for (const auto& gt : p.boxes) {
                props.push_back({gt, level_for_diameter(anchor_scales_, gt.d)});
                // jittered copies span the label boundary, teaching the refine
                // heads to score down near-misses and regress them onto the GT
                for (int j = 0; j < 3; ++j) {
                    Box3 b = gt;
                    b.cx += jc(rng) * gt.d;
                    b.cy += jc(rng) * gt.d;
                    b.cz += jc(rng) * gt.d;
                    b.d *= std::exp(js(rng));
                    props.push_back({b, level_for_diameter(anchor_scales_, b.d)});
                }
            }
        }
        for (size_t s = 1; s < stages && !props.empty(); ++s) {
            std::vector<Tensor> aligned;
            for (const auto& pr : props) {
                Scalar st = static_cast<Scalar>(int64_t{1} << pr.level);
                Box3 fbox{pr.box.cx / st, pr.box.cy / st, pr.box.cz / st, pr.box.d / st};
                aligned.push_back(roi_with_context(
                    rpn_out.proj_feats[static_cast<size_t>(pr.level)], fbox, detect_));
            }
            RefineOut ro = refine_[s - 1].forward(stack_flatten(aligned), true, rng);
            Tensor sprob = sigmoid(ro.score_logits);
            std::vector<Scalar> labels(props.size(), 0.0);
            std::vector<int64_t> pos_rows;
            std::vector<RegressionTarget> targets;
            for (size_t i = 0; i < props.size(); ++i) {
                Scalar best = 0.0;
                int64_t best_g = -1;
                for (size_t g = 0; g < p.boxes.size(); ++g) {
                    Scalar v = iou3d(props[i].box, p.boxes[g]);
                    if (v > best) {
                        best = v;
                        best_g = static_cast<int64_t>(g);
                    }
                }
                if (best_g >= 0 && best >= loss_.cascade_ious[s]) {
                    labels[i] = 1.0;
                    pos_rows.push_back(static_cast<int64_t>(i));
                    targets.push_back(encode(p.boxes[static_cast<size_t>(best_g)], props[i].box));
                }
            }
            Tensor t_rows;
            if (!pos_rows.empty()) {
                std::vector<int64_t> didx;
                for (int64_t i : pos_rows)
                    for (int64_t c = 0; c < 4; ++c) didx.push_back(4 * i + c);
                t_rows = reshape(gather(ro.deltas, didx),
                                 Shape{static_cast<int64_t>(pos_rows.size()), 4});
            }
            LossConfig lcs = loss_;
            lcs.w_pos = balance_weight(static_cast<int64_t>(pos_rows.size()),
                                       static_cast<int64_t>(props.size() - pos_rows.size()));
            loss = add(loss, total_loss(sprob, labels, t_rows, targets, lcs));
        }
    }
    return loss;
}

Tensor Detector::batch_loss(const std::vector<const Patch*>& batch, const TrainConfig& tcfg,
                            std::mt19937_64& rng) {
    if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
    Tensor acc;
    for (const Patch* p : batch) {
        Tensor l = patch_loss(*p, tcfg, rng);
        acc = acc.defined() ? add(acc, l) : l;
    }
    return scale(acc, 1.0 / static_cast<Scalar>(batch.size()));
}

std::vector<Detection> Detector::detect_patch(const Patch& p) {
    NoGradGuard ng;
    int64_t P = p.edge;
    Tensor x(Shape{1, 1, P, P, P}, p.voxels);
    FeaturePyramid pyr = backbone_.forward(x, false);
    return cascade_detect(pyr.levels, pyramid_shape(P), anchors_for(P), rpn_, refine_, loss_,
                          detect_);
}

std::vector<NamedTensor> Detector::params() {
    std::vector<NamedTensor> out = backbone_.params();
    rpn_.params("rpn", out);
    for (size_t s = 0; s < refine_.size(); ++s)
        refine_[s].params("refine" + std::to_string(s + 1), out);
    return out;
}

std::vector<NamedTensor> Detector::buffers() { return backbone_.buffers(); }

void Detector::save(const std::string& path) {
    std::vector<NamedTensor> all = params();
    for (auto& b : buffers()) all.push_back(b);
    write_tensor_file(path, all);
}

void Detector::load(const std::string& path) {
    auto src = read_tensor_file(path);
    auto ps = params();
    load_into(ps, src);
    std::map<std::string, Tensor> bufsrc;
    for (const auto& [name, t] : src)
        if (name.find("running_") != std::string::npos) bufsrc[name] = t;
    backbone_.load_buffers(bufsrc);
}

}  // namespace nforge
