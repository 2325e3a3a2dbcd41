#include "detect.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nforge {

namespace {
constexpr Scalar kClampEps = 1e-7;
}

void LossConfig::validate() const {
    if (!(0.0 <= neg_iou && neg_iou < pos_iou && pos_iou <= 1.0))
        throw std::invalid_argument("LossConfig: need 0 <= neg_iou < pos_iou <= 1");
    if (cascade_ious.empty())
        throw std::invalid_argument("LossConfig: cascade_ious must be non-empty");
    for (size_t i = 1; i < cascade_ious.size(); ++i)
        if (cascade_ious[i] <= cascade_ious[i - 1])
            throw std::invalid_argument("LossConfig: cascade_ious must be strictly increasing");
    if (lambda < 0 || w_pos <= 0 || w_neg <= 0)
        throw std::invalid_argument("LossConfig: non-positive weight");
}

std::vector<Anchor> generate_anchors(const PyramidShape& shape,
                                     const std::vector<std::vector<Scalar>>& scales) {
    if (scales.size() != shape.size())
        throw std::invalid_argument("generate_anchors: one scale list per level required");
    std::vector<Anchor> anchors;
    for (size_t l = 0; l < shape.size(); ++l) {
        if (scales[l].empty())
            throw std::invalid_argument("generate_anchors: empty scale list");
        const auto& lv = shape[l];
        Scalar s = static_cast<Scalar>(lv.stride);
        for (int64_t k = 0; k < lv.cells[2]; ++k)
            for (int64_t j = 0; j < lv.cells[1]; ++j)
                for (int64_t i = 0; i < lv.cells[0]; ++i)
                    for (size_t a = 0; a < scales[l].size(); ++a) {
                        Anchor an;
                        an.box = {(i + 0.5) * s, (j + 0.5) * s, (k + 0.5) * s, scales[l][a]};
                        an.level = static_cast<int>(l);
                        an.cell = {i, j, k};
                        an.scale = static_cast<int>(a);
                        anchors.push_back(an);
                    }
    }
    return anchors;
}

std::vector<Assignment> assign(const std::vector<Anchor>& anchors,
                               const std::vector<Box3>& gts, const LossConfig& cfg) {
    cfg.validate();
    std::vector<Assignment> out(anchors.size());
    // Best GT per anchor by IoU; threshold trichotomy.
    std::vector<Scalar> best_for_gt(gts.size(), -1.0);
    std::vector<int64_t> best_anchor_for_gt(gts.size(), -1);
    for (size_t i = 0; i < anchors.size(); ++i) {
        Scalar best = 0.0;
        int64_t best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            Scalar v = iou3d(anchors[i].box, gts[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<int64_t>(g);
            }
            if (v > best_for_gt[g]) {
                best_for_gt[g] = v;
                best_anchor_for_gt[g] = static_cast<int64_t>(i);
            }
        }
        out[i].iou = best;
        if (best > cfg.pos_iou) {
            out[i].label = AnchorLabel::positive;
            out[i].matched_gt = best_g;
        } else if (best < cfg.neg_iou) {
            out[i].label = AnchorLabel::negative;
        } else {
            out[i].label = AnchorLabel::ignored;
        }
    }
    // Forced-match rule: promote each GT's best anchor; never demote an
    // existing higher-IoU positive match.
    for (size_t g = 0; g < gts.size(); ++g) {
        int64_t a = best_anchor_for_gt[g];
        if (a < 0) continue;
        Assignment& as = out[static_cast<size_t>(a)];
        if (as.label == AnchorLabel::positive && as.matched_gt &&
            iou3d(anchors[static_cast<size_t>(a)].box, gts[static_cast<size_t>(*as.matched_gt)]) >
                best_for_gt[g])
            continue;
        as.label = AnchorLabel::positive;
        as.matched_gt = static_cast<int64_t>(g);
        as.iou = best_for_gt[g];
    }
    return out;
}

RegressionTarget encode(const Box3& gt, const Box3& anchor) {
    if (gt.d <= 0 || anchor.d <= 0)
        throw std::invalid_argument("encode: non-positive diameter");
    RegressionTarget t;
    t.tx = (gt.cx - anchor.cx) / anchor.d;
    t.ty = (gt.cy - anchor.cy) / anchor.d;
    t.tz = (gt.cz - anchor.cz) / anchor.d;
    t.td = std::log(gt.d / anchor.d);
    return t;
}

Box3 decode(const RegressionTarget& t, const Box3& anchor) {
    if (anchor.d <= 0) throw std::invalid_argument("decode: non-positive anchor diameter");
    Box3 b;
    b.cx = anchor.cx + t.tx * anchor.d;
    b.cy = anchor.cy + t.ty * anchor.d;
    b.cz = anchor.cz + t.tz * anchor.d;
    b.d = anchor.d * std::exp(t.td);
    return b;
}

Scalar balance_weight(int64_t n_pos, int64_t n_neg) {
    if (n_pos <= 0) return 1.0;
    Scalar w = static_cast<Scalar>(n_neg) / static_cast<Scalar>(n_pos);
    return std::clamp<Scalar>(w, 1.0, 50.0);
}

Scalar smooth_l1(Scalar delta) {
    Scalar a = std::abs(delta);
    return a < 1.0 ? 0.5 * delta * delta : a - 0.5;
}

Tensor cls_loss(const Tensor& p, const std::vector<Scalar>& p_star, const LossConfig& cfg) {
    cfg.validate();
    int64_t n = p.numel();
    if (n == 0 || static_cast<size_t>(n) != p_star.size())
        throw std::invalid_argument("cls_loss: p and p_star sizes differ or empty");
    const auto& pv = p.values();
    Scalar total = 0.0;
    std::vector<Scalar> dloss(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        Scalar label = p_star[static_cast<size_t>(i)];
        if (label != 0.0 && label != 1.0)
            throw std::invalid_argument("cls_loss: p_star entries must be 0 or 1");
        Scalar w = label == 1.0 ? cfg.w_pos : cfg.w_neg;
        Scalar raw = pv[static_cast<size_t>(i)];
        Scalar pc = std::clamp(raw, kClampEps, 1.0 - kClampEps);
        total += -w * (label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
        // zero gradient in the clamp's flat region
        if (raw > kClampEps && raw < 1.0 - kClampEps)
            dloss[static_cast<size_t>(i)] =
                -w * (label / pc - (1.0 - label) / (1.0 - pc)) / static_cast<Scalar>(n);
    }
    total /= static_cast<Scalar>(n);
    return Tensor::from_op(Shape{1}, {total}, {p},
                           [pn = p.node(), dloss](detail::TensorData& self) {
                               Scalar go = self.grad[0];
                               auto& g = pn->ensure_grad();
                               for (size_t i = 0; i < dloss.size(); ++i) g[i] += go * dloss[i];
                           });
}

Tensor reg_loss(const Tensor& t, const std::vector<RegressionTarget>& t_star) {
    int64_t n = static_cast<int64_t>(t_star.size());
    if (n == 0) return Tensor::scalar(0.0);
    if (t.shape().rank() != 2 || t.shape()[0] != n || t.shape()[1] != 4)
        throw std::invalid_argument("reg_loss: t must be [n,4] matching t_star");
    const auto& tv = t.values();
    Scalar total = 0.0;
    std::vector<Scalar> dloss(static_cast<size_t>(4 * n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        const RegressionTarget& ts = t_star[static_cast<size_t>(i)];
        std::array<Scalar, 4> target{ts.tx, ts.ty, ts.tz, ts.td};
        for (int64_t c = 0; c < 4; ++c) {
            Scalar delta = tv[static_cast<size_t>(4 * i + c)] - target[static_cast<size_t>(c)];
            total += smooth_l1(delta);
            Scalar d = std::abs(delta) < 1.0 ? delta : (delta > 0 ? 1.0 : -1.0);
            dloss[static_cast<size_t>(4 * i + c)] = d / static_cast<Scalar>(n);
        }
    }
    total /= static_cast<Scalar>(n);
    return Tensor::from_op(Shape{1}, {total}, {t},
                           [tn = t.node(), dloss](detail::TensorData& self) {
                               Scalar go = self.grad[0];
                               auto& g = tn->ensure_grad();
                               for (size_t i = 0; i < dloss.size(); ++i) g[i] += go * dloss[i];
                           });
}

Tensor total_loss(const Tensor& p, const std::vector<Scalar>& p_star, const Tensor& t_pos,
                  const std::vector<RegressionTarget>& t_star_pos, const LossConfig& cfg) {
    Tensor loss = scale(cls_loss(p, p_star, cfg), cfg.lambda);
    if (!t_star_pos.empty()) loss = add(loss, reg_loss(t_pos, t_star_pos));
    return loss;
}

}  // namespace nforge
