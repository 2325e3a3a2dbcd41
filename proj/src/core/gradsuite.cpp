#include "gradsuite.hpp"

#include <sstream>

#include "detect.hpp"
#include "nn.hpp"
#include "roi_align.hpp"

namespace nforge {

std::vector<GradCheckReport> gradient_suite(uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eedull);
    std::vector<GradCheckReport> out;

    for (int64_t dil : {1, 2, 4}) {
        ConvSpec spec = ConvSpec::same(3, dil);
        Tensor x = Tensor::randn(Shape{1, 2, 9, 9, 9}, rng, 1.0, true);
        Tensor k = Tensor::randn(Shape{2, 2, 3, 3, 3}, rng, 0.5, true);
        Tensor b = Tensor::randn(Shape{2}, rng, 0.5, true);
        out.push_back(gradcheck(
            "conv3d_dil" + std::to_string(dil),
            [&](const std::vector<Tensor>& in) { return sum(conv3d(in[0], in[1], in[2], spec)); },
            {x, k, b}, 1e-5, seed));
    }
    {
        ConvSpec spec = ConvSpec::same(3, 1, 2);
        Tensor x = Tensor::randn(Shape{1, 2, 8, 8, 8}, rng, 1.0, true);
        Tensor k = Tensor::randn(Shape{3, 2, 3, 3, 3}, rng, 0.5, true);
        Tensor b = Tensor::randn(Shape{3}, rng, 0.5, true);
        out.push_back(gradcheck(
            "downsample",
            [&](const std::vector<Tensor>& in) { return sum(conv3d(in[0], in[1], in[2], spec)); },
            {x, k, b}, 1e-5, seed));
    }
    {
        Tensor x = Tensor::randn(Shape{1, 2, 3, 3, 3}, rng, 1.0, true);
        out.push_back(gradcheck(
            "upsample",
            [&](const std::vector<Tensor>& in) { return sum(mul(upsample_nearest(in[0], 2),
                                                               upsample_nearest(in[0], 2))); },
            {x}, 1e-5, seed));
    }
    {
        Tensor x = Tensor::randn(Shape{4, 6}, rng, 1.0, true);
        Tensor w = Tensor::randn(Shape{6, 3}, rng, 0.5, true);
        Tensor b = Tensor::randn(Shape{3}, rng, 0.5, true);
        out.push_back(gradcheck(
            "fc",
            [&](const std::vector<Tensor>& in) {
                return sum(sigmoid(linear(in[0], in[1], in[2])));
            },
            {x, w, b}, 1e-5, seed));
    }
    {
        Tensor x = Tensor::randn(Shape{2, 3, 4, 4, 4}, rng, 1.0, true);
        Tensor g = Tensor::randn(Shape{3}, rng, 0.3, true);
        Tensor be = Tensor::randn(Shape{3}, rng, 0.3, true);
        out.push_back(gradcheck(
            "batchnorm",
            [&](const std::vector<Tensor>& in) {
                std::vector<Scalar> rm(3, 0.0), rv(3, 1.0);
                return sum(relu(batchnorm(in[0], in[1], in[2], rm, rv, true)));
            },
            {x, g, be}, 1e-5, seed, 200, 1e-4));
    }
    {
        Tensor feat = Tensor::randn(Shape{2, 5, 5, 5}, rng, 1.0, true);
        Box3 box{2.3, 2.8, 1.9, 2.6};
        out.push_back(gradcheck(
            "roi_align",
            [&](const std::vector<Tensor>& in) {
                return sum(mul(roi_align(in[0], box, 3), roi_align(in[0], box, 3)));
            },
            {feat}, 1e-5, seed));
    }
    {
        LossConfig cfg;
        cfg.w_pos = 3.0;
        std::uniform_real_distribution<double> uni(0.1, 0.9);
        std::vector<Scalar> pv(6);
        for (auto& v : pv) v = uni(rng);
        Tensor p(Shape{6}, pv, true);
        std::vector<Scalar> labels{1, 0, 1, 0, 0, 1};
        out.push_back(gradcheck(
            "cls_loss",
            [&](const std::vector<Tensor>& in) { return cls_loss(in[0], labels, cfg); }, {p},
            1e-5, seed));

        Tensor t = Tensor::randn(Shape{3, 4}, rng, 0.7, true);
        std::vector<RegressionTarget> star{{0.1, 0, -0.3, 0.2}, {0, 0, 0, 0}, {1.5, -2, 0.4, 0}};
        out.push_back(gradcheck(
            "reg_loss", [&](const std::vector<Tensor>& in) { return reg_loss(in[0], star); },
            {t}, 1e-5, seed));

        std::vector<Scalar> pa(3);
        for (auto& v : pa) v = uni(rng);
        Tensor pt(Shape{3}, pa, true);
        Tensor ta = Tensor::randn(Shape{2, 4}, rng, 0.5, true);
        std::vector<Scalar> la{1, 0, 1};
        std::vector<RegressionTarget> sa{{0.2, 0, 0, 0.1}, {-0.3, 0.4, 0, 0}};
        out.push_back(gradcheck(
            "total_loss",
            [&](const std::vector<Tensor>& in) { return total_loss(in[0], la, in[1], sa, cfg); },
            {pt, ta}, 1e-5, seed));
    }
    return out;
}

std::string format_gradient_table(const std::vector<GradCheckReport>& reports) {
    std::ostringstream os;
    os << "op              max_rel_err   tol       status\n";
    bool all = true;
    for (const auto& r : reports) {
        all = all && r.passed;
        os << r.op_name;
        for (size_t i = r.op_name.size(); i < 16; ++i) os << ' ';
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%-13.3e %-9.0e %s\n", r.max_rel_error, r.tolerance,
                      r.passed ? "pass" : "FAIL");
        os << buf;
    }
    os << (all ? "PASS" : "FAIL") << " (" << reports.size() << " ops)\n";
    return os.str();
}

}  // namespace nforge
