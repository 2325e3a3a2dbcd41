// Acceptance harness: one pass/fail line per criterion.
//   --fast  property/oracle criteria (default)
//   --desk  full synthetic training run (budgeted at 45 min single-core)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/dataset.hpp"
#include "core/gradsuite.hpp"

using namespace nforge;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

// ---------------------------------------------------------------- fast mode

void c_gradients() {
    auto t0 = clk::now();
    auto reports = gradient_suite(0);
    double secs = seconds_since(t0);
    bool all = true;
    double worst = 0;
    for (const auto& r : reports) {
        all = all && r.passed;
        worst = std::max(worst, r.max_rel_error);
    }
    bool pass = all && secs < 60.0;
    std::ostringstream os;
    os << reports.size() << " ops, worst rel err " << worst << ", " << secs << " s";
    report("gradient suite (<1e-5, <60s)", pass, os.str());
}

void c_conv_oracle() {
    std::mt19937_64 rng(7);
    auto pick = [&](int lo, int hi) {
        return static_cast<int64_t>(std::uniform_int_distribution<int>(lo, hi)(rng));
    };
    double worst = 0;
    int cases = 0;
    NoGradGuard ng;
    for (int c = 0; c < 50; ++c) {
        ConvSpec spec;
        int64_t k = 2 * pick(0, 1) + 1;  // kernels must be odd
        spec.kernel = {k, k, k};
        int64_t dil = pick(1, 2);
        spec.dilation = {dil, dil, dil};
        int64_t stride = pick(1, 2);
        spec.stride = {stride, stride, stride};
        int64_t pad = pick(0, 2);
        spec.padding = {pad, pad, pad};
        int64_t span = dil * (k - 1) + 1;
        int64_t d = std::max<int64_t>(span - 2 * pad, 1) + pick(0, 4);
        int64_t cin = pick(1, 2), cout = pick(1, 2);
        Tensor x = Tensor::randn(Shape{1, cin, d, d + pick(0, 2), d + pick(0, 2)}, rng, 1.0);
        Tensor kk = Tensor::randn(Shape{cout, cin, k, k, k}, rng, 1.0);
        Tensor b = Tensor::randn(Shape{cout}, rng, 1.0);
        set_conv_path(ConvPath::gemm);
        Tensor fast = conv3d(x, kk, b, spec);
        Tensor slow = conv3d_direct(x, kk, b, spec);
        for (size_t i = 0; i < fast.values().size(); ++i)
            worst = std::max(worst, std::abs(fast.values()[i] - slow.values()[i]));
        ++cases;
    }
    std::ostringstream os;
    os << cases << " cases, max abs diff " << worst;
    report("conv3d vs direct oracle (<=1e-12 x50)", worst <= 1e-12, os.str());
}

void c_receptive_field() {
    auto rf1 = effective_receptive_field({ConvSpec::same(3, 1)})[0];
    auto rf2 = effective_receptive_field({ConvSpec::same(3, 1), ConvSpec::same(3, 2)})[0];
    auto rf3 = effective_receptive_field(
        {ConvSpec::same(3, 1), ConvSpec::same(3, 2), ConvSpec::same(3, 4)})[0];
    auto rf_std = effective_receptive_field(
        {ConvSpec::same(3), ConvSpec::same(3), ConvSpec::same(3)})[0];
    bool pass = rf1 == 3 && rf2 == 7 && rf3 == 15 && rf_std == 7;
    std::ostringstream os;
    os << "dilated stack " << rf1 << "," << rf2 << "," << rf3 << "; standard 3x " << rf_std;
    report("receptive field (3,7,15 and 7, exact)", pass, os.str());
}

void c_losses() {
    LossConfig cfg;  // w_pos = w_neg = 1
    Tensor p(Shape{1}, {0.5});
    double cls = cls_loss(p, {1.0}, cfg).values()[0];
    bool cls_ok = std::abs(cls - std::log(2.0)) <= 1e-9;

    NoGradGuard ng;
    Tensor t1(Shape{1, 4}, {0.5, 0.0, 0.0, 0.0});
    Tensor t2(Shape{1, 4}, {2.0, 0.0, 0.0, 0.0});
    std::vector<RegressionTarget> zero{{0, 0, 0, 0}};
    bool reg_ok = reg_loss(t1, zero).values()[0] == 0.125 &&
                  reg_loss(t2, zero).values()[0] == 1.5;

    double h = 1e-9;
    bool cont_ok = std::abs(smooth_l1(1.0) - smooth_l1(1.0 - h) - h) < 1e-9 &&
                   std::abs(smooth_l1(1.0 + h) - smooth_l1(1.0) - h) < 1e-9 &&
                   std::abs(smooth_l1(-1.0 - h) - smooth_l1(-1.0) - h) < 1e-9;

    std::ostringstream os;
    os << "cls " << cls << " vs ln2, reg 0.125/1.5 " << (reg_ok ? "exact" : "off")
       << ", smooth-L1 slope continuous " << (cont_ok ? "yes" : "no");
    report("loss values (ln2, 0.125, 1.5, continuity)", cls_ok && reg_ok && cont_ok, os.str());
}

// independent greedy matcher + envelope integration, mirrors COCO-style AP
double ap_oracle(std::vector<Detection> dets, const std::vector<Box3>& gts, double thr) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<bool> used(gts.size(), false);
    std::vector<int> tp_flags;
    for (const auto& det : dets) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (used[g]) continue;
            double v = iou3d(det.box, gts[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best >= thr) {
            used[static_cast<size_t>(best_g)] = true;
            tp_flags.push_back(1);
        } else {
            tp_flags.push_back(0);
        }
    }
    if (gts.empty()) return 0.0;
    std::vector<double> precs, recs;
    int tp = 0, fp = 0;
    for (size_t i = 0; i < dets.size(); ++i) {
        tp_flags[i] ? ++tp : ++fp;
        bool last = i + 1 == dets.size() || dets[i + 1].score != dets[i].score;
        if (!last) continue;
        precs.push_back(static_cast<double>(tp) / (tp + fp));
        recs.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    }
    double ap = 0.0, prev = 0.0;
    for (size_t i = 0; i < precs.size(); ++i) {
        double env = 0.0;
        for (size_t j = i; j < precs.size(); ++j) env = std::max(env, precs[j]);
        ap += (recs[i] - prev) * env;
        prev = recs[i];
    }
    return ap;
}

std::vector<Detection> nms_oracle(std::vector<Detection> dets, double thr) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (iou3d(k.box, d.box) > thr) suppressed = true;
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

void c_metrics() {
    // the enumerated 3-detection / 2-GT case: AP = 5/6
    std::vector<Box3> gts{{0, 0, 0, 4}, {20, 0, 0, 4}};
    std::vector<Detection> dets{
        {{0, 0, 0, 4}, 0.9, 1},    // TP
        {{50, 0, 0, 4}, 0.8, 1},   // FP
        {{20, 0, 0, 4}, 0.7, 1},   // TP
    };
    double ap_case = average_precision(pr_curve(dets, gts, 0.5));
    bool case_ok = std::abs(ap_case - 5.0 / 6.0) <= 1e-12;  // 0.5 + 1/3 vs 5/6: 1 ulp

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> pos(0.0, 20.0), dia(1.0, 6.0), sc(0.0, 1.0);
    double worst_ap = 0;
    bool nms_ok = true;
    for (int c = 0; c < 100; ++c) {
        auto n_det = std::uniform_int_distribution<int>(0, 20)(rng);
        auto n_gt = std::uniform_int_distribution<int>(0, 10)(rng);
        std::vector<Detection> ds;
        std::vector<Box3> gs;
        for (int i = 0; i < n_det; ++i)
            ds.push_back({{pos(rng), pos(rng), pos(rng), dia(rng)}, sc(rng), 1});
        for (int i = 0; i < n_gt; ++i) gs.push_back({pos(rng), pos(rng), pos(rng), dia(rng)});
        for (double thr : {0.3, 0.5, 0.75})
            worst_ap = std::max(worst_ap, std::abs(average_precision(pr_curve(ds, gs, thr)) -
                                                   ap_oracle(ds, gs, thr)));
        auto a = nms(ds, 0.25);
        auto b = nms_oracle(ds, 0.25);
        if (a.size() != b.size()) nms_ok = false;
        else
            for (size_t i = 0; i < a.size(); ++i)
                if (std::memcmp(&a[i].box, &b[i].box, sizeof(Box3)) != 0 ||
                    a[i].score != b[i].score)
                    nms_ok = false;
    }
    std::ostringstream os;
    os << "3-det case " << ap_case << " vs 5/6, 100x AP max diff " << worst_ap << ", NMS "
       << (nms_ok ? "exact" : "mismatch");
    report("metrics oracle (5/6, AP<=1e-12 x100, NMS exact x100)",
           case_ok && worst_ap <= 1e-12 && nms_ok, os.str());
}

void c_param_parity() {
    bool pass = true;
    std::ostringstream os;
    for (auto [w, b] : {std::pair<int64_t, int>{2, 1}, {2, 2}, {3, 1}, {4, 1}, {4, 2}}) {
        auto hr = Backbone::build(make_config(Variant::hrnet, w, b), 1);
        auto pro = Backbone::build(make_pro(make_config(Variant::hrnet, w, b)), 1);
        int64_t nh = hr.param_count(), np = pro.param_count();
        if (nh != np) pass = false;
        os << "w" << w << "b" << b << ":" << nh << (nh == np ? "==" : "!=") << np << " ";
    }
    report("pro_hrnet/hrnet parameter parity (exact)", pass, os.str());
}

void c_pipeline_exactness() {
    // Eq. 10 on integer grids
    bool eq10 = true;
    for (int sv = -2000; sv <= 2000; ++sv) {
        if (rescale_to_hu(sv, 1.0, -1024.0) != static_cast<double>(sv) - 1024.0) eq10 = false;
        if (rescale_to_hu(sv, 2.0, -2048.0) != 2.0 * sv - 2048.0) eq10 = false;
    }

    // split invariants on randomized id sets
    std::mt19937_64 rng(23);
    bool splits_ok = true;
    for (int c = 0; c < 20; ++c) {
        int n = std::uniform_int_distribution<int>(1, 60)(rng);
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i) ids.push_back("v" + std::to_string(i));
        auto hold = holdout_split(ids, c);
        if (static_cast<int>(hold.assignments.size()) != n) splits_ok = false;
        int train_n = 0;
        for (auto& [id, f] : hold.assignments) {
            if (f != 0 && f != 1) splits_ok = false;
            train_n += f == 0;
        }
        if (train_n != static_cast<int>(std::llround(0.8 * n))) splits_ok = false;
        int k = std::min(n, 10);
        if (k < 2) continue;
        auto kf = kfold_split(ids, k, c);
        std::vector<int> sizes(static_cast<size_t>(k), 0);
        for (auto& [id, f] : kf.assignments) {
            if (f < 0 || f >= k) { splits_ok = false; continue; }
            ++sizes[static_cast<size_t>(f)];
        }
        auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
        if (*mx - *mn > 1) splits_ok = false;
        if (static_cast<int>(kf.assignments.size()) != n) splits_ok = false;
    }

    std::string dir = (fs::temp_directory_path() / "nforge_acceptance").string();
    fs::remove_all(dir);
    fs::create_directories(dir);

    // volume round-trip, bitwise
    Volume vol;
    vol.header.dims = {6, 7, 8};
    vol.header.spacing = {0.7, 0.8, 1.25};
    vol.header.volume_id = "rt";
    vol.sv.resize(static_cast<size_t>(vol.header.voxel_count()));
    std::uniform_int_distribution<int> svd(-1200, 2000);
    for (auto& s : vol.sv) s = static_cast<int16_t>(svd(rng));
    write_volume(dir + "/rt", vol);
    Volume back = read_volume(dir + "/rt.json");
    bool vol_ok = back.sv == vol.sv && back.header.dims == vol.header.dims &&
                  back.header.spacing == vol.header.spacing &&
                  back.header.rescale_slope == vol.header.rescale_slope &&
                  back.header.rescale_intercept == vol.header.rescale_intercept;

    // checkpoint round-trip, bitwise
    bool ckpt_ok = true;
    {
        NoGradGuard ng;
        std::vector<NamedTensor> named;
        for (int i = 0; i < 5; ++i)
            named.push_back({"t" + std::to_string(i),
                             Tensor::randn(Shape{3, 4}, rng, 1.0 + 0.1 * i)});
        write_tensor_file(dir + "/ck.nf", named);
        auto rd = read_tensor_file(dir + "/ck.nf");
        for (const auto& nt : named) {
            auto it = rd.find(nt.name);
            if (it == rd.end() || it->second.values() != nt.tensor.values()) ckpt_ok = false;
        }
    }

    // training determinism: identical config+seed -> identical EpochLog files
    PipelineConfig cfg = parse_config_text(R"(
[data]
patch_edge = 16
eval_edge = 16
[synth]
n_volumes = 5
dims = [16, 16, 16]
max_nodules = 1
min_diameter_mm = 4
max_diameter_mm = 7
[model]
base_width = 2
head_width = 4
refine_hidden = 8
[train]
epochs = 2
batch_size = 2
val_volumes = 1
min_neg = 8
refine_proposals = 4
seed = 4
)");
    synth_dataset(cfg.synth, dir + "/data", 42);
    auto ids = list_volume_ids(dir + "/data");
    write_split_json(dir + "/data/split.json", holdout_split(ids, 42));
    run_train(cfg, dir + "/data", dir + "/runA");
    run_train(cfg, dir + "/data", dir + "/runB");
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    auto logsA = read_epoch_log_csv(dir + "/runA/epoch_log.csv");
    auto logsB = read_epoch_log_csv(dir + "/runB/epoch_log.csv");
    bool det_ok = !logsA.empty() && logsA.size() == logsB.size();
    for (size_t i = 0; det_ok && i < logsA.size(); ++i) {
        // every logged number must agree bitwise; wall-clock is exempt
        const EpochLog &a = logsA[i], &b = logsB[i];
        det_ok = a.epoch == b.epoch && a.train_loss == b.train_loss &&
                 a.val_loss == b.val_loss && a.ap == b.ap && a.ap50 == b.ap50 &&
                 a.ap75 == b.ap75;
    }
    det_ok = det_ok && slurp(dir + "/runA/model.nf") == slurp(dir + "/runB/model.nf");

    std::ostringstream os;
    os << "eq10 " << (eq10 ? "exact" : "off") << ", splits " << (splits_ok ? "ok" : "violated")
       << ", volume rt " << (vol_ok ? "bitwise" : "differs") << ", checkpoint rt "
       << (ckpt_ok ? "bitwise" : "differs") << ", train determinism "
       << (det_ok ? "bitwise" : "differs");
    report("pipeline exactness (eq10, splits, round-trips, determinism)",
           eq10 && splits_ok && vol_ok && ckpt_ok && det_ok, os.str());
}

// ---------------------------------------------------------------- desk mode

const char* kDeskConfig = R"(
[data]
patch_edge = 24
eval_edge = 64

[synth]
n_volumes = 200

[model]
base_width = 2
head_width = 8
refine_hidden = 32
anchor_scales = [[4, 5], [6, 7.5], [9, 11], [13, 16]]

[train]
epochs = 30
batch_size = 4
refine_proposals = 6
)";

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

void run_desk() {
    auto t0 = clk::now();
    std::string dir = (fs::temp_directory_path() / "nforge_desk").string();
    fs::remove_all(dir);
    fs::create_directories(dir);

    PipelineConfig base = parse_config_text(kDeskConfig);
    synth_dataset(base.synth, dir + "/data", 2024);
    // exact 150/50 split
    auto ids = list_volume_ids(dir + "/data");
    std::sort(ids.begin(), ids.end());
    std::mt19937_64 srng(2024);
    std::shuffle(ids.begin(), ids.end(), srng);
    SplitPlan plan;
    plan.kind = SplitKind::holdout;
    plan.seed = 2024;
    for (size_t i = 0; i < ids.size(); ++i) plan.assignments[ids[i]] = i < 150 ? 0 : 1;
    write_split_json(dir + "/data/split.json", plan);
    Dataset test_ds = load_dataset(dir + "/data", split_ids(plan).test);

    const char* variants[] = {"serial", "hrnet", "pro_hrnet"};
    std::map<std::string, std::vector<double>> ap50s, small_aps;
    std::vector<EpochLog> pro_logs;
    for (const char* variant : variants) {
        for (uint64_t seed : {1, 2, 3}) {
            PipelineConfig cfg = base;
            cfg.variant = variant;
            cfg.train.seed = seed;
            bool log_val = std::string(variant) == "pro_hrnet" && seed == 1;
            cfg.train.val_volumes = log_val ? 8 : 0;
            std::string run = dir + "/" + variant + "_s" + std::to_string(seed);
            Detector model;
            auto logs = run_train(cfg, dir + "/data", run, &model);
            if (log_val) pro_logs = logs;

            std::vector<WorldDetection> dets;
            for (const auto& vol : test_ds.volumes) {
                auto vd = infer_volume(model, vol, cfg.eval_edge, cfg.window_lo, cfg.window_hi);
                dets.insert(dets.end(), vd.begin(), vd.end());
            }
            write_detections_csv(run + "/detections.csv", dets);
            APReport rep = pooled_ap_report(dets, test_ds.annotations);
            APReport small = small_nodule_ap_report(dets, test_ds.annotations, 8.0);
            ap50s[variant].push_back(rep.ap50);
            small_aps[variant].push_back(small.ap);
            std::printf("  run %-9s seed %llu: AP %.4f AP0.5 %.4f AP0.75 %.4f small-AP %.4f "
                        "(%.0f s elapsed)\n",
                        variant, static_cast<unsigned long long>(seed), rep.ap, rep.ap50,
                        rep.ap75, small.ap, seconds_since(t0));
            std::fflush(stdout);
        }
    }

    double pro_ap50 = median3(ap50s["pro_hrnet"]);
    {
        std::ostringstream os;
        os << "median AP0.5 over 3 seeds = " << pro_ap50;
        report("desk run: Pro-HRnet AP0.5 >= 0.60", pro_ap50 >= 0.60, os.str());
    }
    {
        double s = median3(small_aps["serial"]);
        double h = median3(small_aps["hrnet"]);
        double p = median3(small_aps["pro_hrnet"]);
        std::ostringstream os;
        os << "median small-nodule AP serial " << s << " <= hrnet " << h << " <= pro_hrnet "
           << p;
        report("desk run: small-nodule AP ordering", s <= h && h <= p, os.str());
    }
    {
        // 5-epoch smoothed validation AP: non-decreasing through 21, then flat
        std::vector<double> sm;
        for (size_t e = 4; e < pro_logs.size(); ++e) {
            double acc = 0;
            for (size_t j = e - 4; j <= e; ++j) acc += pro_logs[j].ap;
            sm.push_back(acc / 5.0);  // sm[i] covers epochs i+1..i+5
        }
        bool mono = true;
        for (size_t i = 1; i < sm.size() && i + 5 <= 21; ++i)
            if (sm[i] < sm[i - 1] - 1e-12) mono = false;
        double lo = 1e9, hi = -1e9;
        for (size_t i = 0; i < sm.size(); ++i) {
            if (i + 5 < 22) continue;
            lo = std::min(lo, sm[i]);
            hi = std::max(hi, sm[i]);
        }
        bool flat = hi - lo < 0.02;
        std::ostringstream os;
        os << "smoothed val AP monotone to 21: " << (mono ? "yes" : "no")
           << ", epochs 22-30 span " << (hi - lo) * 100 << " AP pts";
        report("desk run: convergence shape (Fig.-4-like)", mono && flat, os.str());
    }
    double total = seconds_since(t0);
    report("desk run: wall clock < 45 min", total < 45 * 60,
           std::to_string(total) + " s");
}

}  // namespace

int main(int argc, char** argv) {
    bool desk = false;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--desk") == 0) desk = true;
        else if (std::strcmp(argv[i], "--fast") != 0) {
            std::fprintf(stderr, "usage: acceptance [--fast|--desk]\n");
            return 2;
        }
    }
    if (desk) {
        run_desk();
    } else {
        c_gradients();
        c_conv_oracle();
        c_receptive_field();
        c_losses();
        c_metrics();
        c_param_parity();
        c_pipeline_exactness();
    }
    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
