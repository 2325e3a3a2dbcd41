#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "core/csvio.hpp"
#include "core/eval.hpp"
#include "core/train.hpp"

using namespace nforge;

namespace {

std::string temp_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / "nforge_pipeline_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

// small pro_hrnet sized for 16^3 patches; exercises the parser on the way
PipelineConfig tiny_config() {
    return parse_config_text(R"(
[data]
patch_edge = 16
eval_edge = 16

[model]
variant = "pro_hrnet"
base_width = 2
blocks_per_stream = 1
head_width = 4
refine_hidden = 8

[detect]
top_k = 32

[train]
epochs = 3
batch_size = 2
seed = 7
refine_proposals = 4
min_neg = 8
)");
}

std::vector<Patch> tiny_patches(const PipelineConfig& cfg, int n_volumes, uint64_t seed) {
    SynthConfig sc;
    sc.n_volumes = n_volumes;
    sc.dims = {16, 16, 16};
    sc.min_nodules = 1;
    sc.max_nodules = 1;
    sc.min_diameter_mm = 4.0;
    sc.max_diameter_mm = 7.0;
    std::vector<Patch> out;
    for (const auto& sv : synth_generate(sc, seed)) {
        auto ps = extract_patches(sv.volume, sv.annotations, cfg.patch_edge, cfg.patch_edge,
                                  cfg.window_lo, cfg.window_hi);
        out.insert(out.end(), ps.begin(), ps.end());
    }
    return out;
}

std::vector<Scalar> flat_params(Detector& model) {
    std::vector<Scalar> out;
    for (auto& p : model.params())
        out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

}  // namespace

TEST_CASE("sgd momentum, two steps hand-unrolled") {
    NoGradGuard ng;
    Tensor w(Shape{2}, {1.0, 2.0}, true);
    std::vector<NamedTensor> params{{"w", w}};
    Sgd opt;
    opt.lr = 0.1;
    opt.momentum = 0.9;

    w.mutable_grad() = {0.5, -1.0};
    opt.step(params);
    // v1 = g1, w1 = w0 - lr*g1
    CHECK(w.values()[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
    CHECK(w.values()[1] == doctest::Approx(2.0 + 0.1 * 1.0).epsilon(1e-15));

    w.mutable_grad() = {0.25, 0.5};
    opt.step(params);
    // v2 = 0.9*v1 + g2
    Scalar v2x = 0.9 * 0.5 + 0.25, v2y = 0.9 * -1.0 + 0.5;
    CHECK(w.values()[0] == doctest::Approx(0.95 - 0.1 * v2x).epsilon(1e-15));
    CHECK(w.values()[1] == doctest::Approx(2.1 - 0.1 * v2y).epsilon(1e-15));
}

TEST_CASE("sgd rejects missing gradients") {
    NoGradGuard ng;
    Tensor w(Shape{2}, {1.0, 2.0}, true);
    std::vector<NamedTensor> params{{"w", w}};
    Sgd opt;
    CHECK_THROWS_AS(opt.step(params), std::logic_error);
}

TEST_CASE("config parser: defaults, overrides, comments") {
    PipelineConfig cfg = parse_config_text(R"(
# full-line comment
[data]
patch_edge = 24   # trailing comment
[model]
anchor_scales = [[3, 5], [7, 9], [11, 13], [15, 17]]
[loss]
cascade_ious = [0.5, 0.55, 0.6]
[train]
augment = false
lr = 0.005
)");
    CHECK(cfg.patch_edge == 24);
    CHECK(cfg.eval_edge == 64);  // untouched default
    CHECK(cfg.anchor_scales == std::vector<std::vector<Scalar>>{{3, 5}, {7, 9}, {11, 13}, {15, 17}});
    CHECK(cfg.loss.cascade_ious == std::vector<Scalar>{0.5, 0.55, 0.6});
    CHECK(cfg.train.augment == false);
    CHECK(cfg.train.lr == 0.005);
    CHECK(cfg.variant == "pro_hrnet");
}

TEST_CASE("config parser: errors carry line numbers") {
    auto msg_of = [](const std::string& text) {
        try {
            parse_config_text(text);
        } catch (const std::invalid_argument& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(msg_of("[data]\nnope = 1\n").find("line 2") != std::string::npos);
    CHECK(msg_of("[data]\nnope = 1\n").find("data.nope") != std::string::npos);
    CHECK(msg_of("[wat]\nx = 1\n").find("unknown section") != std::string::npos);
    CHECK(msg_of("[train]\nlr = abc\n").find("cannot parse") != std::string::npos);
    CHECK(msg_of("patch_edge = 16\n").find("outside any [section]") != std::string::npos);
    CHECK(msg_of("[train]\nlr 3\n").find("expected key = value") != std::string::npos);
    // validation failures surface too
    CHECK_THROWS_AS(parse_config_text("[data]\npatch_edge = 17\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("[train]\nmomentum = 1.5\n"), std::invalid_argument);
}

TEST_CASE("detections and annotations csv round-trip losslessly") {
    std::string dir = temp_dir("csv");
    std::vector<WorldDetection> dets{
        {"volA", {{1.0 / 3.0, -2.25, 17.125, 6.5}, 0.123456789012345678, 2}},
        {"volB", {{0.1, 0.2, 0.3, 3.0000000001}, 1e-12, 0}},
    };
    write_detections_csv(dir + "/d.csv", dets);
    auto back = read_detections_csv(dir + "/d.csv");
    REQUIRE(back.size() == dets.size());
    for (size_t i = 0; i < dets.size(); ++i) {
        CHECK(back[i].volume_id == dets[i].volume_id);
        CHECK(back[i].det.box.cx == dets[i].det.box.cx);
        CHECK(back[i].det.box.cy == dets[i].det.box.cy);
        CHECK(back[i].det.box.cz == dets[i].det.box.cz);
        CHECK(back[i].det.box.d == dets[i].det.box.d);
        CHECK(back[i].det.score == dets[i].det.score);
        CHECK(back[i].det.stage == dets[i].det.stage);
    }

    std::vector<Annotation> anns{{"v1", 1.5, 2.5, 3.5, 8.000000000000002},
                                 {"v2", -0.25, 1e6, 7.0, 4.0}};
    write_annotations_csv(dir + "/a.csv", anns);
    auto anns2 = read_annotations_csv(dir + "/a.csv");
    REQUIRE(anns2.size() == anns.size());
    for (size_t i = 0; i < anns.size(); ++i) {
        CHECK(anns2[i].volume_id == anns[i].volume_id);
        CHECK(anns2[i].x_mm == anns[i].x_mm);
        CHECK(anns2[i].y_mm == anns[i].y_mm);
        CHECK(anns2[i].z_mm == anns[i].z_mm);
        CHECK(anns2[i].diameter_mm == anns[i].diameter_mm);
    }
}

TEST_CASE("epoch log csv round-trip and pr curve format") {
    std::string dir = temp_dir("logcsv");
    std::vector<EpochLog> logs{{1, 0.75, 0.8, 0.25, 0.5, 0.125, 12.5},
                               {2, 1.0 / 3.0, 0.0, 0.3, 0.6, 0.2, 11.0}};
    write_epoch_log_csv(dir + "/log.csv", logs);
    auto back = read_epoch_log_csv(dir + "/log.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].epoch == 1);
    CHECK(back[1].train_loss == logs[1].train_loss);
    CHECK(back[1].ap50 == 0.6);
    CHECK(back[0].seconds == 12.5);

    PRCurve curve;
    curve.points = {{0.9, 1.0, 0.5}, {0.4, 0.5, 0.5}};
    write_pr_curve_csv(dir + "/pr.csv", curve);
    std::ifstream f(dir + "/pr.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "threshold,precision,recall");
    std::getline(f, line);
    CHECK(line == "0.9,1,0.5");

    auto js = nlohmann::json::parse(ap_report_json({0.5, 0.75, 0.25, {0.75, 0.25}}));
    CHECK(js["ap"].get<double>() == 0.5);
    CHECK(js["ap50"].get<double>() == 0.75);
    CHECK(js["ap75"].get<double>() == 0.25);
    CHECK(js["per_threshold"] == nlohmann::json::array({0.75, 0.25}));
}

TEST_CASE("pooled ap matches per-volume hand computation") {
    // volume A: perfect hit at score .9; volume B: pure miss at score .8
    std::vector<Annotation> anns{{"A", 10, 10, 10, 6}, {"B", 20, 20, 20, 6}};
    std::vector<WorldDetection> dets{
        {"A", {{10, 10, 10, 6}, 0.9, 1}},
        {"B", {{50, 50, 50, 6}, 0.8, 1}},
    };
    APReport rep = pooled_ap_report(dets, anns);
    // sweep: thr .9 -> P=1, R=1/2; thr .8 -> P=1/2, R=1/2; envelope area = 1/2
    CHECK(rep.ap50 == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.ap == doctest::Approx(0.5).epsilon(1e-12));  // exact overlap at all ten IoUs

    // same boxes in the same volume would cross-match; pooling must not
    std::vector<WorldDetection> swapped{
        {"B", {{10, 10, 10, 6}, 0.9, 1}},  // right box, wrong volume
        {"A", {{50, 50, 50, 6}, 0.8, 1}},
    };
    CHECK(pooled_ap_report(swapped, anns).ap50 == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("small-nodule subset drops detections claimed by excluded gt") {
    std::vector<Annotation> anns{{"A", 10, 10, 10, 5}, {"A", 40, 40, 40, 20}};
    std::vector<WorldDetection> dets{
        {"A", {{40, 40, 40, 20}, 0.95, 1}},  // matches the excluded large GT: dropped
        {"A", {{10, 10, 10, 5}, 0.6, 1}},    // matches the small GT: TP
    };
    APReport rep = small_nodule_ap_report(dets, anns, 8.0);
    CHECK(rep.ap50 == doctest::Approx(1.0).epsilon(1e-12));
    // an unmatched stray still counts as FP against the subset
    dets.push_back({"A", {{70, 70, 70, 5}, 0.99, 1}});
    CHECK(small_nodule_ap_report(dets, anns, 8.0).ap50 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("training runs the schedule, logs every epoch, and is deterministic") {
    PipelineConfig cfg = tiny_config();
    auto patches = tiny_patches(cfg, 2, 11);
    REQUIRE(!patches.empty());

    Detector m1 = Detector::build(cfg, 1);
    TrainOptions opts;
    auto logs = train(m1, patches, cfg.train, opts);
    REQUIRE(logs.size() == static_cast<size_t>(cfg.train.epochs));
    for (size_t i = 0; i < logs.size(); ++i) {
        CHECK(logs[i].epoch == static_cast<int>(i) + 1);
        CHECK(std::isfinite(logs[i].train_loss));
        CHECK(logs[i].train_loss > 0);
        CHECK(logs[i].seconds >= 0);
    }

    Detector m2 = Detector::build(cfg, 1);
    auto logs2 = train(m2, patches, cfg.train, opts);
    CHECK(flat_params(m1) == flat_params(m2));  // bitwise
    for (size_t i = 0; i < logs.size(); ++i)
        CHECK(logs[i].train_loss == logs2[i].train_loss);

    Detector m3 = Detector::build(cfg, 2);  // different seed diverges
    auto logs3 = train(m3, patches, cfg.train, opts);
    CHECK(flat_params(m1) != flat_params(m3));
    (void)logs3;
}

TEST_CASE("checkpoint resume is bitwise identical to an unbroken run") {
    PipelineConfig cfg = tiny_config();
    auto patches = tiny_patches(cfg, 2, 13);
    std::string dir = temp_dir("resume");

    Detector full = Detector::build(cfg, 3);
    TrainOptions fopts;
    fopts.out_dir = dir + "/full";
    train(full, patches, cfg.train, fopts);

    TrainConfig head = cfg.train;
    head.epochs = 2;
    Detector part = Detector::build(cfg, 3);
    TrainOptions popts;
    popts.out_dir = dir + "/part";
    train(part, patches, head, popts);

    Detector resumed = Detector::build(cfg, 99);  // init is overwritten by the load
    TrainOptions ropts;
    ropts.resume_from = dir + "/part/ckpt_epoch_02";
    auto rlogs = train(resumed, patches, cfg.train, ropts);
    REQUIRE(rlogs.size() == 1);
    CHECK(rlogs[0].epoch == 3);
    CHECK(flat_params(resumed) == flat_params(full));
    // batchnorm running stats must survive the round trip too
    auto fb = full.buffers();
    auto rb = resumed.buffers();
    REQUIRE(fb.size() == rb.size());
    for (size_t i = 0; i < fb.size(); ++i) CHECK(fb[i].tensor.values() == rb[i].tensor.values());

    // the full run left one checkpoint per epoch
    for (int e = 1; e <= cfg.train.epochs; ++e) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%02d", e);
        CHECK(std::filesystem::exists(dir + "/full/ckpt_epoch_" + buf + ".nf"));
        CHECK(std::filesystem::exists(dir + "/full/ckpt_epoch_" + buf + ".state"));
    }
    auto disk_logs = read_epoch_log_csv(dir + "/full/epoch_log.csv");
    CHECK(disk_logs.size() == static_cast<size_t>(cfg.train.epochs));
}

TEST_CASE("model save/load round-trips bitwise") {
    PipelineConfig cfg = tiny_config();
    std::string dir = temp_dir("ckpt");
    Detector a = Detector::build(cfg, 5);
    a.save(dir + "/m.nf");
    Detector b = Detector::build(cfg, 6);
    b.load(dir + "/m.nf");
    CHECK(flat_params(a) == flat_params(b));
    auto ab = a.buffers();
    auto bb = b.buffers();
    REQUIRE(ab.size() == bb.size());
    for (size_t i = 0; i < ab.size(); ++i) CHECK(ab[i].tensor.values() == bb[i].tensor.values());
}

TEST_CASE("infer_volume tiles, merges, and suppresses duplicates") {
    PipelineConfig cfg = tiny_config();
    SynthConfig sc;
    sc.n_volumes = 1;
    sc.dims = {24, 24, 24};
    sc.min_nodules = 1;
    sc.max_nodules = 1;
    sc.min_diameter_mm = 5.0;
    sc.max_diameter_mm = 7.0;
    auto sv = synth_generate(sc, 21);
    Detector m = Detector::build(cfg, 5);

    auto dets = infer_volume(m, sv[0].volume, cfg.eval_edge, cfg.window_lo, cfg.window_hi);
    for (const auto& wd : dets) {
        CHECK(wd.volume_id == sv[0].volume.header.volume_id);
        CHECK(wd.det.box.d >= 3.0);  // filter_small applied
        CHECK(wd.det.score >= m.detect_config().score_thresh);
    }
    // NMS invariant holds across tile seams
    for (size_t i = 0; i < dets.size(); ++i)
        for (size_t j = i + 1; j < dets.size(); ++j)
            CHECK(iou3d(dets[i].det.box, dets[j].det.box) <= m.detect_config().nms_iou);
    // scores descend
    for (size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].det.score >= dets[i].det.score);

    APReport rep = evaluate(m, {sv[0].volume}, sv[0].annotations, cfg.eval_edge, cfg.window_lo,
                            cfg.window_hi);
    CHECK(rep.ap >= 0.0);
    CHECK(rep.ap <= 1.0);
}

TEST_CASE("validation hooks report per-epoch loss and ap") {
    PipelineConfig cfg = tiny_config();
    auto patches = tiny_patches(cfg, 2, 31);
    auto val = tiny_patches(cfg, 1, 32);
    SynthConfig sc;
    sc.n_volumes = 1;
    sc.dims = {16, 16, 16};
    sc.max_nodules = 1;
    sc.min_diameter_mm = 5.0;
    sc.max_diameter_mm = 7.0;
    auto sv = synth_generate(sc, 33);
    std::vector<Volume> vols{sv[0].volume};

    TrainConfig tc = cfg.train;
    tc.epochs = 1;
    Detector m = Detector::build(cfg, 8);
    TrainOptions opts;
    opts.val_patches = &val;
    opts.val_volumes = &vols;
    opts.val_annotations = &sv[0].annotations;
    opts.eval_edge = cfg.eval_edge;

    auto before = m.buffers();
    std::vector<std::vector<Scalar>> before_vals;
    for (auto& b : before) before_vals.push_back(b.tensor.values());
    auto logs = train(m, patches, tc, opts);
    REQUIRE(logs.size() == 1);
    CHECK(std::isfinite(logs[0].val_loss));
    CHECK(logs[0].val_loss > 0);
    CHECK(logs[0].ap >= 0.0);
    CHECK(logs[0].ap <= 1.0);
    CHECK(logs[0].ap50 >= logs[0].ap75);  // monotone in IoU threshold
}
