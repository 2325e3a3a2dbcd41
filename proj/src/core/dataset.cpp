#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "patches.hpp"
#include "synth.hpp"

namespace nforge {

namespace fs = std::filesystem;

void synth_dataset(const SynthConfig& cfg, const std::string& out_dir, uint64_t seed) {
    fs::create_directories(out_dir);
    std::vector<Annotation> anns;
    for (const auto& sv : synth_generate(cfg, seed)) {
        write_volume(out_dir + "/" + sv.volume.header.volume_id, sv.volume);
        anns.insert(anns.end(), sv.annotations.begin(), sv.annotations.end());
    }
    write_annotations_csv(out_dir + "/annotations.csv", anns);
}

std::vector<std::string> list_volume_ids(const std::string& data_dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(data_dir))
        throw std::runtime_error("not a data directory: " + data_dir);
    for (const auto& e : fs::directory_iterator(data_dir)) {
        if (e.path().extension() != ".json") continue;
        fs::path raw = e.path();
        raw.replace_extension(".raw");
        if (fs::exists(raw)) ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

Dataset load_dataset(const std::string& data_dir, const std::vector<std::string>& ids) {
    Dataset ds;
    for (const auto& id : ids) ds.volumes.push_back(read_volume(data_dir + "/" + id + ".json"));
    std::string ann_path = data_dir + "/annotations.csv";
    if (fs::exists(ann_path)) {
        std::set<std::string> want(ids.begin(), ids.end());
        for (auto& a : read_annotations_csv(ann_path))
            if (want.count(a.volume_id)) ds.annotations.push_back(std::move(a));
    }
    return ds;
}

void write_split_json(const std::string& path, const SplitPlan& plan) {
    nlohmann::json j;
    j["kind"] = plan.kind == SplitKind::holdout ? "holdout" : "kfold";
    j["seed"] = plan.seed;
    j["k"] = plan.k;
    j["assignments"] = plan.assignments;
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << j.dump(2) << "\n";
}

SplitPlan read_split_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    SplitPlan plan;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "holdout") plan.kind = SplitKind::holdout;
    else if (kind == "kfold") plan.kind = SplitKind::kfold;
    else throw std::runtime_error(path + ": unknown split kind '" + kind + "'");
    plan.seed = j.at("seed").get<uint64_t>();
    plan.k = j.at("k").get<int>();
    plan.assignments = j.at("assignments").get<std::map<std::string, int>>();
    return plan;
}

TrainTestIds split_ids(const SplitPlan& plan, int fold) {
    TrainTestIds out;
    int test_fold = plan.kind == SplitKind::holdout ? 1 : fold;
    for (const auto& [id, f] : plan.assignments)
        (f == test_fold ? out.test : out.train).push_back(id);
    return out;
}

std::vector<Patch> training_patches(const Dataset& ds, const PipelineConfig& cfg,
                                    std::mt19937_64& rng) {
    std::vector<Patch> pos, neg_pool;
    for (const auto& vol : ds.volumes) {
        std::vector<Annotation> anns;
        for (const auto& a : ds.annotations)
            if (a.volume_id == vol.header.volume_id) anns.push_back(a);
        for (auto& p : extract_patches(vol, anns, cfg.patch_edge, cfg.patch_edge, cfg.window_lo,
                                       cfg.window_hi)) {
            if (p.boxes.empty()) neg_pool.push_back(std::move(p));
            else pos.push_back(std::move(p));
        }
    }
    size_t want_neg = static_cast<size_t>(
        std::llround(cfg.negative_patch_fraction * static_cast<Scalar>(pos.size())));
    std::shuffle(neg_pool.begin(), neg_pool.end(), rng);
    neg_pool.resize(std::min(want_neg, neg_pool.size()));
    pos.insert(pos.end(), std::make_move_iterator(neg_pool.begin()),
               std::make_move_iterator(neg_pool.end()));
    return pos;
}

std::vector<EpochLog> run_train(const PipelineConfig& cfg, const std::string& data_dir,
                                const std::string& out_dir, Detector* out_model) {
    auto ids = list_volume_ids(data_dir);
    if (ids.empty()) throw std::runtime_error("no volumes in " + data_dir);
    SplitPlan plan;
    std::string split_path = data_dir + "/split.json";
    if (fs::exists(split_path)) plan = read_split_json(split_path);
    else plan = holdout_split(ids, cfg.train.seed);
    TrainTestIds tt = split_ids(plan);
    if (tt.train.empty()) throw std::runtime_error("split leaves no training volumes");

    Dataset train_ds = load_dataset(data_dir, tt.train);
    std::mt19937_64 patch_rng(cfg.train.seed ^ 0xda7a5e7ull);
    auto patches = training_patches(train_ds, cfg, patch_rng);
    if (patches.empty()) throw std::runtime_error("no training patches extracted");

    TrainOptions opts;
    opts.out_dir = out_dir;
    opts.eval_edge = cfg.eval_edge;
    opts.window_lo = cfg.window_lo;
    opts.window_hi = cfg.window_hi;
    Dataset val_ds;
    if (cfg.train.val_volumes > 0 && !tt.test.empty()) {
        std::vector<std::string> val_ids(
            tt.test.begin(),
            tt.test.begin() + std::min<size_t>(tt.test.size(),
                                               static_cast<size_t>(cfg.train.val_volumes)));
        val_ds = load_dataset(data_dir, val_ids);
        opts.val_volumes = &val_ds.volumes;
        opts.val_annotations = &val_ds.annotations;
    }

    Detector model = Detector::build(cfg, cfg.train.seed);
    auto logs = train(model, patches, cfg.train, opts);
    if (!out_dir.empty()) model.save(out_dir + "/model.nf");
    if (out_model) *out_model = std::move(model);
    return logs;
}

APReport run_eval(const PipelineConfig& cfg, Detector& model, const std::string& data_dir,
                  const std::string& out_dir) {
    auto ids = list_volume_ids(data_dir);
    SplitPlan plan;
    std::string split_path = data_dir + "/split.json";
    if (fs::exists(split_path)) plan = read_split_json(split_path);
    else plan = holdout_split(ids, 0);
    TrainTestIds tt = split_ids(plan);
    if (tt.test.empty()) throw std::runtime_error("split leaves no test volumes");
    Dataset ds = load_dataset(data_dir, tt.test);

    std::vector<WorldDetection> dets;
    for (const auto& vol : ds.volumes) {
        auto vd = infer_volume(model, vol, cfg.eval_edge, cfg.window_lo, cfg.window_hi);
        dets.insert(dets.end(), vd.begin(), vd.end());
    }
    APReport rep = pooled_ap_report(dets, ds.annotations);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_detections_csv(out_dir + "/detections.csv", dets);
        std::ofstream f(out_dir + "/ap_report.json");
        f << ap_report_json(rep) << "\n";
    }
    return rep;
}

}  // namespace nforge
