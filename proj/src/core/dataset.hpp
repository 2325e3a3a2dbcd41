#pragma once

#include "config.hpp"
#include "csvio.hpp"
#include "eval.hpp"
#include "splits.hpp"
#include "train.hpp"

namespace nforge {

// A data directory holds <id>.json/<id>.raw volume pairs, annotations.csv,
// and optionally split.json.
void synth_dataset(const SynthConfig& cfg, const std::string& out_dir, uint64_t seed);
std::vector<std::string> list_volume_ids(const std::string& data_dir);

struct Dataset {
    std::vector<Volume> volumes;
    std::vector<Annotation> annotations;  // restricted to the loaded volumes
};
Dataset load_dataset(const std::string& data_dir, const std::vector<std::string>& ids);

void write_split_json(const std::string& path, const SplitPlan& plan);
SplitPlan read_split_json(const std::string& path);

// Train/test ids under a plan: holdout ignores fold; kfold holds fold out.
struct TrainTestIds {
    std::vector<std::string> train, test;
};
TrainTestIds split_ids(const SplitPlan& plan, int fold = 1);

// Tiles each volume at stride = patch_edge, keeps every nodule-bearing patch,
// and adds round(negative_patch_fraction * positives) background patches
// sampled through rng.
std::vector<Patch> training_patches(const Dataset& ds, const PipelineConfig& cfg,
                                    std::mt19937_64& rng);

// Full training orchestration: split (data_dir/split.json, or a fresh seeded
// holdout), patch extraction, the epoch loop with per-epoch validation AP on
// the first train.val_volumes test volumes, final model at out_dir/model.nf.
std::vector<EpochLog> run_train(const PipelineConfig& cfg, const std::string& data_dir,
                                const std::string& out_dir, Detector* out_model = nullptr);

// Whole-test-set evaluation; when out_dir is non-empty writes detections.csv
// and ap_report.json there.
APReport run_eval(const PipelineConfig& cfg, Detector& model, const std::string& data_dir,
                  const std::string& out_dir);

}  // namespace nforge
