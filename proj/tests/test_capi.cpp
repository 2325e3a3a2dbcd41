#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "nforge.h"

namespace {

std::string temp_dir(const std::string& leaf) {
    auto dir = std::filesystem::temp_directory_path() / "nforge_capi_test" / leaf;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string take(char* s) {
    REQUIRE(s != nullptr);
    std::string out(s);
    nf_string_free(s);
    return out;
}

const char* kTinyConfig = R"(
[data]
patch_edge = 16
eval_edge = 16

[synth]
n_volumes = 4
dims = [16, 16, 16]
max_nodules = 1
min_diameter_mm = 4
max_diameter_mm = 7

[model]
base_width = 2
head_width = 4
refine_hidden = 8

[train]
epochs = 1
batch_size = 2
val_volumes = 1
min_neg = 8
refine_proposals = 4
)";

}  // namespace

TEST_CASE("nf_rf matches the dilated-stack arithmetic") {
    int64_t rf = 0;
    CHECK(nf_rf("3x3:1,3x3:2,3x3:4", &rf) == NF_OK);
    CHECK(rf == 15);
    CHECK(nf_rf("3x3", &rf) == NF_OK);
    CHECK(rf == 3);
    CHECK(nf_rf("3x3,3x3", &rf) == NF_OK);
    CHECK(rf == 5);
    CHECK(nf_rf("3x3,3x3,3x3", &rf) == NF_OK);
    CHECK(rf == 7);
    CHECK(nf_rf("7x7:2", &rf) == NF_OK);
    CHECK(rf == 13);
}

TEST_CASE("nf_rf rejects malformed stacks with a message") {
    int64_t rf = 0;
    CHECK(nf_rf(nullptr, &rf) == NF_ERR_ARGUMENT);
    CHECK(std::strlen(nf_last_error()) > 0);
    CHECK(nf_rf("3x5", &rf) == NF_ERR_ARGUMENT);
    CHECK(nf_rf("axb", &rf) == NF_ERR_ARGUMENT);
    CHECK(nf_rf("33", &rf) == NF_ERR_ARGUMENT);
    CHECK(nf_rf("3x3:", &rf) == NF_ERR_ARGUMENT);
    CHECK(nf_rf("3x3", nullptr) == NF_ERR_ARGUMENT);
    // a subsequent success clears the error slot
    CHECK(nf_rf("3x3", &rf) == NF_OK);
    CHECK(std::strlen(nf_last_error()) == 0);
}

TEST_CASE("thread knob round-trips and clamps") {
    nf_set_threads(4);
    CHECK(nf_get_threads() == 4);
    nf_set_threads(0);
    CHECK(nf_get_threads() == 1);
    nf_set_threads(1);
}

TEST_CASE("nf_gradcheck reports every op and passes") {
    char* table = nullptr;
    int all = 0;
    REQUIRE(nf_gradcheck(0, &table, &all) == NF_OK);
    std::string t = take(table);
    CHECK(all == 1);
    for (const char* op : {"conv3d_dil1", "conv3d_dil2", "conv3d_dil4", "downsample", "upsample",
                           "fc", "batchnorm", "roi_align", "cls_loss", "reg_loss", "total_loss"})
        CHECK(t.find(op) != std::string::npos);
    CHECK(t.find("PASS") != std::string::npos);
}

TEST_CASE("synth -> split -> train -> evaluate -> infer through the C surface") {
    std::string dir = temp_dir("e2e");
    std::string cfg_path = dir + "/cfg.toml";
    {
        std::ofstream f(cfg_path);
        f << kTinyConfig;
    }
    std::string data = dir + "/data";
    std::string run = dir + "/run";

    REQUIRE(nf_synth(cfg_path.c_str(), data.c_str(), 17) == NF_OK);
    CHECK(std::filesystem::exists(data + "/annotations.csv"));
    CHECK(std::filesystem::exists(data + "/vol0.json"));
    CHECK(std::filesystem::exists(data + "/vol0.raw"));

    REQUIRE(nf_split(cfg_path.c_str(), data.c_str(), 17) == NF_OK);
    CHECK(std::filesystem::exists(data + "/split.json"));

    char* summary = nullptr;
    REQUIRE(nf_train(cfg_path.c_str(), data.c_str(), run.c_str(), 5, 1, &summary) == NF_OK);
    std::string sj = take(summary);
    CHECK(sj.find("\"epochs\"") != std::string::npos);
    CHECK(std::filesystem::exists(run + "/model.nf"));
    CHECK(std::filesystem::exists(run + "/epoch_log.csv"));

    nf_model* model = nullptr;
    REQUIRE(nf_model_load(cfg_path.c_str(), (run + "/model.nf").c_str(), &model) == NF_OK);
    REQUIRE(model != nullptr);

    char* report = nullptr;
    REQUIRE(nf_evaluate(model, cfg_path.c_str(), data.c_str(), (run + "/eval").c_str(),
                        &report) == NF_OK);
    std::string rj = take(report);
    CHECK(rj.find("\"ap\"") != std::string::npos);
    CHECK(std::filesystem::exists(run + "/eval/detections.csv"));
    CHECK(std::filesystem::exists(run + "/eval/ap_report.json"));

    std::string out_csv = run + "/dets.csv";
    REQUIRE(nf_infer(model, cfg_path.c_str(), (data + "/vol0.json").c_str(),
                     out_csv.c_str()) == NF_OK);
    std::ifstream csv(out_csv);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "volume_id,cx_mm,cy_mm,cz_mm,d_mm,score,stage");

    nf_model_free(model);
}

TEST_CASE("io failures surface as NF_ERR_IO with messages") {
    CHECK(nf_train("/definitely/missing.toml", "x", "y", 0, 0, nullptr) == NF_ERR_IO);
    CHECK(std::strlen(nf_last_error()) > 0);
    nf_model* m = nullptr;
    CHECK(nf_model_load(nullptr, "/definitely/missing.nf", &m) == NF_ERR_IO);
    CHECK(m == nullptr);
    CHECK(nf_split(nullptr, "/definitely/missing-dir", 0) == NF_ERR_IO);
    CHECK(nf_synth(nullptr, "", 0) == NF_ERR_ARGUMENT);
}
