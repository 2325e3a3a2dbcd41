#include "nforge.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include "json.hpp"

#include "core/dataset.hpp"
#include "core/gradsuite.hpp"

using namespace nforge;

namespace {

thread_local std::string g_last_error;
int g_threads = 1;

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

nf_status fail(nf_status code, const std::string& msg) {
    g_last_error = msg;
    return code;
}

// exception -> status code; invalid_argument means the caller's inputs,
// runtime_error is dominated by file problems in this codebase
template <typename Fn>
nf_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return NF_OK;
    } catch (const std::invalid_argument& e) {
        return fail(NF_ERR_ARGUMENT, e.what());
    } catch (const std::runtime_error& e) {
        return fail(NF_ERR_IO, e.what());
    } catch (const std::exception& e) {
        return fail(NF_ERR_INTERNAL, e.what());
    }
}

PipelineConfig config_or_default(const char* config_path) {
    if (config_path && *config_path) return load_config(config_path);
    PipelineConfig cfg;
    cfg.validate();
    return cfg;
}

std::string require(const char* s, const char* what) {
    if (!s || !*s) throw std::invalid_argument(std::string(what) + " must be provided");
    return s;
}

}  // namespace

struct nf_model {
    PipelineConfig cfg;
    Detector det;
};

extern "C" {

const char* nf_last_error(void) { return g_last_error.c_str(); }

void nf_string_free(char* s) { std::free(s); }

void nf_set_threads(int n) { g_threads = n <= 0 ? 1 : n; }
int nf_get_threads(void) { return g_threads; }

nf_status nf_rf(const char* layers, int64_t* out_rf) {
    return guarded([&] {
        std::string text = require(layers, "layers");
        if (!out_rf) throw std::invalid_argument("out_rf must be non-NULL");
        std::vector<ConvSpec> specs;
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t comma = text.find(',', pos);
            std::string tok = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                          : comma - pos);
            pos = comma == std::string::npos ? text.size() + 1 : comma + 1;
            size_t x = tok.find('x');
            if (x == std::string::npos)
                throw std::invalid_argument("bad layer '" + tok + "': expected KxK[:D]");
            size_t colon = tok.find(':', x);
            try {
                size_t used = 0;
                std::string ka = tok.substr(0, x);
                std::string kb = tok.substr(x + 1, colon == std::string::npos
                                                       ? std::string::npos
                                                       : colon - x - 1);
                int64_t k1 = std::stoll(ka, &used);
                if (used != ka.size()) throw std::invalid_argument(tok);
                int64_t k2 = std::stoll(kb, &used);
                if (used != kb.size()) throw std::invalid_argument(tok);
                if (k1 != k2) throw std::invalid_argument("non-square kernel in '" + tok + "'");
                int64_t dil = 1;
                if (colon != std::string::npos) {
                    std::string ds = tok.substr(colon + 1);
                    dil = std::stoll(ds, &used);
                    if (used != ds.size()) throw std::invalid_argument(tok);
                }
                specs.push_back(ConvSpec::same(k1, dil));
            } catch (const std::out_of_range&) {
                throw std::invalid_argument("bad layer '" + tok + "'");
            }
        }
        *out_rf = effective_receptive_field(specs)[0];
    });
}

nf_status nf_gradcheck(uint64_t seed, char** out_table, int* out_all_passed) {
    return guarded([&] {
        auto reports = gradient_suite(seed);
        bool all = true;
        for (const auto& r : reports) all = all && r.passed;
        if (out_table) *out_table = dup_string(format_gradient_table(reports));
        if (out_all_passed) *out_all_passed = all ? 1 : 0;
    });
}

nf_status nf_synth(const char* config_path, const char* out_dir, uint64_t seed) {
    return guarded([&] {
        PipelineConfig cfg = config_or_default(config_path);
        synth_dataset(cfg.synth, require(out_dir, "out_dir"), seed);
    });
}

nf_status nf_split(const char* config_path, const char* data_dir, uint64_t seed) {
    return guarded([&] {
        PipelineConfig cfg = config_or_default(config_path);
        std::string dir = require(data_dir, "data_dir");
        auto ids = list_volume_ids(dir);
        if (ids.empty()) throw std::runtime_error("no volumes in " + dir);
        SplitPlan plan = cfg.split_kind == "kfold" ? kfold_split(ids, cfg.split_k, seed)
                                                   : holdout_split(ids, seed);
        write_split_json(dir + "/split.json", plan);
    });
}

nf_status nf_train(const char* config_path, const char* data_dir, const char* out_dir,
                   uint64_t seed, int has_seed, char** out_summary_json) {
    return guarded([&] {
        PipelineConfig cfg = config_or_default(config_path);
        if (has_seed) cfg.train.seed = seed;
        auto logs = run_train(cfg, require(data_dir, "data_dir"), require(out_dir, "out_dir"));
        if (out_summary_json && !logs.empty()) {
            const EpochLog& last = logs.back();
            nlohmann::json j{{"epochs", logs.size()},
                             {"train_loss", last.train_loss},
                             {"val_loss", last.val_loss},
                             {"ap", last.ap},
                             {"ap50", last.ap50},
                             {"ap75", last.ap75}};
            *out_summary_json = dup_string(j.dump(2));
        }
    });
}

nf_status nf_model_load(const char* config_path, const char* checkpoint_path, nf_model** out) {
    return guarded([&] {
        if (!out) throw std::invalid_argument("out must be non-NULL");
        auto m = std::make_unique<nf_model>();
        m->cfg = config_or_default(config_path);
        m->det = Detector::build(m->cfg, 0);
        m->det.load(require(checkpoint_path, "checkpoint_path"));
        *out = m.release();
    });
}

void nf_model_free(nf_model* m) { delete m; }

nf_status nf_evaluate(nf_model* m, const char* config_path, const char* data_dir,
                      const char* out_dir, char** out_report_json) {
    return guarded([&] {
        if (!m) throw std::invalid_argument("model must be non-NULL");
        PipelineConfig cfg = config_path && *config_path ? load_config(config_path) : m->cfg;
        APReport rep = run_eval(cfg, m->det, require(data_dir, "data_dir"),
                                out_dir ? out_dir : "");
        if (out_report_json) *out_report_json = dup_string(ap_report_json(rep));
    });
}

nf_status nf_infer(nf_model* m, const char* config_path, const char* volume_json,
                   const char* out_csv) {
    return guarded([&] {
        if (!m) throw std::invalid_argument("model must be non-NULL");
        PipelineConfig cfg = config_path && *config_path ? load_config(config_path) : m->cfg;
        Volume vol = read_volume(require(volume_json, "volume_json"));
        auto dets = infer_volume(m->det, vol, cfg.eval_edge, cfg.window_lo, cfg.window_hi);
        write_detections_csv(require(out_csv, "out_csv"), dets);
    });
}

}  // extern "C"
