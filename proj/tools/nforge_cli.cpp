#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "nforge.h"

namespace {

// 0 success, 1 validation/runtime failure, 2 usage error
int status_to_exit(nf_status st) {
    if (st == NF_OK) return 0;
    std::fprintf(stderr, "error: %s\n", nf_last_error());
    return st == NF_ERR_ARGUMENT ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nforge: 3-D lung-nodule detection pipeline"};
    app.require_subcommand(1);

    std::string config, out;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    app.add_option("--config", config, "pipeline config file (TOML subset)");
    app.add_option("--seed", seed, "rng seed override")->each([&](const std::string&) {
        seed_set = true;
    });
    app.add_option("--out", out, "output directory/file");
    app.add_option("--threads", threads, "worker threads (current build runs single-threaded)");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset into --out");
    auto* split = app.add_subcommand("split", "write split.json for a data directory");
    auto* train = app.add_subcommand("train", "train a model; artifacts land in --out");
    auto* eval = app.add_subcommand("eval", "evaluate a model on the test split");
    auto* infer = app.add_subcommand("infer", "run one volume through a model");
    auto* gradcheck = app.add_subcommand("gradcheck", "run the full gradient suite");
    auto* rf = app.add_subcommand("rf", "effective receptive field of a conv stack");
    // global flags remain valid after the subcommand name
    for (auto* sub : {synth, split, train, eval, infer, gradcheck, rf}) sub->fallthrough();

    std::string data, model_path, volume, layers;
    split->add_option("--data", data, "data directory");
    train->add_option("--data", data, "data directory");
    eval->add_option("--data", data, "data directory");
    eval->add_option("--model", model_path, "checkpoint (model.nf)")->required();
    infer->add_option("--model", model_path, "checkpoint (model.nf)")->required();
    infer->add_option("--volume", volume, "volume .json header")->required();
    rf->add_option("--layers", layers, "stack, e.g. 3x3:1,3x3:2,3x3:4")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::fprintf(stderr, "%s\n", e.what());
        std::fputs(app.help().c_str(), stderr);
        return 2;
    }

    if (const char* env = std::getenv("NFORGE_THREADS")) threads = std::atoi(env);
    nf_set_threads(threads);

    if (!config.empty()) {
        std::ifstream probe(config);
        if (!probe) {
            std::fprintf(stderr, "error: cannot open config file: %s\n", config.c_str());
            return 2;
        }
    }
    const char* cfg = config.empty() ? nullptr : config.c_str();

    if (rf->parsed()) {
        int64_t v = 0;
        nf_status st = nf_rf(layers.c_str(), &v);
        if (st == NF_OK) std::printf("%lld\n", static_cast<long long>(v));
        return status_to_exit(st);
    }
    if (gradcheck->parsed()) {
        char* table = nullptr;
        int all = 0;
        nf_status st = nf_gradcheck(seed, &table, &all);
        if (table) {
            std::fputs(table, stdout);
            nf_string_free(table);
        }
        if (st != NF_OK) return status_to_exit(st);
        return all ? 0 : 1;
    }
    if (synth->parsed()) {
        if (out.empty()) {
            std::fputs("error: synth requires --out\n", stderr);
            return 2;
        }
        return status_to_exit(nf_synth(cfg, out.c_str(), seed));
    }
    if (split->parsed()) {
        if (data.empty()) {
            std::fputs("error: split requires --data\n", stderr);
            return 2;
        }
        return status_to_exit(nf_split(cfg, data.c_str(), seed));
    }
    if (train->parsed()) {
        if (data.empty() || out.empty()) {
            std::fputs("error: train requires --data and --out\n", stderr);
            return 2;
        }
        char* summary = nullptr;
        nf_status st = nf_train(cfg, data.c_str(), out.c_str(), seed, seed_set ? 1 : 0, &summary);
        if (summary) {
            std::fputs(summary, stdout);
            std::fputc('\n', stdout);
            nf_string_free(summary);
        }
        return status_to_exit(st);
    }

    // eval / infer need a loaded model
    nf_model* model = nullptr;
    nf_status st = nf_model_load(cfg, model_path.c_str(), &model);
    if (st != NF_OK) return status_to_exit(st);
    if (eval->parsed()) {
        if (data.empty()) {
            std::fputs("error: eval requires --data\n", stderr);
            nf_model_free(model);
            return 2;
        }
        char* report = nullptr;
        st = nf_evaluate(model, cfg, data.c_str(), out.empty() ? nullptr : out.c_str(), &report);
        if (report) {
            std::fputs(report, stdout);
            std::fputc('\n', stdout);
            nf_string_free(report);
        }
    } else {  // infer
        if (out.empty()) {
            std::fputs("error: infer requires --out CSV path\n", stderr);
            nf_model_free(model);
            return 2;
        }
        st = nf_infer(model, cfg, volume.c_str(), out.c_str());
    }
    nf_model_free(model);
    return status_to_exit(st);
}
