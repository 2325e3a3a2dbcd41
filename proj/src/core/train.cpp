#include "train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "checkpoint.hpp"
#include "eval.hpp"

namespace nforge {

void Sgd::step(std::vector<NamedTensor>& params) {
    if (velocity.empty()) velocity.resize(params.size());
    if (velocity.size() != params.size())
        throw std::logic_error("Sgd::step: parameter count changed between steps");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        if (!t.has_grad())
            throw std::logic_error("Sgd::step: missing gradient for " + params[i].name);
        const auto& g = t.grad();
        auto& v = velocity[i];
        if (v.empty()) v.assign(g.size(), 0.0);
        if (v.size() != g.size())
            throw std::logic_error("Sgd::step: gradient size changed for " + params[i].name);
        auto& w = t.mutable_values();
        for (size_t j = 0; j < g.size(); ++j) {
            v[j] = momentum * v[j] + g[j];
            w[j] -= lr * v[j];
        }
    }
}

namespace {

std::string ckpt_prefix(const std::string& out_dir, int epoch) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%02d", epoch);
    return out_dir + "/ckpt_epoch_" + buf;
}

void save_checkpoint(const std::string& prefix, Detector& model, const Sgd& opt,
                     const std::mt19937_64& rng, int epoch) {
    std::vector<NamedTensor> all = model.params();
    {
        NoGradGuard ng;
        for (size_t i = 0; i < all.size(); ++i) {
            if (i < opt.velocity.size() && !opt.velocity[i].empty())
                all.push_back({"opt." + all[i].name,
                               Tensor(all[i].tensor.shape(), opt.velocity[i])});
        }
    }
    for (auto& b : model.buffers()) all.push_back(b);
    write_tensor_file(prefix + ".nf", all);

    std::ofstream f(prefix + ".state");
    if (!f) throw std::runtime_error("cannot write " + prefix + ".state");
    f << "epoch " << epoch << "\n";
    f << "rng " << rng << "\n";
}

int load_checkpoint(const std::string& prefix, Detector& model, Sgd& opt,
                    std::mt19937_64& rng) {
    model.load(prefix + ".nf");
    auto src = read_tensor_file(prefix + ".nf");
    auto ps = model.params();
    opt.velocity.assign(ps.size(), {});
    for (size_t i = 0; i < ps.size(); ++i) {
        auto it = src.find("opt." + ps[i].name);
        if (it != src.end()) opt.velocity[i] = it->second.values();
    }
    std::ifstream f(prefix + ".state");
    if (!f) throw std::runtime_error("cannot open " + prefix + ".state");
    std::string key;
    int epoch = 0;
    f >> key >> epoch;
    if (key != "epoch" || epoch < 1)
        throw std::runtime_error("malformed state file " + prefix + ".state");
    f >> key;
    if (key != "rng" || !(f >> rng))
        throw std::runtime_error("malformed rng state in " + prefix + ".state");
    return epoch;
}

// validation loss must not disturb batchnorm running statistics
struct BufferSnapshot {
    std::vector<std::vector<Scalar>> saved;
    explicit BufferSnapshot(std::vector<NamedTensor> bufs) : bufs_(std::move(bufs)) {
        for (auto& b : bufs_) saved.push_back(b.tensor.values());
    }
    void restore() {
        for (size_t i = 0; i < bufs_.size(); ++i) bufs_[i].tensor.mutable_values() = saved[i];
    }
    std::vector<NamedTensor> bufs_;
};

}  // namespace

std::vector<EpochLog> train(Detector& model, const std::vector<Patch>& patches,
                            const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (patches.empty()) throw std::invalid_argument("train: no patches");
    if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

    Sgd opt;
    opt.momentum = cfg.momentum;
    std::mt19937_64 rng(cfg.seed);
    int start_epoch = 1;
    if (!opts.resume_from.empty())
        start_epoch = load_checkpoint(opts.resume_from, model, opt, rng) + 1;

    auto params = model.params();
    std::vector<EpochLog> logs;
    size_t pool = patches.size();
    // per-epoch cap: a fresh shuffle each epoch rotates through the pool
    size_t n = cfg.patches_per_epoch > 0
                   ? std::min(pool, static_cast<size_t>(cfg.patches_per_epoch))
                   : pool;
    size_t n_batches = (n + static_cast<size_t>(cfg.batch_size) - 1) /
                       static_cast<size_t>(cfg.batch_size);

    for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        opt.lr = cfg.lr * (epoch >= cfg.lr_decay_epoch ? cfg.lr_decay : 1.0);

        std::vector<size_t> order(pool);
        for (size_t i = 0; i < pool; ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        order.resize(n);

        // late-phase stabilizer: training still normalizes by batch stats, but
        // the running stats eval uses stop drifting with the augmentation draw
        std::optional<BufferSnapshot> bn_freeze;
        if (cfg.bn_freeze_epoch > 0 && epoch >= cfg.bn_freeze_epoch)
            bn_freeze.emplace(model.buffers());

        Scalar epoch_loss = 0;
        for (size_t b = 0; b < n_batches; ++b) {
            size_t lo = b * static_cast<size_t>(cfg.batch_size);
            size_t hi = std::min(n, lo + static_cast<size_t>(cfg.batch_size));
            std::vector<Patch> aug;
            aug.reserve(hi - lo);
            std::vector<const Patch*> batch;
            for (size_t i = lo; i < hi; ++i) {
                const Patch& p = patches[order[i]];
                if (cfg.augment && !p.boxes.empty()) {
                    aug.push_back(augment(p, rng));
                    batch.push_back(&aug.back());
                } else {
                    batch.push_back(&p);
                }
            }
            for (auto& pt : params) {
                pt.tensor.zero_grad();
                pt.tensor.mutable_grad();  // zero-fill so every param sees a grad
            }
            Tensor loss = model.batch_loss(batch, cfg, rng);
            Scalar lv = loss.values()[0];
            if (!std::isfinite(lv))
                throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) +
                                         " batch " + std::to_string(b) + " (seed " +
                                         std::to_string(cfg.seed) + ")");
            backward(loss);
            if (cfg.grad_clip > 0) {
                Scalar sq = 0;
                for (auto& pt : params)
                    for (Scalar g : pt.tensor.grad()) sq += g * g;
                Scalar norm = std::sqrt(sq);
                if (norm > cfg.grad_clip) {
                    Scalar s = cfg.grad_clip / norm;
                    for (auto& pt : params)
                        for (Scalar& g : pt.tensor.mutable_grad()) g *= s;
                }
            }
            opt.step(params);
            epoch_loss += lv;
        }
        if (bn_freeze) bn_freeze->restore();

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = epoch_loss / static_cast<Scalar>(n_batches);

        if (opts.val_patches && !opts.val_patches->empty()) {
            BufferSnapshot snap(model.buffers());
            std::mt19937_64 vrng(cfg.seed ^ static_cast<uint64_t>(epoch));
            NoGradGuard ng;
            Scalar vl = 0;
            for (const auto& p : *opts.val_patches) {
                std::vector<const Patch*> one{&p};
                vl += model.batch_loss(one, cfg, vrng).values()[0];
            }
            log.val_loss = vl / static_cast<Scalar>(opts.val_patches->size());
            snap.restore();
        }
        if (opts.val_volumes && opts.val_annotations) {
            APReport rep = evaluate(model, *opts.val_volumes, *opts.val_annotations,
                                    opts.eval_edge, opts.window_lo, opts.window_hi);
            log.ap = rep.ap;
            log.ap50 = rep.ap50;
            log.ap75 = rep.ap75;
        }
        log.seconds = std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
        logs.push_back(log);

        if (!opts.out_dir.empty()) {
            save_checkpoint(ckpt_prefix(opts.out_dir, epoch), model, opt, rng, epoch);
            write_epoch_log_csv(opts.out_dir + "/epoch_log.csv", logs);
        }
    }
    return logs;
}

}  // namespace nforge
