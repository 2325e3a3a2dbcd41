#include "config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nforge {

void TrainConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("train.lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("train.dropout must be in [0,1)");
    if (momentum < 0 || momentum >= 1)
        throw std::invalid_argument("train.momentum must be in [0,1)");
    if (neg_per_pos < 1 || min_neg < 1 || refine_proposals < 1)
        throw std::invalid_argument("train sampling knobs must be >= 1");
    if (val_volumes < 0) throw std::invalid_argument("train.val_volumes must be >= 0");
    if (grad_clip < 0) throw std::invalid_argument("train.grad_clip must be >= 0");
    if (patches_per_epoch < 0)
        throw std::invalid_argument("train.patches_per_epoch must be >= 0");
    if (bn_freeze_epoch < 0)
        throw std::invalid_argument("train.bn_freeze_epoch must be >= 0");
    if (ema_decay < 0 || ema_decay >= 1)
        throw std::invalid_argument("train.ema_decay must be in [0, 1)");
}

BackboneConfig PipelineConfig::backbone_config() const {
    Variant v = variant_from_string(variant);
    if (v == Variant::pro_hrnet)
        return make_pro(make_config(Variant::hrnet, base_width, blocks_per_stream));
    return make_config(v, base_width, blocks_per_stream);
}

void PipelineConfig::validate() const {
    train.validate();
    loss.validate();
    backbone_config().validate();
    if (patch_edge < 8 || patch_edge % 8 != 0 || eval_edge < 8 || eval_edge % 8 != 0)
        throw std::invalid_argument("patch_edge/eval_edge must be positive multiples of 8");
    if (anchor_scales.size() != 4)
        throw std::invalid_argument("anchor_scales needs one diameter list per pyramid level");
    for (const auto& lv : anchor_scales) {
        if (lv.empty()) throw std::invalid_argument("anchor_scales entries must be non-empty");
        if (lv.size() != anchor_scales[0].size())
            throw std::invalid_argument("anchor_scales must use the same count per level");
    }
    if (negative_patch_fraction < 0)
        throw std::invalid_argument("negative_patch_fraction must be >= 0");
    if (!(detect.nms_iou > 0 && detect.nms_iou < 1) ||
        !(detect.proposal_nms_iou > 0 && detect.proposal_nms_iou < 1))
        throw std::invalid_argument("detect NMS IoU thresholds must be in (0, 1)");
    if (detect.roi_context < 1.0)
        throw std::invalid_argument("detect.roi_context must be >= 1");
    if (split_kind != "holdout" && split_kind != "kfold")
        throw std::invalid_argument("split kind must be holdout or kfold");
}

namespace {

struct Value {
    enum Kind { number, string, boolean, array, nested } kind;
    Scalar d = 0;
    std::string s;
    bool b = false;
    std::vector<Scalar> arr;
    std::vector<std::vector<Scalar>> rows;
};

[[noreturn]] void fail(int line, const std::string& msg) {
    throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<Scalar> parse_flat_array(const std::string& body, int line) {
    std::vector<Scalar> out;
    std::stringstream ss(body);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        cell = trim(cell);
        if (cell.empty()) fail(line, "empty array element");
        try {
            size_t used = 0;
            out.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::exception&) {
            fail(line, "bad array number '" + cell + "'");
        }
    }
    return out;
}

Value parse_value(const std::string& raw, int line) {
    Value v;
    if (raw.empty()) fail(line, "missing value");
    if (raw.front() == '"') {
        if (raw.size() < 2 || raw.back() != '"') fail(line, "unterminated string");
        v.kind = Value::string;
        v.s = raw.substr(1, raw.size() - 2);
        return v;
    }
    if (raw == "true" || raw == "false") {
        v.kind = Value::boolean;
        v.b = raw == "true";
        return v;
    }
    if (raw.front() == '[') {
        if (raw.back() != ']') fail(line, "unterminated array");
        std::string body = trim(raw.substr(1, raw.size() - 2));
        if (!body.empty() && body.front() == '[') {
            // one level of nesting: [[..],[..]]
            v.kind = Value::nested;
            size_t pos = 0;
            while (pos < body.size()) {
                size_t open = body.find('[', pos);
                if (open == std::string::npos) break;
                size_t close = body.find(']', open);
                if (close == std::string::npos) fail(line, "unterminated inner array");
                v.rows.push_back(parse_flat_array(body.substr(open + 1, close - open - 1), line));
                pos = close + 1;
            }
            if (v.rows.empty()) fail(line, "empty nested array");
            return v;
        }
        v.kind = Value::array;
        if (!body.empty()) v.arr = parse_flat_array(body, line);
        return v;
    }
    try {
        size_t used = 0;
        v.d = std::stod(raw, &used);
        if (used != raw.size()) throw std::invalid_argument(raw);
        v.kind = Value::number;
        return v;
    } catch (const std::exception&) {
        fail(line, "cannot parse value '" + raw + "'");
    }
}

Scalar want_num(const Value& v, int line) {
    if (v.kind != Value::number) fail(line, "expected a number");
    return v.d;
}
int64_t want_int(const Value& v, int line) {
    Scalar d = want_num(v, line);
    auto i = static_cast<int64_t>(d);
    if (static_cast<Scalar>(i) != d) fail(line, "expected an integer");
    return i;
}
std::string want_str(const Value& v, int line) {
    if (v.kind != Value::string) fail(line, "expected a quoted string");
    return v.s;
}
bool want_bool(const Value& v, int line) {
    if (v.kind != Value::boolean) fail(line, "expected true/false");
    return v.b;
}
std::array<int64_t, 3> want_int3(const Value& v, int line) {
    if (v.kind != Value::array || v.arr.size() != 3) fail(line, "expected a 3-element array");
    std::array<int64_t, 3> out{};
    for (int i = 0; i < 3; ++i) {
        out[static_cast<size_t>(i)] = static_cast<int64_t>(v.arr[static_cast<size_t>(i)]);
        if (static_cast<Scalar>(out[static_cast<size_t>(i)]) != v.arr[static_cast<size_t>(i)])
            fail(line, "expected integer entries");
    }
    return out;
}
std::array<Scalar, 3> want_num3(const Value& v, int line) {
    if (v.kind != Value::array || v.arr.size() != 3) fail(line, "expected a 3-element array");
    return {v.arr[0], v.arr[1], v.arr[2]};
}

void apply(PipelineConfig& cfg, const std::string& section, const std::string& key,
           const Value& v, int line) {
    auto unknown = [&]() { fail(line, "unknown key '" + section + "." + key + "'"); };
    if (section == "data") {
        if (key == "data_dir") cfg.data_dir = want_str(v, line);
        else if (key == "patch_edge") cfg.patch_edge = want_int(v, line);
        else if (key == "eval_edge") cfg.eval_edge = want_int(v, line);
        else if (key == "window_lo") cfg.window_lo = want_num(v, line);
        else if (key == "window_hi") cfg.window_hi = want_num(v, line);
        else if (key == "negative_patch_fraction")
            cfg.negative_patch_fraction = want_num(v, line);
        else unknown();
    } else if (section == "synth") {
        if (key == "n_volumes") cfg.synth.n_volumes = static_cast<int>(want_int(v, line));
        else if (key == "dims") cfg.synth.dims = want_int3(v, line);
        else if (key == "spacing") cfg.synth.spacing = want_num3(v, line);
        else if (key == "min_nodules") cfg.synth.min_nodules = static_cast<int>(want_int(v, line));
        else if (key == "max_nodules") cfg.synth.max_nodules = static_cast<int>(want_int(v, line));
        else if (key == "min_diameter_mm") cfg.synth.min_diameter_mm = want_num(v, line);
        else if (key == "max_diameter_mm") cfg.synth.max_diameter_mm = want_num(v, line);
        else if (key == "background_hu") cfg.synth.background_hu = want_num(v, line);
        else if (key == "contrast_hu") cfg.synth.contrast_hu = want_num(v, line);
        else if (key == "noise_sigma") cfg.synth.noise_sigma = want_num(v, line);
        else if (key == "id_prefix") cfg.synth.id_prefix = want_str(v, line);
        else unknown();
    } else if (section == "split") {
        if (key == "kind") cfg.split_kind = want_str(v, line);
        else if (key == "k") cfg.split_k = static_cast<int>(want_int(v, line));
        else unknown();
    } else if (section == "model") {
        if (key == "variant") cfg.variant = want_str(v, line);
        else if (key == "base_width") cfg.base_width = want_int(v, line);
        else if (key == "blocks_per_stream")
            cfg.blocks_per_stream = static_cast<int>(want_int(v, line));
        else if (key == "head_width") cfg.head_width = want_int(v, line);
        else if (key == "refine_hidden") cfg.refine_hidden = want_int(v, line);
        else if (key == "anchor_scales") {
            if (v.kind != Value::nested) fail(line, "anchor_scales must be a nested array");
            cfg.anchor_scales = v.rows;
        } else unknown();
    } else if (section == "loss") {
        if (key == "lambda") cfg.loss.lambda = want_num(v, line);
        else if (key == "pos_iou") cfg.loss.pos_iou = want_num(v, line);
        else if (key == "neg_iou") cfg.loss.neg_iou = want_num(v, line);
        else if (key == "cascade_ious") {
            if (v.kind != Value::array) fail(line, "cascade_ious must be an array");
            cfg.loss.cascade_ious = v.arr;
        } else unknown();
    } else if (section == "detect") {
        if (key == "top_k") cfg.detect.top_k = want_int(v, line);
        else if (key == "nms_iou") cfg.detect.nms_iou = want_num(v, line);
        else if (key == "proposal_nms_iou") cfg.detect.proposal_nms_iou = want_num(v, line);
        else if (key == "score_thresh") cfg.detect.score_thresh = want_num(v, line);
        else if (key == "roi_size") cfg.detect.roi_size = want_int(v, line);
        else if (key == "roi_context") cfg.detect.roi_context = want_num(v, line);
        else unknown();
    } else if (section == "train") {
        if (key == "lr") cfg.train.lr = want_num(v, line);
        else if (key == "momentum") cfg.train.momentum = want_num(v, line);
        else if (key == "lr_decay_epoch")
            cfg.train.lr_decay_epoch = static_cast<int>(want_int(v, line));
        else if (key == "lr_decay") cfg.train.lr_decay = want_num(v, line);
        else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(want_int(v, line));
        else if (key == "epochs") cfg.train.epochs = static_cast<int>(want_int(v, line));
        else if (key == "dropout") cfg.train.dropout = want_num(v, line);
        else if (key == "seed") cfg.train.seed = static_cast<uint64_t>(want_int(v, line));
        else if (key == "augment") cfg.train.augment = want_bool(v, line);
        else if (key == "neg_per_pos") cfg.train.neg_per_pos = static_cast<int>(want_int(v, line));
        else if (key == "min_neg") cfg.train.min_neg = static_cast<int>(want_int(v, line));
        else if (key == "refine_proposals")
            cfg.train.refine_proposals = static_cast<int>(want_int(v, line));
        else if (key == "val_volumes") cfg.train.val_volumes = static_cast<int>(want_int(v, line));
        else if (key == "grad_clip") cfg.train.grad_clip = want_num(v, line);
        else if (key == "patches_per_epoch")
            cfg.train.patches_per_epoch = static_cast<int>(want_int(v, line));
        else if (key == "bn_freeze_epoch")
            cfg.train.bn_freeze_epoch = static_cast<int>(want_int(v, line));
        else if (key == "ema_decay") cfg.train.ema_decay = want_num(v, line);
        else unknown();
    } else {
        fail(line, "unknown section '" + section + "'");
    }
}

}  // namespace

PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::stringstream ss(text);
    std::string line;
    std::string section;
    int n = 0;
    while (std::getline(ss, line)) {
        ++n;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(n, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail(n, "empty section name");
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) fail(n, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string raw = trim(line.substr(eq + 1));
        if (key.empty()) fail(n, "empty key");
        if (section.empty()) fail(n, "key outside any [section]");
        apply(cfg, section, key, parse_value(raw, n), n);
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace nforge
