#include "csvio.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace nforge {

namespace {

// shortest representation that round-trips a double exactly
std::string num(Scalar v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("csv: number formatting failed");
    return std::string(buf, end);
}

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    return f;
}

std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                const std::string& want_header,
                                                size_t n_cols) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line) || line != want_header)
        throw std::runtime_error(path + ": expected header '" + want_header + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != n_cols)
            throw std::runtime_error(path + ": expected " + std::to_string(n_cols) +
                                     " columns, got " + std::to_string(cells.size()));
        rows.push_back(std::move(cells));
    }
    return rows;
}

Scalar to_num(const std::string& s) {
    try {
        size_t used = 0;
        Scalar v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("csv: bad number '" + s + "'");
    }
}

}  // namespace

void write_detections_csv(const std::string& path, const std::vector<WorldDetection>& dets) {
    auto f = open_out(path);
    f << "volume_id,cx_mm,cy_mm,cz_mm,d_mm,score,stage\n";
    for (const auto& d : dets)
        f << d.volume_id << ',' << num(d.det.box.cx) << ',' << num(d.det.box.cy) << ','
          << num(d.det.box.cz) << ',' << num(d.det.box.d) << ',' << num(d.det.score) << ','
          << d.det.stage << '\n';
}

std::vector<WorldDetection> read_detections_csv(const std::string& path) {
    auto rows = read_rows(path, "volume_id,cx_mm,cy_mm,cz_mm,d_mm,score,stage", 7);
    std::vector<WorldDetection> out;
    for (const auto& r : rows) {
        WorldDetection d;
        d.volume_id = r[0];
        d.det.box = {to_num(r[1]), to_num(r[2]), to_num(r[3]), to_num(r[4])};
        d.det.score = to_num(r[5]);
        d.det.stage = static_cast<int>(to_num(r[6]));
        out.push_back(std::move(d));
    }
    return out;
}

void write_annotations_csv(const std::string& path, const std::vector<Annotation>& anns) {
    auto f = open_out(path);
    f << "volume_id,x_mm,y_mm,z_mm,diameter_mm\n";
    for (const auto& a : anns)
        f << a.volume_id << ',' << num(a.x_mm) << ',' << num(a.y_mm) << ',' << num(a.z_mm)
          << ',' << num(a.diameter_mm) << '\n';
}

std::vector<Annotation> read_annotations_csv(const std::string& path) {
    auto rows = read_rows(path, "volume_id,x_mm,y_mm,z_mm,diameter_mm", 5);
    std::vector<Annotation> out;
    for (const auto& r : rows) {
        Annotation a;
        a.volume_id = r[0];
        a.x_mm = to_num(r[1]);
        a.y_mm = to_num(r[2]);
        a.z_mm = to_num(r[3]);
        a.diameter_mm = to_num(r[4]);
        out.push_back(std::move(a));
    }
    return out;
}

void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& logs) {
    auto f = open_out(path);
    f << "epoch,train_loss,val_loss,ap,ap50,ap75,seconds\n";
    for (const auto& l : logs)
        f << l.epoch << ',' << num(l.train_loss) << ',' << num(l.val_loss) << ','
          << num(l.ap) << ',' << num(l.ap50) << ',' << num(l.ap75) << ',' << num(l.seconds)
          << '\n';
}

std::vector<EpochLog> read_epoch_log_csv(const std::string& path) {
    auto rows = read_rows(path, "epoch,train_loss,val_loss,ap,ap50,ap75,seconds", 7);
    std::vector<EpochLog> out;
    for (const auto& r : rows) {
        EpochLog l;
        l.epoch = static_cast<int>(to_num(r[0]));
        l.train_loss = to_num(r[1]);
        l.val_loss = to_num(r[2]);
        l.ap = to_num(r[3]);
        l.ap50 = to_num(r[4]);
        l.ap75 = to_num(r[5]);
        l.seconds = to_num(r[6]);
        out.push_back(l);
    }
    return out;
}

void write_pr_curve_csv(const std::string& path, const PRCurve& curve) {
    auto f = open_out(path);
    f << "threshold,precision,recall\n";
    for (const auto& p : curve.points)
        f << num(p.score_threshold) << ',' << num(p.precision) << ',' << num(p.recall)
          << '\n';
}

std::string ap_report_json(const APReport& rep) {
    nlohmann::json j;
    j["ap"] = rep.ap;
    j["ap50"] = rep.ap50;
    j["ap75"] = rep.ap75;
    j["per_threshold"] = rep.per_threshold;
    return j.dump(2);
}

}  // namespace nforge
