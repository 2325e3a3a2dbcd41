#pragma once

#include <string>
#include <vector>

#include "boxes.hpp"
#include "metrics.hpp"
#include "volume.hpp"

namespace nforge {

struct WorldDetection {
    std::string volume_id;
    Detection det;  // mm frame
};

struct EpochLog {
    int epoch = 0;  // 1-based, contiguous
    Scalar train_loss = 0;
    Scalar val_loss = 0;
    Scalar ap = 0, ap50 = 0, ap75 = 0;
    Scalar seconds = 0;
};

// Detections: volume_id,cx_mm,cy_mm,cz_mm,d_mm,score,stage (header row).
void write_detections_csv(const std::string& path, const std::vector<WorldDetection>& dets);
std::vector<WorldDetection> read_detections_csv(const std::string& path);

// Annotations: volume_id,x_mm,y_mm,z_mm,diameter_mm (header row).
void write_annotations_csv(const std::string& path, const std::vector<Annotation>& anns);
std::vector<Annotation> read_annotations_csv(const std::string& path);

// Epoch log: epoch,train_loss,val_loss,ap,ap50,ap75,seconds (header row).
void write_epoch_log_csv(const std::string& path, const std::vector<EpochLog>& logs);
std::vector<EpochLog> read_epoch_log_csv(const std::string& path);

// PR curve: threshold,precision,recall (header row).
void write_pr_curve_csv(const std::string& path, const PRCurve& curve);

// {"ap":..,"ap50":..,"ap75":..,"per_threshold":[...]}
std::string ap_report_json(const APReport& rep);

}  // namespace nforge
