#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facetouch/errors.hpp"

namespace facetouch {

struct Confusion {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    int64_t total() const { return tp + tn + fp + fn; }
};

Confusion confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred);

struct RocPoint {
    double threshold = 0.0;  // +inf sentinel stored as infinity at the (0,0) start
    double fpr = 0.0;
    double tpr = 0.0;
};

struct MetricReport {
    Confusion counts;
    double accuracy = 0.0, precision = 0.0, recall = 0.0, f1 = 0.0;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    double ap = 0.0;
    double threshold = 0.5;
};

// Point metrics at `threshold` (score >= threshold counts as positive) plus
// ROC/AUC/AP swept over all distinct scores. Zero-denominator conventions:
// precision and recall fall back to 0, as does F1 when P + R = 0. If either
// class is absent the ROC degenerates to the two-point diagonal and AUC is
// reported as 0.5.
MetricReport scores_to_report(const std::vector<int>& y_true, const std::vector<double>& scores,
                              double threshold = 0.5);

std::string report_to_json(const MetricReport& r);
std::string roc_to_csv(const std::vector<RocPoint>& roc);

}  // namespace facetouch
