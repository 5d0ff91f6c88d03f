#include "facetouch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace facetouch {

namespace {

void check_binary(const std::vector<int>& v, const char* what) {
    for (int x : v)
        if (x != 0 && x != 1)
            throw ContractViolation(std::string(what) + " must be binary, got " + std::to_string(x));
}

}  // namespace

Confusion confusion(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.empty()) throw ContractViolation("confusion over empty input");
    if (y_true.size() != y_pred.size())
        throw ContractViolation("confusion length mismatch: " + std::to_string(y_true.size()) +
                                " vs " + std::to_string(y_pred.size()));
    check_binary(y_true, "labels");
    check_binary(y_pred, "predictions");
    Confusion c;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        if (y_true[i] == 1)
            (y_pred[i] == 1 ? c.tp : c.fn)++;
        else
            (y_pred[i] == 1 ? c.fp : c.tn)++;
    }
    return c;
}

MetricReport scores_to_report(const std::vector<int>& y_true, const std::vector<double>& scores,
                              double threshold) {
    if (y_true.empty()) throw ContractViolation("scores_to_report over empty input");
    if (y_true.size() != scores.size())
        throw ContractViolation("scores_to_report length mismatch");
    check_binary(y_true, "labels");
    for (double s : scores)
        if (!std::isfinite(s)) throw ContractViolation("scores must be finite");

    MetricReport r;
    r.threshold = threshold;
    std::vector<int> pred(y_true.size());
    for (std::size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= threshold ? 1 : 0;
    r.counts = confusion(y_true, pred);

    const auto& c = r.counts;
    r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    r.precision = (c.tp + c.fp) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    r.recall = (c.tp + c.fn) > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;

    const int64_t npos = c.tp + c.fn, nneg = c.tn + c.fp;
    const double inf = std::numeric_limits<double>::infinity();
    r.roc.push_back(RocPoint{inf, 0.0, 0.0});
    if (npos == 0 || nneg == 0) {
        // one-class input: the curve is undefined, report the diagonal
        const double lo = *std::min_element(scores.begin(), scores.end());
        r.roc.push_back(RocPoint{lo, 1.0, 1.0});
        r.auc = 0.5;
        r.ap = npos > 0 ? 1.0 : 0.0;
        return r;
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });

    int64_t tp = 0, fp = 0;
    double auc = 0.0, ap = 0.0;
    double prev_fpr = 0.0, prev_tpr = 0.0, prev_rec = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        // include every sample tied at this threshold (score >= s)
        while (i < order.size() && scores[order[i]] == s) {
            (y_true[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        const double fpr = static_cast<double>(fp) / nneg;
        const double tpr = static_cast<double>(tp) / npos;
        r.roc.push_back(RocPoint{s, fpr, tpr});
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) * 0.5;

        const double rec = tpr;
        const double prec = static_cast<double>(tp) / (tp + fp);
        ap += (rec - prev_rec) * prec;
        prev_fpr = fpr;
        prev_tpr = tpr;
        prev_rec = rec;
    }
    r.auc = auc;
    r.ap = ap;
    return r;
}

std::string report_to_json(const MetricReport& r) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["counts"] = {{"tp", r.counts.tp}, {"tn", r.counts.tn}, {"fp", r.counts.fp},
                   {"fn", r.counts.fn}};
    j["accuracy"] = r.accuracy;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["auc"] = r.auc;
    j["ap"] = r.ap;
    j["threshold"] = r.threshold;
    j["conventions"] = "precision/recall/f1 report 0 on zero denominators; ap is positive-class, step-wise";
    return j.dump(2) + "\n";
}

std::string roc_to_csv(const std::vector<RocPoint>& roc) {
    std::string out = "threshold,fpr,tpr\n";
    char buf[128];
    for (const auto& p : roc) {
        if (std::isinf(p.threshold))
            std::snprintf(buf, sizeof buf, "inf,%.17g,%.17g\n", p.fpr, p.tpr);
        else
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
        out += buf;
    }
    return out;
}

}  // namespace facetouch
