#pragma once

#include <string>
#include <vector>

#include "mlc/common.hpp"

namespace mlc {

// K x K integer counts; rows = true class, cols = predicted class.
struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts;

    explicit ConfusionMatrix(int classes = 0)
        : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    long long& at(int true_c, int pred_c) {
        return counts[static_cast<std::size_t>(true_c) * k + pred_c];
    }
    long long at(int true_c, int pred_c) const {
        return counts[static_cast<std::size_t>(true_c) * k + pred_c];
    }
    long long total() const {
        long long t = 0;
        for (long long c : counts) t += c;
        return t;
    }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds,
                                        const std::vector<int>& labels, int k) {
    if (preds.size() != labels.size())
        throw std::invalid_argument(detail::format_msg(
            "confusion_matrix length mismatch: ", preds.size(), " preds vs ", labels.size(),
            " labels"));
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k || preds[i] < 0 || preds[i] >= k)
            throw std::invalid_argument("confusion_matrix class index out of range");
        ++cm.at(labels[i], preds[i]);
    }
    return cm;
}

struct MetricsReport {
    double acc = 0;
    double avg_acc = 0; // mean per-class recall
    double macro_f1 = 0;
    std::vector<double> precision, recall, f1;
};

// One-vs-rest per class, macro averaged; 0/0 ratios are defined as 0.
inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
    MetricsReport r;
    const long long total = cm.total();
    long long trace = 0;
    for (int c = 0; c < cm.k; ++c) trace += cm.at(c, c);
    r.acc = total > 0 ? static_cast<double>(trace) / static_cast<double>(total) : 0.0;
    for (int c = 0; c < cm.k; ++c) {
        long long tp = cm.at(c, c), row = 0, col = 0;
        for (int j = 0; j < cm.k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const long long fp = col - tp;
        const long long fn = row - tp;
        const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 = (prec + rec) > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
        r.precision.push_back(prec);
        r.recall.push_back(rec);
        r.f1.push_back(f1);
    }
    double sr = 0, sf = 0;
    for (int c = 0; c < cm.k; ++c) {
        sr += r.recall[static_cast<std::size_t>(c)];
        sf += r.f1[static_cast<std::size_t>(c)];
    }
    r.avg_acc = cm.k > 0 ? sr / cm.k : 0.0;
    r.macro_f1 = cm.k > 0 ? sf / cm.k : 0.0;
    return r;
}

} // namespace mlc
