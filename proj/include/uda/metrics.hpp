#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uda {

// rows = ground truth, cols = prediction
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<uint64_t> counts;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c) : num_classes(c), counts(static_cast<size_t>(c) * c, 0) {}

    uint64_t& at(int truth, int pred) { return counts[static_cast<size_t>(truth) * num_classes + pred]; }
    uint64_t at(int truth, int pred) const { return counts[static_cast<size_t>(truth) * num_classes + pred]; }
    uint64_t total() const;
    void merge(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;
};

// Accumulate per-pixel counts; throws on out-of-range indices.
ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& truth, int num_classes);
void accumulate_confusion(ConfusionMatrix& cm, const std::vector<int>& pred, const std::vector<int>& truth);

// 0/0 ratios are reported as empty optionals, never as 0 or 1.
struct ClassMetrics {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::optional<double> accuracy, precision, recall, f1, iou;
};

ClassMetrics class_metrics(const ConfusionMatrix& cm, int c);

struct MetricsReport {
    ConfusionMatrix cm;
    std::vector<ClassMetrics> per_class;
    double overall_accuracy = 0.0;  // trace / total
    std::optional<double> macro_accuracy, macro_precision, macro_recall, macro_f1, mean_iou;
    int undefined_exclusions = 0;  // (class, metric) pairs left out of the macro averages
};

MetricsReport aggregate(const ConfusionMatrix& cm);

std::string report_to_text(const MetricsReport& r, const std::vector<std::string>& class_names = {});
std::string report_to_json(const MetricsReport& r, const std::vector<std::string>& class_names = {});

// Table-3-shaped side-by-side comparison of two reports.
std::string comparison_to_text(const MetricsReport& before, const MetricsReport& after,
                               const std::vector<std::string>& class_names = {});

}  // namespace uda
