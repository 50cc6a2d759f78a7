#include "uda/metrics.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace uda {

uint64_t ConfusionMatrix::total() const {
    uint64_t t = 0;
    for (uint64_t c : counts) t += c;
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (num_classes != other.num_classes)
        throw std::invalid_argument("ConfusionMatrix::merge: class count mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate_confusion(ConfusionMatrix& cm, const std::vector<int>& pred,
                          const std::vector<int>& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("confusion: pred and truth length mismatch");
    int c = cm.num_classes;
    for (size_t i = 0; i < pred.size(); ++i) {
        int p = pred[i], t = truth[i];
        if (p < 0 || p >= c || t < 0 || t >= c)
            throw std::out_of_range("confusion: class index out of range at pixel " +
                                    std::to_string(i) + " (pred=" + std::to_string(p) +
                                    ", truth=" + std::to_string(t) + ", C=" + std::to_string(c) + ")");
        ++cm.at(t, p);
    }
}

ConfusionMatrix confusion(const std::vector<int>& pred, const std::vector<int>& truth,
                          int num_classes) {
    ConfusionMatrix cm(num_classes);
    accumulate_confusion(cm, pred, truth);
    return cm;
}

static std::optional<double> ratio(uint64_t num, uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics class_metrics(const ConfusionMatrix& cm, int c) {
    if (c < 0 || c >= cm.num_classes) throw std::out_of_range("class_metrics: invalid class index");
    ClassMetrics m;
    uint64_t total = cm.total();
    m.tp = cm.at(c, c);
    uint64_t row = 0, col = 0;
    for (int j = 0; j < cm.num_classes; ++j) {
        row += cm.at(c, j);
        col += cm.at(j, c);
    }
    m.fn = row - m.tp;
    m.fp = col - m.tp;
    m.tn = total - m.tp - m.fp - m.fn;
    m.accuracy = ratio(m.tp + m.tn, total);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
        m.f1 = 2.0 * (*m.precision) * (*m.recall) / (*m.precision + *m.recall);
    else if (m.precision && m.recall)
        m.f1 = 0.0;  // P = R = 0 with pixels present on both sides
    m.iou = ratio(m.tp, m.tp + m.fp + m.fn);
    return m;
}

MetricsReport aggregate(const ConfusionMatrix& cm) {
    if (cm.num_classes == 0 || cm.total() == 0)
        throw std::invalid_argument("aggregate: empty confusion matrix");
    MetricsReport r;
    r.cm = cm;
    uint64_t trace = 0;
    for (int c = 0; c < cm.num_classes; ++c) trace += cm.at(c, c);
    r.overall_accuracy = static_cast<double>(trace) / static_cast<double>(cm.total());

    auto macro = [&r](auto select) -> std::optional<double> {
        double acc = 0.0;
        int n = 0;
        for (const auto& m : r.per_class) {
            auto v = select(m);
            if (v) {
                acc += *v;
                ++n;
            } else {
                ++r.undefined_exclusions;
            }
        }
        if (n == 0) return std::nullopt;
        return acc / n;
    };

    for (int c = 0; c < cm.num_classes; ++c) r.per_class.push_back(class_metrics(cm, c));
    r.macro_accuracy = macro([](const ClassMetrics& m) { return m.accuracy; });
    r.macro_precision = macro([](const ClassMetrics& m) { return m.precision; });
    r.macro_recall = macro([](const ClassMetrics& m) { return m.recall; });
    r.macro_f1 = macro([](const ClassMetrics& m) { return m.f1; });
    r.mean_iou = macro([](const ClassMetrics& m) { return m.iou; });
    return r;
}

static std::string fmt(const std::optional<double>& v) {
    if (!v) return "   n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << *v;
    return os.str();
}

static std::string cls_name(const std::vector<std::string>& names, int c) {
    if (c < static_cast<int>(names.size())) return names[static_cast<size_t>(c)];
    return "class_" + std::to_string(c);
}

std::string report_to_text(const MetricsReport& r, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "class" << std::right << std::setw(10) << "accuracy"
       << std::setw(11) << "precision" << std::setw(8) << "recall" << std::setw(8) << "f1"
       << std::setw(8) << "iou" << "\n";
    for (int c = 0; c < r.cm.num_classes; ++c) {
        const auto& m = r.per_class[static_cast<size_t>(c)];
        os << std::left << std::setw(22) << cls_name(class_names, c) << std::right << std::setw(10)
           << fmt(m.accuracy) << std::setw(11) << fmt(m.precision) << std::setw(8) << fmt(m.recall)
           << std::setw(8) << fmt(m.f1) << std::setw(8) << fmt(m.iou) << "\n";
    }
    os << std::left << std::setw(22) << "macro" << std::right << std::setw(10)
       << fmt(r.macro_accuracy) << std::setw(11) << fmt(r.macro_precision) << std::setw(8)
       << fmt(r.macro_recall) << std::setw(8) << fmt(r.macro_f1) << std::setw(8) << fmt(r.mean_iou)
       << "\n";
    os << "overall pixel accuracy: " << fmt(r.overall_accuracy) << "\n";
    if (r.undefined_exclusions)
        os << "undefined (0/0) entries excluded from macro averages: " << r.undefined_exclusions << "\n";
    return os.str();
}

static nlohmann::json opt_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

std::string report_to_json(const MetricsReport& r, const std::vector<std::string>& class_names) {
    nlohmann::json j;
    j["num_classes"] = r.cm.num_classes;
    j["total_pixels"] = r.cm.total();
    j["overall_accuracy"] = r.overall_accuracy;
    j["macro_accuracy"] = opt_json(r.macro_accuracy);
    j["macro_precision"] = opt_json(r.macro_precision);
    j["macro_recall"] = opt_json(r.macro_recall);
    j["macro_f1"] = opt_json(r.macro_f1);
    j["mean_iou"] = opt_json(r.mean_iou);
    j["undefined_exclusions"] = r.undefined_exclusions;
    j["confusion"] = nlohmann::json::array();
    for (int t = 0; t < r.cm.num_classes; ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int p = 0; p < r.cm.num_classes; ++p) row.push_back(r.cm.at(t, p));
        j["confusion"].push_back(row);
    }
    j["per_class"] = nlohmann::json::array();
    for (int c = 0; c < r.cm.num_classes; ++c) {
        const auto& m = r.per_class[static_cast<size_t>(c)];
        j["per_class"].push_back({{"class", cls_name(class_names, c)},
                                  {"tp", m.tp},
                                  {"fp", m.fp},
                                  {"fn", m.fn},
                                  {"tn", m.tn},
                                  {"accuracy", opt_json(m.accuracy)},
                                  {"precision", opt_json(m.precision)},
                                  {"recall", opt_json(m.recall)},
                                  {"f1", opt_json(m.f1)},
                                  {"iou", opt_json(m.iou)}});
    }
    return j.dump(2);
}

static std::string fmt_delta(const std::optional<double>& a, const std::optional<double>& b) {
    if (!a || !b) return "   n/a";
    std::ostringstream os;
    os << std::showpos << std::fixed << std::setprecision(4) << (*b - *a);
    return os.str();
}

std::string comparison_to_text(const MetricsReport& before, const MetricsReport& after,
                               const std::vector<std::string>& class_names) {
    std::ostringstream os;
    auto line = [&os](const std::string& name, const std::optional<double>& b,
                      const std::optional<double>& a) {
        os << std::left << std::setw(30) << name << std::right << std::setw(10) << fmt(b)
           << std::setw(10) << fmt(a) << std::setw(10) << fmt_delta(b, a) << "\n";
    };
    os << std::left << std::setw(30) << "metric" << std::right << std::setw(10) << "before"
       << std::setw(10) << "after" << std::setw(10) << "delta" << "\n";
    line("overall accuracy", before.overall_accuracy, after.overall_accuracy);
    line("macro accuracy", before.macro_accuracy, after.macro_accuracy);
    line("macro precision", before.macro_precision, after.macro_precision);
    line("macro recall", before.macro_recall, after.macro_recall);
    line("macro f1", before.macro_f1, after.macro_f1);
    line("mean IoU", before.mean_iou, after.mean_iou);
    int c_max = std::min(before.cm.num_classes, after.cm.num_classes);
    for (int c = 0; c < c_max; ++c) {
        const auto& mb = before.per_class[static_cast<size_t>(c)];
        const auto& ma = after.per_class[static_cast<size_t>(c)];
        line(cls_name(class_names, c) + " f1", mb.f1, ma.f1);
        line(cls_name(class_names, c) + " iou", mb.iou, ma.iou);
    }
    return os.str();
}

}  // namespace uda
