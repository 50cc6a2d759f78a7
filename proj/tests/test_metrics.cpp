#include <cmath>

#include "doctest.h"
#include "uda/metrics.hpp"
#include "uda/tensor.hpp"

using namespace uda;

namespace {

// independent per-pixel recount oracle
struct OracleClass {
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

std::vector<OracleClass> recount(const std::vector<int>& pred, const std::vector<int>& truth,
                                 int C) {
    std::vector<OracleClass> out(static_cast<size_t>(C));
    for (size_t i = 0; i < pred.size(); ++i) {
        for (int c = 0; c < C; ++c) {
            bool p = pred[i] == c, t = truth[i] == c;
            auto& o = out[static_cast<size_t>(c)];
            if (p && t) ++o.tp;
            else if (p && !t) ++o.fp;
            else if (!p && t) ++o.fn;
            else ++o.tn;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("hand example: cm [[1,1],[0,2]]") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 1;
    cm.at(0, 1) = 1;
    cm.at(1, 0) = 0;
    cm.at(1, 1) = 2;
    auto r = aggregate(cm);
    const auto& c0 = r.per_class[0];
    CHECK(*c0.precision == doctest::Approx(1.0));
    CHECK(*c0.recall == doctest::Approx(0.5));
    CHECK(*c0.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(*c0.iou == doctest::Approx(0.5));
    CHECK(r.overall_accuracy == doctest::Approx(0.75));
}

TEST_CASE("metrics match the recount oracle on random predictions") {
    Rng rng(123);
    for (int trial = 0; trial < 30; ++trial) {
        int C = 2 + static_cast<int>(rng.uniform_int(5));
        size_t n = 32 * 32;
        std::vector<int> pred(n), truth(n);
        for (size_t i = 0; i < n; ++i) {
            pred[i] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(C)));
            truth[i] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(C)));
        }
        auto cm = confusion(pred, truth, C);
        auto r = aggregate(cm);
        auto oracle = recount(pred, truth, C);
        uint64_t correct = 0;
        for (size_t i = 0; i < n; ++i) correct += pred[i] == truth[i];
        CHECK(r.overall_accuracy == doctest::Approx(static_cast<double>(correct) / n));
        for (int c = 0; c < C; ++c) {
            const auto& m = r.per_class[static_cast<size_t>(c)];
            const auto& o = oracle[static_cast<size_t>(c)];
            CHECK(m.tp == o.tp);
            CHECK(m.fp == o.fp);
            CHECK(m.fn == o.fn);
            CHECK(m.tn == o.tn);
            if (o.tp + o.fp > 0)
                CHECK(*m.precision == doctest::Approx(static_cast<double>(o.tp) / (o.tp + o.fp)));
            if (o.tp + o.fn > 0)
                CHECK(*m.recall == doctest::Approx(static_cast<double>(o.tp) / (o.tp + o.fn)));
            if (o.tp + o.fp + o.fn > 0)
                CHECK(*m.iou == doctest::Approx(static_cast<double>(o.tp) / (o.tp + o.fp + o.fn)));
        }
    }
}

TEST_CASE("0/0 metrics are undefined, not 0 or 1") {
    // class 1 never appears in truth or prediction
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 5;
    auto r = aggregate(cm);
    const auto& c1 = r.per_class[1];
    CHECK_FALSE(c1.precision.has_value());
    CHECK_FALSE(c1.recall.has_value());
    CHECK_FALSE(c1.f1.has_value());
    CHECK_FALSE(c1.iou.has_value());
    CHECK(r.undefined_exclusions > 0);
    // macro averages skip the undefined entries instead of counting them as 0
    CHECK(*r.macro_precision == doctest::Approx(1.0));
    CHECK(*r.mean_iou == doctest::Approx(1.0));
}

TEST_CASE("f1 is 0 when precision and recall are both defined zeros") {
    ConfusionMatrix cm(2);
    cm.at(0, 1) = 3;  // class 0: fn=3; class 1: fp=3
    cm.at(1, 0) = 2;
    auto r = aggregate(cm);
    CHECK(*r.per_class[0].f1 == doctest::Approx(0.0));
    CHECK(*r.per_class[0].precision == doctest::Approx(0.0));
    CHECK(*r.per_class[0].recall == doctest::Approx(0.0));
}

TEST_CASE("confusion validates class indices with a pixel diagnostic") {
    CHECK_THROWS_AS(confusion({0, 5}, {0, 1}, 2), std::out_of_range);
    CHECK_THROWS_AS(confusion({0, 1}, {0, -1}, 2), std::out_of_range);
    CHECK_THROWS_AS(confusion({0}, {0, 1}, 2), std::invalid_argument);
    CHECK_THROWS_AS(aggregate(ConfusionMatrix(2)), std::invalid_argument);  // empty matrix
}

TEST_CASE("merge adds counts and equality is structural") {
    auto a = confusion({0, 1}, {0, 1}, 2);
    auto b = confusion({1, 1}, {0, 1}, 2);
    ConfusionMatrix m = a;
    m.merge(b);
    CHECK(m.at(0, 0) == 1);
    CHECK(m.at(0, 1) == 1);
    CHECK(m.at(1, 1) == 2);
    CHECK(m.total() == 4);
    CHECK(a == a);
    CHECK_FALSE(a == b);
}

TEST_CASE("text and json rendering carry the undefined marker") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 5;
    auto r = aggregate(cm);
    auto text = report_to_text(r, {"road", "building"});
    CHECK(text.find("n/a") != std::string::npos);
    CHECK(text.find("road") != std::string::npos);
    auto j = report_to_json(r, {"road", "building"});
    CHECK(j.find("\"building\"") != std::string::npos);
    CHECK(j.find("confusion") != std::string::npos);
}

TEST_CASE("comparison of identical reports has zero deltas") {
    auto cm = confusion({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
    auto r = aggregate(cm);
    auto table = comparison_to_text(r, r);
    CHECK(table.find("+0.0000") != std::string::npos);
    CHECK(table.find("-0.") == std::string::npos);
}
