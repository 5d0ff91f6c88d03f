#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "facetouch/metrics.hpp"
#include "facetouch/rng.hpp"
#include "support.hpp"

using namespace facetouch;

TEST_CASE("confusion hand examples") {
    Confusion c = confusion({1, 0, 1}, {1, 0, 1});
    CHECK(c.tp == 2);
    CHECK(c.tn == 1);
    CHECK(c.fp == 0);
    CHECK(c.fn == 0);

    c = confusion({1, 0, 1, 0}, {0, 1, 0, 1});
    CHECK(c.tp == 0);
    CHECK(c.tn == 0);
    CHECK(c.fp == 2);
    CHECK(c.fn == 2);
}

TEST_CASE("confusion agrees with independent counting on 1000 random samples") {
    RngState rng(21);
    std::vector<int> yt(1000), yp(1000);
    for (int i = 0; i < 1000; ++i) {
        yt[i] = rng.bernoulli(0.3) ? 1 : 0;
        yp[i] = rng.bernoulli(0.45) ? 1 : 0;
    }
    Confusion c = confusion(yt, yp);
    auto count = [&](int t, int p) {
        int64_t n = 0;
        for (int i = 0; i < 1000; ++i) n += (yt[i] == t && yp[i] == p) ? 1 : 0;
        return n;
    };
    CHECK(c.tp == count(1, 1));
    CHECK(c.tn == count(0, 0));
    CHECK(c.fp == count(0, 1));
    CHECK(c.fn == count(1, 0));
    CHECK(c.total() == 1000);
}

TEST_CASE("confusion rejects bad input") {
    CHECK_THROWS_AS(confusion({}, {}), ContractViolation);
    CHECK_THROWS_AS(confusion({1, 0}, {1}), ContractViolation);
    CHECK_THROWS_AS(confusion({2, 0}, {1, 0}), ContractViolation);
}

TEST_CASE("perfect separation gives AUC 1 and perfect threshold metrics") {
    std::vector<int> y = {0, 0, 0, 1, 1};
    std::vector<double> s = {0.1, 0.2, 0.3, 0.8, 0.9};
    MetricReport r = scores_to_report(y, s, 0.5);
    CHECK(r.auc == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.accuracy == 1.0);
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.ap == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("identical scores collapse the ROC to the two-point diagonal") {
    std::vector<int> y = {0, 1, 0, 1};
    std::vector<double> s = {0.4, 0.4, 0.4, 0.4};
    MetricReport r = scores_to_report(y, s);
    REQUIRE(r.roc.size() == 2);
    CHECK(r.roc.front().fpr == 0.0);
    CHECK(r.roc.front().tpr == 0.0);
    CHECK(r.roc.back().fpr == 1.0);
    CHECK(r.roc.back().tpr == 1.0);
    CHECK(r.auc == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("AUC equals the pairwise concordance oracle including ties") {
    RngState rng(22);
    for (int rep = 0; rep < 3; ++rep) {
        const int n = 200;
        std::vector<int> y(n);
        std::vector<double> s(n);
        for (int i = 0; i < n; ++i) {
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
            // quantized scores force plenty of exact ties
            s[i] = std::floor(rng.uniform(0.0, 1.0) * 20.0) / 20.0 + (y[i] ? 0.05 : 0.0);
        }
        MetricReport r = scores_to_report(y, s);
        CHECK(std::abs(r.auc - ftest::auc_concordance(y, s)) <= 1e-9);
    }
}

TEST_CASE("AUC is invariant under strictly increasing transforms") {
    RngState rng(23);
    const int n = 120;
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
        y[i] = rng.bernoulli(0.5) ? 1 : 0;
        s[i] = rng.uniform(-2.0, 2.0);
    }
    const double base = scores_to_report(y, s).auc;
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = std::exp(s[i]);
    CHECK(scores_to_report(y, t).auc == doctest::Approx(base).epsilon(1e-12));
    for (int i = 0; i < n; ++i) t[i] = 3.0 * s[i] + 11.0;
    CHECK(scores_to_report(y, t).auc == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("ROC endpoints, monotonicity and the integer accuracy identity") {
    RngState rng(24);
    const int n = 400;
    std::vector<int> y(n);
    std::vector<double> s(n);
    for (int i = 0; i < n; ++i) {
        y[i] = rng.bernoulli(0.25) ? 1 : 0;
        s[i] = rng.uniform(0.0, 1.0) * 0.6 + 0.4 * y[i];
    }
    MetricReport r = scores_to_report(y, s, 0.6);
    CHECK(r.roc.front().fpr == 0.0);
    CHECK(r.roc.front().tpr == 0.0);
    CHECK(r.roc.back().fpr == 1.0);
    CHECK(r.roc.back().tpr == 1.0);
    for (std::size_t i = 1; i < r.roc.size(); ++i) {
        CHECK(r.roc[i].fpr >= r.roc[i - 1].fpr);
        CHECK(r.roc[i].tpr >= r.roc[i - 1].tpr);
        CHECK(r.roc[i].threshold < r.roc[i - 1].threshold);
    }
    CHECK(std::llround(r.accuracy * r.counts.total()) == r.counts.tp + r.counts.tn);
    const double p = r.precision, q = r.recall;
    const double f1 = (p + q) > 0 ? 2 * p * q / (p + q) : 0.0;
    CHECK(std::abs(r.f1 - f1) < 1e-12);
}

TEST_CASE("zero-denominator conventions") {
    // everything predicted negative
    MetricReport r = scores_to_report({1, 1, 0}, {0.1, 0.2, 0.15}, 0.9);
    CHECK(r.counts.tp == 0);
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);

    // single-class input degenerates to the diagonal
    MetricReport neg = scores_to_report({0, 0}, {0.3, 0.7});
    CHECK(neg.auc == 0.5);
    CHECK(neg.roc.size() == 2);
    CHECK(neg.ap == 0.0);
}

TEST_CASE("AP matches the step-wise hand evaluation") {
    MetricReport r = scores_to_report({1, 0, 1}, {3.0, 2.0, 1.0});
    CHECK(r.ap == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("report rejects malformed input") {
    CHECK_THROWS_AS(scores_to_report({}, {}), ContractViolation);
    CHECK_THROWS_AS(scores_to_report({1, 0}, {0.5}), ContractViolation);
    CHECK_THROWS_AS(scores_to_report({1, 0}, {0.5, std::nan("")}), ContractViolation);
    CHECK_THROWS_AS(scores_to_report({1, 3}, {0.5, 0.5}), ContractViolation);
}

TEST_CASE("report serializes to JSON and the ROC to CSV") {
    MetricReport r = scores_to_report({1, 0, 1, 0}, {0.9, 0.2, 0.8, 0.6});
    auto j = nlohmann::json::parse(report_to_json(r));
    CHECK(j["counts"]["tp"].get<int>() == r.counts.tp);
    CHECK(j["accuracy"].get<double>() == doctest::Approx(r.accuracy));
    CHECK(j["auc"].get<double>() == doctest::Approx(r.auc));
    CHECK(j["schema_version"].get<int>() == 1);

    const std::string csv = roc_to_csv(r.roc);
    CHECK(csv.rfind("threshold,fpr,tpr\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(r.roc.size()) + 1);
    CHECK(csv.find("inf,") != std::string::npos);
}
