#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "anchorpheno/metrics.hpp"

using anchorpheno::auroc;
using anchorpheno::average_precision;

namespace {

// Oracle: count concordant/tied (positive, negative) pairs directly.
double auroc_pairs(const std::vector<double>& s, const std::vector<uint8_t>& y) {
    double wins = 0.0, ties = 0.0;
    size_t np = 0, nn = 0;
    for (size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        ++np;
        for (size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            if (s[i] > s[j]) wins += 1.0;
            else if (s[i] == s[j]) ties += 1.0;
        }
    }
    for (auto v : y) nn += (v == 0);
    return (wins + 0.5 * ties) / (static_cast<double>(np) * static_cast<double>(nn));
}

// Oracle: walk the ranking in descending order, tied scores as one block,
// accumulate precision at each recall increment.
double ap_blocks(const std::vector<double>& s, const std::vector<uint8_t>& y) {
    std::vector<size_t> idx(s.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return s[a] > s[b]; });
    double total_pos = 0.0;
    for (auto v : y) total_pos += v;
    double ap = 0.0, tp = 0.0, seen = 0.0, prev_recall = 0.0;
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j < idx.size() && s[idx[j]] == s[idx[i]]) ++j;
        for (size_t k = i; k < j; ++k) {
            tp += y[idx[k]];
            seen += 1.0;
        }
        const double recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / seen);
        prev_recall = recall;
        i = j;
    }
    return ap;
}

}  // namespace

TEST_CASE("auroc on perfectly separated scores") {
    std::vector<double> s = {0.9, 0.8, 0.7, 0.2, 0.1};
    std::vector<uint8_t> y = {1, 1, 1, 0, 0};
    CHECK(auroc(s, y) == 1.0);
}

TEST_CASE("auroc with all scores equal is one half") {
    std::vector<double> s(40, 0.5);
    std::vector<uint8_t> y(40, 0);
    for (size_t i = 0; i < 13; ++i) y[i] = 1;
    CHECK(auroc(s, y) == 0.5);
}

TEST_CASE("auroc matches the pair-counting oracle under heavy ties") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<int> level(0, 29);  // few levels force ties
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> s(200);
        std::vector<uint8_t> y(200);
        for (size_t i = 0; i < s.size(); ++i) {
            s[i] = level(rng) / 29.0;
            y[i] = u(rng) < 0.4 ? 1 : 0;
        }
        y[0] = 1;
        y[1] = 0;
        CHECK(std::abs(auroc(s, y) - auroc_pairs(s, y)) < 1e-12);
    }
}

TEST_CASE("negated scores flip auroc around one half") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> level(0, 9);
    std::vector<double> s(150);
    std::vector<uint8_t> y(150);
    for (size_t i = 0; i < s.size(); ++i) {
        s[i] = level(rng) * 0.1;
        y[i] = (i % 3 == 0) ? 1 : 0;
    }
    std::vector<double> neg(s.size());
    for (size_t i = 0; i < s.size(); ++i) neg[i] = -s[i];
    CHECK(std::abs(auroc(neg, y) - (1.0 - auroc(s, y))) < 1e-12);
}

TEST_CASE("rank metrics are invariant under strictly increasing transforms") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> level(0, 49);
    std::vector<double> s(300);
    std::vector<uint8_t> y(300);
    for (size_t i = 0; i < s.size(); ++i) {
        s[i] = level(rng) / 49.0;
        y[i] = (i % 4 == 0) ? 1 : 0;
    }
    std::vector<double> t(s.size());
    for (size_t i = 0; i < s.size(); ++i) t[i] = 2.0 * s[i] + 3.0;  // preserves ties exactly
    CHECK(std::abs(auroc(t, y) - auroc(s, y)) < 1e-12);
    CHECK(std::abs(average_precision(t, y) - average_precision(s, y)) < 1e-12);
}

TEST_CASE("average precision hits the extremes") {
    std::vector<double> s = {0.9, 0.8, 0.7, 0.3, 0.2};
    std::vector<uint8_t> top = {1, 1, 0, 0, 0};
    CHECK(average_precision(s, top) == 1.0);

    std::vector<uint8_t> bottom = {0, 0, 0, 0, 1};
    CHECK(average_precision(s, bottom) == doctest::Approx(1.0 / 5.0).epsilon(1e-12));
}

TEST_CASE("average precision matches the block-scan oracle under ties") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> level(0, 19);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> s(200);
        std::vector<uint8_t> y(200);
        for (size_t i = 0; i < s.size(); ++i) {
            s[i] = level(rng) / 19.0;
            y[i] = u(rng) < 0.3 ? 1 : 0;
        }
        y[0] = 1;
        CHECK(std::abs(average_precision(s, y) - ap_blocks(s, y)) < 1e-12);
    }
}

TEST_CASE("average precision of label-independent scores tracks prevalence") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const size_t n = 10000;
    std::vector<double> s(n);
    std::vector<uint8_t> y(n);
    size_t pos = 0;
    for (size_t i = 0; i < n; ++i) {
        s[i] = u(rng);
        y[i] = u(rng) < 0.3 ? 1 : 0;
        pos += y[i];
    }
    const double prevalence = static_cast<double>(pos) / static_cast<double>(n);
    CHECK(std::abs(average_precision(s, y) - prevalence) < 0.05);
}

TEST_CASE("metrics reject degenerate inputs") {
    std::vector<double> s = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(auroc(s, {1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(auroc(s, {0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(auroc({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(auroc(s, {1, 0}), std::invalid_argument);
    CHECK_THROWS_AS(average_precision(s, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("metrics report round-trips through its text form") {
    std::map<std::string, double> m = {
        {"anchorbert.auroc_mean", 0.91234567890123},
        {"anchor-lr.auprc_sd", 1e-9},
        {"threshold-1.auroc_mean", 1.0},
    };
    const std::string text = anchorpheno::write_metrics_report(m);
    const auto back = anchorpheno::parse_metrics_report(text);
    REQUIRE(back.size() == m.size());
    for (const auto& [k, v] : m) {
        REQUIRE(back.count(k) == 1);
        CHECK(back.at(k) == v);
    }
    CHECK_THROWS(anchorpheno::parse_metrics_report("metric\tvalue\nbroken-line-no-tab\n"));
}
