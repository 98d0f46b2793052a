#include "anchorpheno/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

namespace {

void check_sizes(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("metrics: scores/labels size mismatch");
    if (scores.empty()) throw std::invalid_argument("metrics: empty input");
}

}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels) {
    check_sizes(scores, labels);
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (uint8_t l : labels) n_pos += (l != 0);
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: need at least one positive and one negative");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Average ranks within tied groups give the half-credit tie handling.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels) {
    check_sizes(scores, labels);
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (uint8_t l : labels) n_pos += (l != 0);
    if (n_pos == 0) throw std::invalid_argument("average_precision: no positives");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double tp = 0.0, fp = 0.0, prev_recall = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        double group_tp = 0.0, group_fp = 0.0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]]) group_tp += 1.0;
            else group_fp += 1.0;
            ++j;
        }
        tp += group_tp;
        fp += group_fp;
        const double recall = tp / static_cast<double>(n_pos);
        const double precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

std::string write_metrics_report(const std::map<std::string, double>& metrics) {
    std::string out = "metric\tvalue\n";
    for (const auto& [k, v] : metrics) out += k + "\t" + format_double(v) + "\n";
    return out;
}

std::map<std::string, double> parse_metrics_report(const std::string& text) {
    std::map<std::string, double> out;
    for (const auto& line : split(text, '\n')) {
        if (line.empty() || line == "metric\tvalue") continue;
        auto parts = split(line, '\t');
        if (parts.size() != 2)
            throw std::runtime_error("metrics report: malformed line: " + line);
        out[parts[0]] = std::stod(parts[1]);
    }
    return out;
}

}  // namespace anchorpheno
