#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace anchorpheno {

// Mann-Whitney AUROC: P(score+ > score-) + 0.5 * P(tie), via average ranks.
// Throws std::invalid_argument unless both classes are present.
double auroc(const std::vector<double>& scores, const std::vector<uint8_t>& labels);

// Average precision over descending-score prefixes; tied scores enter as one
// group. Throws std::invalid_argument when there is no positive.
double average_precision(const std::vector<double>& scores,
                         const std::vector<uint8_t>& labels);

// Metrics report: `metric<TAB>value` lines.
std::string write_metrics_report(const std::map<std::string, double>& metrics);
std::map<std::string, double> parse_metrics_report(const std::string& text);

}  // namespace anchorpheno
