#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorpheno/cohort.hpp"
#include "anchorpheno/anchor.hpp"

namespace anchorpheno {

// Two-component binomial mixture over per-patient (anchor count, total count)
// pairs. Component 1 is the case component: p_case >= p_control always holds
// after fitting.
struct PheprobModel {
    double pi = 0.5;         // case mixing weight
    double p_case = 0.5;     // per-code anchor probability, case component
    double p_control = 0.1;  // per-code anchor probability, control component
    double loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> loglik_trace;  // one entry per EM iteration, non-decreasing
};

struct PheprobParams {
    double tol = 1e-8;    // absolute loglik improvement stopping rule
    int max_iter = 500;
    int restarts = 5;     // seeded random restarts beyond the ratio-split init
};

// counts[i] = anchor-code occurrences for patient i, totals[i] = all code
// occurrences. Requires 0 <= counts[i] <= totals[i], totals[i] >= 1.
PheprobModel fit_pheprob(const std::vector<int>& counts, const std::vector<int>& totals,
                         const PheprobParams& params, uint64_t seed);

// Posterior probability of the case component for each patient.
std::vector<double> pheprob_posteriors(const PheprobModel& model, const std::vector<int>& counts,
                                       const std::vector<int>& totals);

// Convenience: extract (anchor count, total count) pairs from records.
void pheprob_counts(const std::vector<PatientRecord>& records, const AnchorSpec& anchor,
                    std::vector<int>* counts, std::vector<int>* totals);

std::string save_pheprob(const PheprobModel& model);
PheprobModel load_pheprob(const std::string& text);

}  // namespace anchorpheno
