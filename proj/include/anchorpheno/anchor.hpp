#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchorpheno/cohort.hpp"

namespace anchorpheno {

// One or more disease codes treated as a disjunctive anchor.
struct AnchorSpec {
    std::vector<std::string> codes;

    bool matches(const std::string& code) const;
};

// s_i = 1 iff any anchor code appears anywhere in patient i's record.
struct AnchorLabel {
    std::vector<uint8_t> s;

    size_t positives() const;
    bool operator==(const AnchorLabel&) const = default;
};

AnchorLabel label_anchor(const std::vector<PatientRecord>& records, const AnchorSpec& anchor);

// Total anchor occurrences per patient: one per visit per matching code.
std::vector<int> anchor_counts(const std::vector<PatientRecord>& records,
                               const AnchorSpec& anchor);

// Flips exactly floor(proportion * |positives|) positives to 0, chosen
// uniformly; negatives untouched. For corrupting training labels only.
AnchorLabel inject_label_noise(const AnchorLabel& labels, double proportion, uint64_t seed);

enum class PhenotypeKind { binary, continuous };

struct PhenotypeVector {
    std::vector<double> score;
    PhenotypeKind kind = PhenotypeKind::continuous;
    double calibration_c = 1.0;
};

// The anchor phenotype transform: 1 where s = 1, else min(score / c, 1).
PhenotypeVector phenotype_from_scores(const std::vector<double>& scores,
                                      const AnchorLabel& labels, double c = 1.0);

// Binary phenotype: case iff total anchor occurrences >= k.
PhenotypeVector threshold_phenotype(const std::vector<PatientRecord>& records,
                                    const AnchorSpec& anchor, int k);

// Phenotype file: patient_id<TAB>score<TAB>kind
std::string save_phenotype(const std::vector<std::string>& patient_ids,
                           const PhenotypeVector& phenotype);
PhenotypeVector load_phenotype(const std::string& path, std::vector<std::string>* patient_ids = nullptr);

}  // namespace anchorpheno
