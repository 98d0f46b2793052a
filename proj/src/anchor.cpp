#include "anchorpheno/anchor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "anchorpheno/prng.hpp"
#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

bool AnchorSpec::matches(const std::string& code) const {
    return std::find(codes.begin(), codes.end(), code) != codes.end();
}

size_t AnchorLabel::positives() const {
    size_t n = 0;
    for (uint8_t v : s) n += (v != 0);
    return n;
}

AnchorLabel label_anchor(const std::vector<PatientRecord>& records, const AnchorSpec& anchor) {
    if (anchor.codes.empty()) throw std::invalid_argument("label_anchor: empty anchor spec");
    AnchorLabel out;
    out.s.reserve(records.size());
    for (const auto& r : records) {
        uint8_t hit = 0;
        for (const auto& v : r.visits) {
            for (const auto& c : v)
                if (anchor.matches(c)) {
                    hit = 1;
                    break;
                }
            if (hit) break;
        }
        out.s.push_back(hit);
    }
    return out;
}

std::vector<int> anchor_counts(const std::vector<PatientRecord>& records,
                               const AnchorSpec& anchor) {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        int count = 0;
        for (const auto& v : r.visits)
            for (const auto& c : v)
                if (anchor.matches(c)) ++count;
        out.push_back(count);
    }
    return out;
}

AnchorLabel inject_label_noise(const AnchorLabel& labels, double proportion, uint64_t seed) {
    if (proportion < 0.0 || proportion > 1.0)
        throw std::invalid_argument("inject_label_noise: proportion must be in [0,1]");
    std::vector<size_t> pos_idx;
    for (size_t i = 0; i < labels.s.size(); ++i)
        if (labels.s[i]) pos_idx.push_back(i);
    const size_t n_flip = static_cast<size_t>(std::floor(proportion * static_cast<double>(pos_idx.size())));

    AnchorLabel out = labels;
    auto eng = make_engine(derive_seed(seed, "label-noise"));
    std::shuffle(pos_idx.begin(), pos_idx.end(), eng);
    for (size_t k = 0; k < n_flip; ++k) out.s[pos_idx[k]] = 0;
    return out;
}

PhenotypeVector phenotype_from_scores(const std::vector<double>& scores,
                                      const AnchorLabel& labels, double c) {
    if (scores.size() != labels.s.size())
        throw std::invalid_argument("phenotype_from_scores: size mismatch");
    if (c <= 0.0 || c > 1.0)
        throw std::invalid_argument("phenotype_from_scores: c must be in (0,1]");
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0))
            throw std::invalid_argument("phenotype_from_scores: scores must be in [0,1]");

    PhenotypeVector out;
    out.kind = PhenotypeKind::continuous;
    out.calibration_c = c;
    out.score.reserve(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels.s[i]) out.score.push_back(1.0);
        else out.score.push_back(std::min(scores[i] / c, 1.0));
    }
    return out;
}

PhenotypeVector threshold_phenotype(const std::vector<PatientRecord>& records,
                                    const AnchorSpec& anchor, int k) {
    if (k < 1) throw std::invalid_argument("threshold_phenotype: k must be >= 1");
    const auto counts = anchor_counts(records, anchor);
    PhenotypeVector out;
    out.kind = PhenotypeKind::binary;
    out.score.reserve(counts.size());
    for (int c : counts) out.score.push_back(c >= k ? 1.0 : 0.0);
    return out;
}

std::string save_phenotype(const std::vector<std::string>& patient_ids,
                           const PhenotypeVector& phenotype) {
    if (patient_ids.size() != phenotype.score.size())
        throw std::invalid_argument("save_phenotype: size mismatch");
    std::string out = "patient_id\tscore\tkind\n";
    const std::string kind = phenotype.kind == PhenotypeKind::binary ? "binary" : "continuous";
    for (size_t i = 0; i < patient_ids.size(); ++i)
        out += patient_ids[i] + "\t" + format_double(phenotype.score[i]) + "\t" + kind + "\n";
    return out;
}

PhenotypeVector load_phenotype(const std::string& path, std::vector<std::string>* patient_ids) {
    PhenotypeVector out;
    const auto lines = read_lines(path);
    if (lines.empty() || split(lines[0], '\t')[0] != "patient_id")
        throw std::runtime_error("phenotype file: bad header");
    bool kind_set = false;
    for (size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split(lines[ln], '\t');
        if (fields.size() != 3)
            throw std::runtime_error("phenotype line " + std::to_string(ln + 1) +
                                     ": expected 3 fields");
        if (patient_ids) patient_ids->push_back(fields[0]);
        out.score.push_back(std::stod(fields[1]));
        PhenotypeKind k = fields[2] == "binary" ? PhenotypeKind::binary : PhenotypeKind::continuous;
        if (!kind_set) {
            out.kind = k;
            kind_set = true;
        } else if (k != out.kind) {
            throw std::runtime_error("phenotype file: mixed kinds");
        }
    }
    return out;
}

}  // namespace anchorpheno
