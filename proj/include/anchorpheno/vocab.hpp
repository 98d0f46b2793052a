#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "anchorpheno/cohort.hpp"

namespace anchorpheno {

// Code -> token id map with fixed special tokens. Ids are stable across runs:
// codes above the frequency threshold are ordered by count (desc), ties by
// code string.
struct Vocabulary {
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kSep = 2;
    static constexpr int kCls = 3;

    std::unordered_map<std::string, int> code_to_id;
    std::vector<std::string> id_to_code;  // index 0..3 are the specials
    double min_frequency_fraction = 0.0;

    int size() const { return static_cast<int>(id_to_code.size()); }
    int token_id(const std::string& code) const;
    bool contains(const std::string& code) const { return code_to_id.count(code) > 0; }
    uint64_t hash() const;
};

// Codes whose corpus count >= min_frequency_fraction * total count get ids;
// `forced_codes` (anchor codes) always get ids regardless of frequency.
Vocabulary build_vocabulary(const std::vector<PatientRecord>& records,
                            double min_frequency_fraction = 0.0001,
                            const std::vector<std::string>& forced_codes = {});

// Fixed-length token layout: [CLS] v1 [SEP] v2 [SEP] ... [PAD]*. Position ids
// are shared by all tokens of a visit (the trailing [SEP] included), segment
// ids alternate 0/1 per surviving visit, [CLS] sits at position 0 / segment 0.
// Over-length records drop oldest whole visits first.
struct EncodedSequence {
    std::vector<int> token_ids;
    std::vector<int> position_ids;
    std::vector<int> segment_ids;
    std::vector<uint8_t> valid;  // 0 at [PAD] positions

    bool operator==(const EncodedSequence&) const = default;
};

EncodedSequence encode_record(const PatientRecord& record, const Vocabulary& vocab,
                              int max_len = 256);

}  // namespace anchorpheno
