#include "anchorpheno/vocab.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "anchorpheno/prng.hpp"

namespace anchorpheno {

int Vocabulary::token_id(const std::string& code) const {
    auto it = code_to_id.find(code);
    return it == code_to_id.end() ? kUnk : it->second;
}

uint64_t Vocabulary::hash() const {
    std::string blob;
    for (size_t i = 0; i < id_to_code.size(); ++i)
        blob += id_to_code[i] + "\x1f" + std::to_string(i) + "\x1e";
    return fnv1a64(blob);
}

Vocabulary build_vocabulary(const std::vector<PatientRecord>& records,
                            double min_frequency_fraction,
                            const std::vector<std::string>& forced_codes) {
    if (records.empty()) throw std::invalid_argument("build_vocabulary: empty cohort");

    std::map<std::string, size_t> counts;  // ordered map: deterministic iteration
    size_t total = 0;
    for (const auto& r : records)
        for (const auto& v : r.visits)
            for (const auto& c : v) {
                ++counts[c];
                ++total;
            }

    const double threshold = min_frequency_fraction * static_cast<double>(total);

    std::vector<std::pair<std::string, size_t>> kept;
    for (const auto& [code, cnt] : counts) {
        bool forced = std::find(forced_codes.begin(), forced_codes.end(), code) != forced_codes.end();
        if (forced || static_cast<double>(cnt) >= threshold) kept.emplace_back(code, cnt);
    }
    for (const auto& f : forced_codes)
        if (!counts.count(f)) kept.emplace_back(f, 0);

    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.min_frequency_fraction = min_frequency_fraction;
    vocab.id_to_code = {"[PAD]", "[UNK]", "[SEP]", "[CLS]"};
    for (const auto& [code, cnt] : kept) {
        (void)cnt;
        vocab.code_to_id[code] = static_cast<int>(vocab.id_to_code.size());
        vocab.id_to_code.push_back(code);
    }
    return vocab;
}

EncodedSequence encode_record(const PatientRecord& record, const Vocabulary& vocab,
                              int max_len) {
    if (record.visits.empty())
        throw std::invalid_argument("encode_record: record has no visits");
    if (max_len < 3) throw std::invalid_argument("encode_record: max_len too small");

    // Keep most-recent whole visits: walk backwards until the layout
    // ([CLS] + per-visit tokens + [SEP]) would overflow.
    const size_t n_visits = record.visits.size();
    size_t first = n_visits;
    int used = 1;  // [CLS]
    while (first > 0) {
        const int need = static_cast<int>(record.visits[first - 1].size()) + 1;  // codes + [SEP]
        if (used + need > max_len) break;
        used += need;
        --first;
    }

    EncodedSequence enc;
    enc.token_ids.reserve(max_len);
    auto push = [&](int tok, int pos, int seg, uint8_t ok) {
        enc.token_ids.push_back(tok);
        enc.position_ids.push_back(pos);
        enc.segment_ids.push_back(seg);
        enc.valid.push_back(ok);
    };

    push(Vocabulary::kCls, 0, 0, 1);
    if (first == n_visits) {
        // Even the most recent visit alone does not fit: truncate it.
        const auto& visit = record.visits.back();
        const size_t room = static_cast<size_t>(max_len) - 2;  // [CLS] + [SEP]
        for (size_t c = 0; c < std::min(room, visit.size()); ++c)
            push(vocab.token_id(visit[c]), 1, 0, 1);
        push(Vocabulary::kSep, 1, 0, 1);
    } else {
        int visit_pos = 0;
        for (size_t vi = first; vi < n_visits; ++vi) {
            ++visit_pos;
            const int seg = (visit_pos - 1) % 2;
            for (const auto& code : record.visits[vi])
                push(vocab.token_id(code), visit_pos, seg, 1);
            push(Vocabulary::kSep, visit_pos, seg, 1);
        }
    }
    while (static_cast<int>(enc.token_ids.size()) < max_len)
        push(Vocabulary::kPad, 0, 0, 0);
    return enc;
}

}  // namespace anchorpheno
