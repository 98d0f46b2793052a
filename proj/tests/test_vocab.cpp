#include <doctest.h>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "anchorpheno/cohort.hpp"
#include "anchorpheno/vocab.hpp"

namespace ap = anchorpheno;
using ap::Vocabulary;

namespace {

// One record whose corpus totals we can dial exactly: `common` occurrences of
// one code plus a single occurrence of RARE.
ap::PatientRecord counted_record(size_t common) {
    ap::PatientRecord r;
    r.patient_id = "p0";
    r.visits.assign(common, {"COMMON"});
    r.visits.push_back({"RARE"});
    return r;
}

ap::Vocabulary vocab_of(const std::vector<std::vector<std::string>>& visits) {
    ap::PatientRecord r{"p0", visits};
    return ap::build_vocabulary({r}, 0.0);
}

}  // namespace

TEST_CASE("special tokens hold the first four ids") {
    const auto v = vocab_of({{"A"}});
    CHECK(v.id_to_code[Vocabulary::kPad] == "[PAD]");
    CHECK(v.id_to_code[Vocabulary::kUnk] == "[UNK]");
    CHECK(v.id_to_code[Vocabulary::kSep] == "[SEP]");
    CHECK(v.id_to_code[Vocabulary::kCls] == "[CLS]");
    CHECK(v.token_id("A") == 4);
    CHECK(v.token_id("never-seen") == Vocabulary::kUnk);
}

TEST_CASE("frequency threshold boundary keeps and drops a once-seen code") {
    // 10000 total occurrences: threshold 1e-4 gives cutoff 1, RARE stays.
    const auto kept = ap::build_vocabulary({counted_record(9999)}, 1e-4);
    CHECK(kept.contains("RARE"));
    // 20000 total occurrences: cutoff 2, RARE maps to [UNK].
    const auto dropped = ap::build_vocabulary({counted_record(19999)}, 1e-4);
    CHECK(!dropped.contains("RARE"));
    CHECK(dropped.token_id("RARE") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary size equals the brute-force census plus the specials") {
    ap::GeneratorConfig g;
    g.n_patients = 500;
    g.n_variants = 4;
    g.ld_block_size = 2;
    g.causal_effects = {{0, 0.5}};
    g.comorbidities = ap::default_comorbidities(5, 1.0);
    g.n_filler_codes = 25;
    g.min_codes = 3;
    const auto records = ap::generate_cohort(g, 12).records;

    const double fraction = 0.001;
    std::map<std::string, size_t> count;
    size_t total = 0;
    for (const auto& r : records)
        for (const auto& visit : r.visits)
            for (const auto& code : visit) {
                ++count[code];
                ++total;
            }
    size_t expected = 0;
    for (const auto& [code, c] : count)
        if (static_cast<double>(c) >= fraction * static_cast<double>(total)) ++expected;

    const auto v = ap::build_vocabulary(records, fraction);
    CHECK(static_cast<size_t>(v.size()) == expected + 4);
}

TEST_CASE("ids are ordered by count then code and are reproducible") {
    // C appears 5 times, A and B 3 each: C first, then A before B.
    std::vector<std::vector<std::string>> visits;
    for (int i = 0; i < 5; ++i) visits.push_back({"C"});
    for (int i = 0; i < 3; ++i) visits.push_back({"A"});
    for (int i = 0; i < 3; ++i) visits.push_back({"B"});
    const auto v = vocab_of(visits);
    CHECK(v.token_id("C") == 4);
    CHECK(v.token_id("A") == 5);
    CHECK(v.token_id("B") == 6);

    const auto again = vocab_of(visits);
    CHECK(again.id_to_code == v.id_to_code);
    CHECK(again.hash() == v.hash());
    const auto other = vocab_of({{"A"}, {"Z"}});
    CHECK(other.hash() != v.hash());
}

TEST_CASE("forced codes get ids even when they never reach the threshold") {
    const auto v = ap::build_vocabulary({counted_record(19999)}, 1e-4, {"RARE", "GHOST"});
    CHECK(v.contains("RARE"));
    CHECK(v.contains("GHOST"));  // absent from the corpus entirely
}

TEST_CASE("building from an empty corpus is an error") {
    CHECK_THROWS_AS(ap::build_vocabulary({}, 0.0), std::invalid_argument);
}

TEST_CASE("single-visit encoding lays out CLS, codes, SEP and padding") {
    const auto v = vocab_of({{"A"}, {"B"}});
    const ap::EncodedSequence e = ap::encode_record({"p", {{"A"}}}, v, 6);
    CHECK(e.token_ids == std::vector<int>{Vocabulary::kCls, v.token_id("A"), Vocabulary::kSep,
                                          Vocabulary::kPad, Vocabulary::kPad, Vocabulary::kPad});
    CHECK(e.position_ids == std::vector<int>{0, 1, 1, 0, 0, 0});
    CHECK(e.segment_ids == std::vector<int>{0, 0, 0, 0, 0, 0});
    CHECK(e.valid == std::vector<uint8_t>{1, 1, 1, 0, 0, 0});
}

TEST_CASE("segments alternate per visit and positions are shared within a visit") {
    const auto v = vocab_of({{"A"}, {"B"}, {"C"}});
    const ap::EncodedSequence e = ap::encode_record({"p", {{"A"}, {"B", "C"}}}, v, 10);
    // [CLS] A [SEP] B C [SEP] pad...
    CHECK(e.position_ids == std::vector<int>{0, 1, 1, 2, 2, 2, 0, 0, 0, 0});
    CHECK(e.segment_ids == std::vector<int>{0, 0, 0, 1, 1, 1, 0, 0, 0, 0});
    CHECK(e.token_ids[3] == v.token_id("B"));
    CHECK(e.token_ids[5] == Vocabulary::kSep);
}

TEST_CASE("long histories drop the oldest whole visits and keep the suffix") {
    ap::PatientRecord r;
    r.patient_id = "p";
    std::vector<std::vector<std::string>> all;
    for (int i = 0; i < 100; ++i) {
        std::vector<std::string> visit;
        for (int k = 0; k < 3; ++k) visit.push_back("C" + std::to_string(i * 3 + k));
        r.visits.push_back(visit);
        all.push_back(visit);
    }
    const auto v = vocab_of(all);
    const ap::EncodedSequence e = ap::encode_record(r, v, 256);
    REQUIRE(e.token_ids.size() == 256);
    CHECK(e.token_ids[0] == Vocabulary::kCls);

    auto has_id = [&](int id) {
        return std::find(e.token_ids.begin(), e.token_ids.end(), id) != e.token_ids.end();
    };
    // 63 visits of 4 slots each fit after [CLS]; visits 0..36 are dropped.
    CHECK(has_id(v.token_id("C299")));
    CHECK(has_id(v.token_id("C111")));
    CHECK(!has_id(v.token_id("C110")));

    // the valid prefix carries non-decreasing positions, padding sits at 0
    int last = 0;
    size_t n_valid = 0;
    for (size_t i = 0; i < e.token_ids.size(); ++i) {
        if (!e.valid[i]) {
            CHECK(e.token_ids[i] == Vocabulary::kPad);
            continue;
        }
        ++n_valid;
        CHECK(e.position_ids[i] >= last);
        last = e.position_ids[i];
    }
    CHECK(n_valid == 1 + 63 * 4);
}

TEST_CASE("one oversized visit is truncated instead of dropped") {
    ap::PatientRecord r;
    r.patient_id = "p";
    r.visits.push_back({});
    for (int i = 0; i < 300; ++i) r.visits[0].push_back("D" + std::to_string(i));
    const auto v = vocab_of(r.visits);
    const ap::EncodedSequence e = ap::encode_record(r, v, 8);
    REQUIRE(e.token_ids.size() == 8);
    CHECK(e.token_ids[0] == Vocabulary::kCls);
    for (int k = 1; k <= 6; ++k) CHECK(e.token_ids[k] == v.token_id(r.visits[0][k - 1]));
    CHECK(e.token_ids[7] == Vocabulary::kSep);
    for (auto flag : e.valid) CHECK(flag == 1);
}

TEST_CASE("encoding rejects empty records and tiny windows") {
    const auto v = vocab_of({{"A"}});
    CHECK_THROWS_AS(ap::encode_record({"p", {}}, v, 16), std::invalid_argument);
    CHECK_THROWS_AS(ap::encode_record({"p", {{"A"}}}, v, 2), std::invalid_argument);
}
