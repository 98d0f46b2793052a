#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anchorpheno/anchor.hpp"
#include "anchorpheno/cohort.hpp"
#include "anchorpheno/gwas.hpp"
#include "anchorpheno/tsv.hpp"

namespace ap = anchorpheno;

namespace {

std::string tmp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "anchorpheno_tests";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

ap::GeneratorConfig small_config() {
    ap::GeneratorConfig g;
    g.n_patients = 300;
    g.prevalence = 0.2;
    g.n_variants = 12;
    g.ld_block_size = 4;
    g.causal_effects = {{0, 0.6}};
    g.comorbidities = ap::default_comorbidities(4, 1.2);
    g.n_filler_codes = 15;
    g.filler_rate = 0.15;
    g.visits_min = 3;
    g.visits_max = 6;
    g.min_codes = 3;
    return g;
}

bool record_has_code(const ap::PatientRecord& r, const std::string& code) {
    for (const auto& v : r.visits)
        if (std::find(v.begin(), v.end(), code) != v.end()) return true;
    return false;
}

}  // namespace

TEST_CASE("perfect anchor sensitivity makes the anchor code equivalent to the latent label") {
    ap::GeneratorConfig g = small_config();
    g.anchor_sensitivity = 1.0;
    g.anchor_fp_rate = 0.0;
    const ap::Cohort coh = ap::generate_cohort(g, 42);
    const ap::AnchorLabel s = ap::label_anchor(coh.records, {{g.anchor_code}});
    REQUIRE(s.s.size() == coh.truth.y.size());
    for (size_t i = 0; i < s.s.size(); ++i) CHECK(s.s[i] == coh.truth.y[i]);
}

TEST_CASE("case count is pinned to the configured prevalence") {
    ap::GeneratorConfig g = small_config();
    g.n_patients = 10000;
    g.prevalence = 0.05;
    const ap::Cohort coh = ap::generate_cohort(g, 7);
    size_t cases = 0;
    for (auto v : coh.truth.y) cases += v;
    const double frac = static_cast<double>(cases) / 10000.0;
    CHECK(frac >= 0.04);
    CHECK(frac <= 0.06);
    CHECK(cases == 500);  // exact top-k thresholding
}

TEST_CASE("zero mutation rate copies the block head across the whole block") {
    ap::GeneratorConfig g = small_config();
    g.n_patients = 400;
    g.n_variants = 8;
    g.ld_block_size = 4;
    g.ld_mutation_rate = 0.0;
    const ap::Cohort coh = ap::generate_cohort(g, 13);
    const auto& d = coh.genotypes.dosage;
    for (int j = 0; j < 8; ++j) {
        const int head = (j / 4) * 4;
        for (int i = 0; i < d.rows(); ++i) CHECK(d(i, j) == d(i, head));
    }
    CHECK(ap::ld_r2(coh.genotypes, "v0000", "v0001") == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(coh.genotypes.variants[1].ld_block == coh.genotypes.variants[0].ld_block);
    CHECK(coh.genotypes.variants[4].ld_block != coh.genotypes.variants[0].ld_block);
}

TEST_CASE("sample allele frequencies track the configured MAF") {
    ap::GeneratorConfig g = small_config();
    g.n_patients = 2000;
    g.n_variants = 10;
    g.ld_block_size = 1;  // independent draws so every column is fresh
    const ap::Cohort coh = ap::generate_cohort(g, 99);
    for (int j = 0; j < 10; ++j) {
        const double freq = coh.genotypes.dosage.col(j).cast<double>().mean() / 2.0;
        CHECK(std::abs(freq - coh.genotypes.variants[j].maf) < 0.05);
    }
}

TEST_CASE("identical config and seed reproduce the cohort bit for bit") {
    const ap::GeneratorConfig g = small_config();
    const ap::Cohort a = ap::generate_cohort(g, 2024);
    const ap::Cohort b = ap::generate_cohort(g, 2024);
    CHECK(a.records == b.records);
    CHECK(a.truth == b.truth);
    CHECK(a.genotypes == b.genotypes);
    CHECK(a.covariates == b.covariates);
    const ap::Cohort c = ap::generate_cohort(g, 2025);
    CHECK(a.records != c.records);
}

TEST_CASE("every record respects the minimum code count") {
    ap::GeneratorConfig g = small_config();
    g.min_codes = 5;
    const ap::Cohort coh = ap::generate_cohort(g, 3);
    for (const auto& r : coh.records) {
        size_t non_anchor = 0;
        for (const auto& v : r.visits)
            for (const auto& c : v) non_anchor += (c != g.anchor_code);
        CHECK(non_anchor >= 5);
    }
}

TEST_CASE("generator rejects unusable configurations") {
    ap::GeneratorConfig g = small_config();
    g.prevalence = 0.0;
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
    g = small_config();
    g.anchor_sensitivity = 0.0;
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
    g = small_config();
    g.n_patients = 5;
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
    g = small_config();
    g.maf_min = 0.5;
    g.maf_max = 0.6;
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
    g = small_config();
    g.causal_effects = {{40, 0.5}};  // out of range
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
    g = small_config();
    g.visits_min = 4;
    g.visits_max = 2;
    CHECK_THROWS_AS(ap::generate_cohort(g, 1), std::invalid_argument);
}

// Among cases the anchor is drawn before any visit content, so its rate is
// anchor_sensitivity within any stratum defined by observed codes.
TEST_CASE("anchor rate among cases is unchanged by conditioning on another code") {
    ap::GeneratorConfig g;
    g.n_patients = 100000;
    g.prevalence = 0.5;
    g.n_variants = 2;
    g.ld_block_size = 1;
    g.causal_effects = {{0, 0.4}};
    g.anchor_sensitivity = 0.7;
    g.anchor_fp_rate = 0.0;
    g.anchor_repeat_rate = 0.3;
    g.comorbidities = {{"CM00", 0.04, 1.2}};
    g.n_filler_codes = 10;
    g.filler_rate = 0.3;
    g.visits_min = 3;
    g.visits_max = 5;
    g.min_codes = 2;
    const ap::Cohort coh = ap::generate_cohort(g, 77);
    const ap::AnchorLabel s = ap::label_anchor(coh.records, {{g.anchor_code}});

    size_t m = 0, anchored = 0;
    for (size_t i = 0; i < coh.records.size(); ++i) {
        if (!coh.truth.y[i]) continue;
        if (!record_has_code(coh.records[i], "CM00")) continue;
        ++m;
        anchored += s.s[i];
    }
    REQUIRE(m > 5000);
    const double rate = static_cast<double>(anchored) / static_cast<double>(m);
    const double band = 3.0 * std::sqrt(0.7 * 0.3 / static_cast<double>(m));
    CHECK(std::abs(rate - 0.7) <= band);
}

TEST_CASE("xor cohort anchors exactly the patients with one marker when flips are off") {
    ap::XorCohortConfig x;
    x.n_patients = 2000;
    x.label_flip_rate = 0.0;
    const ap::XorCohort coh = ap::generate_xor_cohort(x, 21);
    const ap::AnchorLabel s = ap::label_anchor(coh.records, {{x.anchor_code}});
    for (size_t i = 0; i < coh.records.size(); ++i) {
        const bool a = record_has_code(coh.records[i], x.marker_a);
        const bool b = record_has_code(coh.records[i], x.marker_b);
        CHECK(static_cast<bool>(s.s[i]) == (a != b));
        CHECK(coh.truth.y[i] == static_cast<uint8_t>(a != b));
    }
}

TEST_CASE("xor label flips hit roughly the configured fraction") {
    ap::XorCohortConfig x;
    x.n_patients = 5000;
    x.label_flip_rate = 0.2;
    const ap::XorCohort coh = ap::generate_xor_cohort(x, 8);
    const ap::AnchorLabel s = ap::label_anchor(coh.records, {{x.anchor_code}});
    size_t mismatch = 0;
    for (size_t i = 0; i < s.s.size(); ++i) mismatch += (s.s[i] != coh.truth.y[i]);
    const double frac = static_cast<double>(mismatch) / 5000.0;
    CHECK(std::abs(frac - 0.2) < 0.03);
}

TEST_CASE("cohort text form round-trips and rejects malformed input") {
    const ap::GeneratorConfig g = small_config();
    ap::GeneratorConfig big = g;
    big.n_patients = 1000;
    const ap::Cohort coh = ap::generate_cohort(big, 5);
    const std::string text = ap::save_cohort(coh.records);
    const auto back = ap::load_cohort_text(text);
    CHECK(back == coh.records);

    CHECK(ap::load_cohort_text("").empty());

    const auto two = ap::load_cohort_text("p1\tA,B\tC\n");
    REQUIRE(two.size() == 1);
    CHECK(two[0].visits.size() == 2);

    CHECK_THROWS_WITH_AS(ap::load_cohort_text("p1\n"),
                         doctest::Contains("line 1"), std::runtime_error);
    CHECK_THROWS_WITH_AS(ap::load_cohort_text("p1\tA\np1\tB\n"),
                         doctest::Contains("duplicate"), std::runtime_error);
    CHECK_THROWS(ap::load_cohort_text("p1\tA,,B\n"));
}

TEST_CASE("genotype, covariate and truth files round-trip through disk") {
    const ap::Cohort coh = ap::generate_cohort(small_config(), 31);

    const std::string gpath = tmp_path("rt_genotypes.tsv");
    const std::string mpath = tmp_path("rt_variants.tsv");
    ap::write_text_file(gpath, ap::save_genotypes(coh.genotypes));
    ap::write_text_file(mpath, ap::save_genotype_meta(coh.genotypes));
    const ap::GenotypeMatrix geno = ap::load_genotypes(gpath, mpath);
    CHECK(geno == coh.genotypes);

    const std::string cpath = tmp_path("rt_covariates.tsv");
    ap::write_text_file(cpath, ap::save_covariates(coh.covariates));
    CHECK(ap::load_covariates(cpath) == coh.covariates);

    const std::string tpath = tmp_path("rt_truth.tsv");
    ap::write_text_file(tpath, ap::save_truth(coh.records, coh.truth));
    const ap::CohortTruth truth = ap::load_truth(tpath, coh.records);
    CHECK(truth.y == coh.truth.y);
    CHECK(truth.liability == coh.truth.liability);

    const std::string path = tmp_path("rt_cohort.tsv");
    ap::write_text_file(path, ap::save_cohort(coh.records));
    CHECK(ap::load_cohort(path) == coh.records);
}

TEST_CASE("filter keeps only records with enough codes") {
    std::vector<ap::PatientRecord> recs = {
        {"a", {{"X", "Y"}, {"Z"}}},
        {"b", {{"X"}}},
        {"c", {{"X", "Y", "Z", "W", "Q"}}},
    };
    const auto kept = ap::filter_min_codes(recs, 3);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].patient_id == "a");
    CHECK(kept[1].patient_id == "c");
}

TEST_CASE("truth carries a config fingerprint that moves with the config") {
    ap::GeneratorConfig g = small_config();
    const ap::Cohort a = ap::generate_cohort(g, 4);
    g.prevalence = 0.25;
    const ap::Cohort b = ap::generate_cohort(g, 4);
    CHECK(a.truth.config_hash != b.truth.config_hash);
    CHECK(!a.truth.config_hash.empty());
}
