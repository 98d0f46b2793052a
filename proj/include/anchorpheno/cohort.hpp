#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace anchorpheno {

// One patient's observed history: an ordered list of visits, each an
// unordered set of disease-code strings. Codes are kept sorted within a
// visit so encodings and file output are deterministic.
struct PatientRecord {
    std::string patient_id;
    std::vector<std::vector<std::string>> visits;

    size_t total_codes() const;
    bool operator==(const PatientRecord&) const = default;
};

// Latent per-patient state. Evaluation-only: no training entry point in this
// library accepts a CohortTruth.
struct CohortTruth {
    std::vector<uint8_t> y;
    std::vector<double> liability;
    std::string config_hash;

    bool operator==(const CohortTruth&) const = default;
};

struct VariantInfo {
    std::string id;
    double maf = 0.0;
    bool causal = false;
    double effect = 0.0;
    int ld_block = -1;

    bool operator==(const VariantInfo&) const = default;
};

// Patients x variants minor-allele dosage, entries in {0,1,2}.
struct GenotypeMatrix {
    std::vector<std::string> patient_ids;
    std::vector<VariantInfo> variants;
    Eigen::MatrixXi dosage;

    int variant_index(const std::string& id) const;  // -1 if absent
    std::vector<std::string> causal_ids() const;
    bool operator==(const GenotypeMatrix& o) const {
        return patient_ids == o.patient_ids && variants == o.variants && dosage == o.dosage;
    }
};

struct CovariateTable {
    std::vector<std::string> patient_ids;
    std::vector<int> sex;       // {0,1}
    std::vector<double> age;    // years
    Eigen::MatrixXd pcs;        // n x 10

    bool operator==(const CovariateTable& o) const {
        return patient_ids == o.patient_ids && sex == o.sex && age == o.age && pcs == o.pcs;
    }
};

struct ComorbidityCode {
    std::string code;
    double base_rate = 0.05;   // per-visit probability when y = 0
    double log_odds = 0.0;     // added on the logit scale when y = 1
};

struct GeneratorConfig {
    int n_patients = 2000;
    double prevalence = 0.15;

    int n_variants = 50;
    double maf_min = 0.1;
    double maf_max = 0.4;
    int ld_block_size = 5;
    double ld_mutation_rate = 0.1;
    // variant index -> liability effect per allele copy
    std::vector<std::pair<int, double>> causal_effects = {{0, 0.5}};

    double beta_sex = 0.2;
    double beta_age = 0.2;

    std::string anchor_code = "ANCHOR";
    double anchor_sensitivity = 1.0;   // P(anchor observed | case)
    double anchor_fp_rate = 0.0;       // P(anchor observed | control)
    double anchor_repeat_rate = 0.4;   // per-visit repeat probability for carriers

    std::vector<ComorbidityCode> comorbidities;
    int n_filler_codes = 40;
    double filler_rate = 0.08;         // per-visit probability, independent of y

    int visits_min = 3;
    int visits_max = 9;
    int min_codes = 5;
};

struct Cohort {
    std::vector<PatientRecord> records;
    CohortTruth truth;
    GenotypeMatrix genotypes;
    CovariateTable covariates;
};

// Draws a full synthetic cohort: genotypes with LD blocks, liability-model
// latent labels at exactly the configured prevalence, per-visit comorbidity
// codes whose rates depend on y, and an anchor code observed for cases with
// probability anchor_sensitivity independent of everything else given y.
// Identical (config, seed) gives a bit-identical cohort.
Cohort generate_cohort(const GeneratorConfig& config, uint64_t seed);

// A reasonable default comorbidity pool: `n_signal` codes informative of y
// plus the config's filler codes supply vocabulary bulk.
std::vector<ComorbidityCode> default_comorbidities(int n_signal, double log_odds);

// Cohort where anchor presence is a (noisy) XOR of two marker codes, for
// probing classifiers on a signal that count-based linear models cannot
// represent. truth.y holds the ideal XOR label.
struct XorCohortConfig {
    int n_patients = 2400;
    double marker_rate = 0.5;      // P(marker code present), each of the two
    double marker_visit_rate = 0.6;  // per-visit placement rate for a present marker
    double label_flip_rate = 0.0;  // probability the XOR-implied anchor is flipped
    std::string anchor_code = "ANCHOR";
    std::string marker_a = "MARK_A";
    std::string marker_b = "MARK_B";
    int n_filler_codes = 30;
    double filler_rate = 0.25;
    int visits_min = 3;
    int visits_max = 7;
    int min_codes = 5;
};

struct XorCohort {
    std::vector<PatientRecord> records;
    CohortTruth truth;
};

XorCohort generate_xor_cohort(const XorCohortConfig& config, uint64_t seed);

// Keeps only patients with at least `min_codes` total codes.
std::vector<PatientRecord> filter_min_codes(const std::vector<PatientRecord>& records,
                                            size_t min_codes = 5);

// --- file formats ---------------------------------------------------------
// cohort:     patient_id<TAB>visit1_code1,visit1_code2<TAB>visit2_code1...
// genotypes:  header patient_id<TAB>variant ids; rows of 0/1/2
//   sidecar:  variant_id maf causal effect ld_block
// truth:      patient_id<TAB>y<TAB>liability
// covariates: patient_id<TAB>sex<TAB>age<TAB>pc1..pc10

std::string save_cohort(const std::vector<PatientRecord>& records);
std::vector<PatientRecord> load_cohort_text(const std::string& text);
std::vector<PatientRecord> load_cohort(const std::string& path);

std::string save_genotypes(const GenotypeMatrix& g);
std::string save_genotype_meta(const GenotypeMatrix& g);
GenotypeMatrix load_genotypes(const std::string& geno_path, const std::string& meta_path);

std::string save_truth(const std::vector<PatientRecord>& records, const CohortTruth& truth);
CohortTruth load_truth(const std::string& path, const std::vector<PatientRecord>& records);

std::string save_covariates(const CovariateTable& c);
CovariateTable load_covariates(const std::string& path);

}  // namespace anchorpheno
