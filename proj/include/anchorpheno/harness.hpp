#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "anchorpheno/anchor.hpp"
#include "anchorpheno/cohort.hpp"
#include "anchorpheno/gwas.hpp"
#include "anchorpheno/logistic.hpp"
#include "anchorpheno/pheprob.hpp"
#include "anchorpheno/transformer.hpp"
#include "anchorpheno/vocab.hpp"

namespace anchorpheno {

// Cohort block of an experiment configuration. kind "liability" draws the
// full genotype cohort; kind "xor" draws the records-only nonlinear-signal
// cohort (no genotypes, so only classifier experiments apply).
struct CohortSettings {
    std::string kind = "liability";
    GeneratorConfig generator;
    int n_signal_codes = 8;       // comorbidity codes informative of y
    double signal_log_odds = 1.2;
    XorCohortConfig xor_config;
};

struct ExperimentConfig {
    CohortSettings cohort;
    std::array<double, 3> split = {0.6, 0.2, 0.2};
    std::vector<std::string> models = {"anchorbert", "anchor-lr", "pheprob",
                                       "threshold-1", "threshold-2", "threshold-3"};
    std::vector<double> noise_proportions = {0.0, 0.2, 0.4, 0.6};
    std::vector<double> ablation_proportions = {0.0, 0.25, 0.5, 0.75, 0.9, 1.0};
    int repeats = 10;
    double alpha = 5e-8;
    double r2_threshold = 0.5;
    int n_pcs = 0;
    double phenotype_c = 1.0;  // anchor transform calibration constant
    double vocab_min_frequency = 0.0001;
    TransformerConfig transformer;  // vocab_size and seed are filled per run
    LogisticParams logistic;
    PheprobParams pheprob;

    void validate() const;
    // Canonical serialization with every effective field materialized; the
    // config hash carried by report rows is derived from it.
    std::string canonical_json() const;
    std::string hash() const;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

struct SplitIndices {
    std::vector<size_t> train, valid, test;  // each sorted ascending
};

// Shuffled partition by the given ratios; every part is non-empty.
SplitIndices split_indices(size_t n, const std::array<double, 3>& ratios, uint64_t seed);

// "threshold-k" parses to k; other model names return false.
bool is_threshold_model(const std::string& name, int* k = nullptr);

struct GeneratedCohort {
    std::vector<PatientRecord> records;
    CohortTruth truth;
    GenotypeMatrix genotypes;
    CovariateTable covariates;
    bool has_genotypes = false;
};

GeneratedCohort make_cohort(const ExperimentConfig& config, uint64_t seed);
AnchorSpec anchor_of(const ExperimentConfig& config);

// One trained-and-scored model. scores are P(s=1|x) for the classifiers, the
// case-component posterior for the mixture, and the 0/1 rule for thresholds.
// phenotype applies the anchor transform to classifier scores against the
// observed labels; mixture and threshold phenotypes are their scores as-is.
struct ModelRun {
    std::string name;
    std::vector<double> scores;
    PhenotypeVector phenotype;
    std::string model_json;  // checkpoint text; empty for threshold rules
};

ModelRun run_model(const std::string& name, const std::vector<PatientRecord>& records,
                   const AnchorLabel& train_labels, const AnchorLabel& observed,
                   const Vocabulary& vocab, const AnchorSpec& anchor,
                   const ExperimentConfig& config, const SplitIndices& split, uint64_t seed);

struct ComparisonRow {
    std::string model;
    double auroc_mean = 0, auroc_sd = 0, auprc_mean = 0, auprc_sd = 0;
    std::vector<double> auroc, auprc;  // per repeat
};

struct ComparisonReport {
    std::vector<ComparisonRow> rows;
    uint64_t seed = 0;
    std::string config_hash;

    std::string to_tsv() const;
    std::map<std::string, double> metrics() const;  // "<model>.auroc_mean" style keys
};

// Per repeat: fresh split and training seed on one shared cohort; test-split
// AUROC/AUPRC of each model's scores against the observed anchor labels.
ComparisonReport run_classifier_comparison(const ExperimentConfig& config, uint64_t seed);

struct NoiseSweepRow {
    std::string model;
    double proportion = 0;
    double valid_ap_mean = 0, valid_ap_sd = 0, test_ap_mean = 0, test_ap_sd = 0;
    std::vector<double> valid_ap, test_ap;  // per repeat
};

struct NoiseSweepReport {
    std::vector<NoiseSweepRow> rows;
    uint64_t seed = 0;
    std::string config_hash;

    std::string to_tsv() const;
};

// Training labels corrupted per proportion (flip sets nested within a repeat),
// metrics always against clean labels. Repeat seeds match
// run_classifier_comparison, so the proportion-0 test numbers coincide with
// the comparison report exactly.
NoiseSweepReport run_noise_sweep(const ExperimentConfig& config, uint64_t seed);

struct PipelineModelRow {
    std::string model;
    int n_significant = 0;
    int matched = 0;
    int catalog_size = 0;
    double proportion = 0.0;
};

struct PipelineResult {
    std::vector<PipelineModelRow> rows;
    std::map<std::string, GwasResult> gwas;
    std::map<std::string, PhenotypeVector> phenotypes;
    std::map<std::string, std::vector<double>> scores;
    std::set<std::string> panel;  // union of significant variants across models
    GeneratedCohort cohort;
    AnchorLabel observed;
    Vocabulary vocab;
    SplitIndices split;
    uint64_t seed = 0;
    std::string config_hash;

    std::string catalog_tsv() const;
};

// cohort -> train all models -> phenotypes -> per-model association scan ->
// LD-expanded truth-catalog matching. Requires a liability cohort.
PipelineResult run_pipeline_core(const ExperimentConfig& config, uint64_t seed);

// Core plus file output: cohort files, per-model phenotype and summary
// statistics files, and the catalog comparison table.
PipelineResult run_full_pipeline(const ExperimentConfig& config, uint64_t seed,
                                 const std::string& out_dir);

struct AblationRow {
    std::string regime;  // "both" (cases and controls) or "cases_only"
    std::string model;
    double proportion = 0;
    double retention_mean = 0, retention_sd = 0;
    std::vector<double> retention;  // per repeat
};

struct AblationReport {
    std::vector<AblationRow> rows;
    uint64_t seed = 0;
    std::string config_hash;

    std::string to_tsv() const;
};

// Patients are removed after scoring; associations rerun on survivors against
// the frozen panel of full-data significant variants; retention is the
// proportion of truth-catalog entries still matched.
AblationReport ablation_from_pipeline(const PipelineResult& pipe, const ExperimentConfig& config,
                                      uint64_t seed);
AblationReport run_ablation(const ExperimentConfig& config, uint64_t seed);

}  // namespace anchorpheno
