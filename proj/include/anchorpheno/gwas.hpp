#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "anchorpheno/cohort.hpp"

namespace anchorpheno {

struct AssociationResult {
    std::string variant_id;
    double beta = 0.0;
    double se = 0.0;
    double stat = 0.0;  // t (linear) or Wald z (logistic)
    double p = 1.0;
    std::string test;   // "linear" or "logistic"
    int n_used = 0;
    bool ok = true;
    std::string note;   // diagnostic when ok is false
};

// Single-variant OLS of phenotype on dosage plus covariates; two-sided t test
// on the dosage coefficient with n - p degrees of freedom. Throws on
// rank-deficient designs and degenerate phenotypes.
AssociationResult linear_assoc(const Eigen::VectorXd& dosage, const Eigen::VectorXd& phenotype,
                               const Eigen::MatrixXd& covariates, const std::string& variant_id);

// Single-variant logistic fit (damped Newton); Wald z on the dosage
// coefficient. Phenotype must be 0/1. Separation is flagged, not thrown.
AssociationResult logistic_assoc(const Eigen::VectorXd& dosage, const Eigen::VectorXd& phenotype,
                                 const Eigen::MatrixXd& covariates, const std::string& variant_id);

struct GwasOptions {
    double alpha = 5e-8;
    bool force_linear = false;  // binary phenotypes default to logistic
    int n_pcs = 0;              // leading covariate PCs to include
    bool use_sex_age = true;
};

struct GwasResult {
    std::vector<AssociationResult> rows;
    std::vector<std::string> significant;  // variant ids with ok && p < alpha
    double alpha = 5e-8;
    std::string test;
};

// Runs one association per variant. Per-variant numeric failures become rows
// with ok=false; a covariate-only design that is already rank deficient is a
// hard error because every variant would fail the same way.
GwasResult run_gwas(const GenotypeMatrix& genotypes, const std::vector<double>& phenotype,
                    const CovariateTable& covariates, const GwasOptions& options);

// Squared Pearson correlation between two dosage columns.
double ld_r2(const GenotypeMatrix& genotypes, const std::string& a, const std::string& b);

// One-step LD expansion: every variant whose r2 with some seed meets the
// threshold joins the set. Seeds themselves are always included.
std::set<std::string> ld_expand(const GenotypeMatrix& genotypes,
                                const std::set<std::string>& seeds, double r2_threshold);

struct TruthCatalog {
    std::vector<std::string> causal_ids;
    static TruthCatalog from_genotypes(const GenotypeMatrix& genotypes);
};

struct CatalogMatch {
    int matched = 0;
    int total = 0;
    double proportion = 0.0;  // matched / total, 0 when the catalog is empty
    std::vector<std::string> matched_ids;
};

// A catalog entry matches when its LD neighbourhood intersects the LD-expanded
// significant set.
CatalogMatch match_catalog(const GenotypeMatrix& genotypes, const TruthCatalog& catalog,
                           const std::set<std::string>& significant, double r2_threshold);

std::string format_gwas_rows(const std::vector<AssociationResult>& rows);
std::vector<AssociationResult> parse_gwas_rows(const std::string& text);

}  // namespace anchorpheno
