#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "anchorpheno/anchor.hpp"
#include "anchorpheno/vocab.hpp"

namespace anchorpheno {

// Damped-Newton fit of a logistic log-likelihood with optional L2 penalty.
// X must carry the intercept column; penalty_mask has one entry per column
// (0 = unpenalized). Shared by the anchor classifier and the association scan.
struct LogitFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov;  // inverse penalized Hessian at the optimum
    bool converged = false;
    bool separation = false;
    int iterations = 0;
    double loglik = 0.0;
};

LogitFit fit_logit_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double l2,
                          const Eigen::VectorXd& penalty_mask, double tol = 1e-8,
                          int max_iter = 50);

// Per-code total counts with anchor columns removed. Feature order follows
// token ids, [UNK] first.
struct CountFeaturizer {
    std::vector<std::string> feature_codes;  // "[UNK]" plus real codes
    std::vector<int> token_ids;

    static CountFeaturizer build(const Vocabulary& vocab, const AnchorSpec& anchor);
    Eigen::MatrixXd counts(const std::vector<PatientRecord>& records,
                           const Vocabulary& vocab) const;
};

struct StandardScaler {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev;  // constant columns get stddev 1

    void fit(const Eigen::MatrixXd& X);
    Eigen::MatrixXd transform(const Eigen::MatrixXd& X) const;
};

struct LogisticParams {
    double l2 = 1.0;
    double tol = 1e-8;
    int max_iter = 100;
};

struct LogisticModel {
    Eigen::VectorXd coef;  // standardized-feature space
    double intercept = 0.0;
    StandardScaler scaler;
    CountFeaturizer featurizer;
    uint64_t vocab_hash = 0;
    LogisticParams params;
    bool converged = false;

    std::vector<double> z_scores() const;  // per-feature Wald z
    Eigen::VectorXd se;
};

// Fit on already-featurized rows (all rows are training data here).
LogisticModel train_logistic(const Eigen::MatrixXd& features, const std::vector<uint8_t>& labels,
                             double l2, double tol, int max_iter);

// End-to-end anchor classifier: counts -> train-split scaling -> logistic fit.
// train_idx selects the rows used for both scaler statistics and the fit.
LogisticModel train_anchor_logistic(const std::vector<PatientRecord>& records,
                                    const AnchorLabel& labels, const Vocabulary& vocab,
                                    const AnchorSpec& anchor, const LogisticParams& params,
                                    const std::vector<size_t>& train_idx);

std::vector<double> predict_logistic(const LogisticModel& model,
                                     const std::vector<PatientRecord>& records,
                                     const Vocabulary& vocab);

std::string save_logistic(const LogisticModel& model);
LogisticModel load_logistic(const std::string& text, const Vocabulary& vocab);

}  // namespace anchorpheno
