#include "anchorpheno/logistic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

namespace {

double clamp_prob(double p) { return std::min(1.0 - 1e-12, std::max(1e-12, p)); }

double penalized_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                        const Eigen::VectorXd& beta, double l2,
                        const Eigen::VectorXd& penalty_mask) {
    const Eigen::VectorXd eta = X * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double p = clamp_prob(1.0 / (1.0 + std::exp(-eta[i])));
        ll += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
    }
    ll -= 0.5 * l2 * (penalty_mask.array() * beta.array().square()).sum();
    return ll;
}

}  // namespace

LogitFit fit_logit_newton(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double l2,
                          const Eigen::VectorXd& penalty_mask, double tol, int max_iter) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (y.size() != n) throw std::invalid_argument("fit_logit_newton: size mismatch");
    if (penalty_mask.size() != p) throw std::invalid_argument("fit_logit_newton: bad penalty mask");
    if (!X.allFinite() || !y.allFinite())
        throw std::invalid_argument("fit_logit_newton: non-finite inputs");
    bool any0 = false, any1 = false;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y[i] == 0.0) any0 = true;
        else if (y[i] == 1.0) any1 = true;
        else throw std::invalid_argument("fit_logit_newton: labels must be 0/1");
    }
    if (!any0 || !any1)
        throw std::invalid_argument("fit_logit_newton: both classes required");

    LogitFit fit;
    fit.beta = Eigen::VectorXd::Zero(p);
    double ll = penalized_loglik(X, y, fit.beta, l2, penalty_mask);

    Eigen::MatrixXd hess(p, p);
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::VectorXd eta = X * fit.beta;
        Eigen::VectorXd prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = clamp_prob(1.0 / (1.0 + std::exp(-eta[i])));
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
        }
        Eigen::VectorXd grad = X.transpose() * (y - prob);
        grad.array() -= l2 * penalty_mask.array() * fit.beta.array();
        fit.iterations = iter;
        if (grad.cwiseAbs().maxCoeff() < tol) {
            fit.converged = true;
            hess = X.transpose() * w.asDiagonal() * X;
            hess.diagonal().array() += l2 * penalty_mask.array();
            fit.cov = hess.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
            fit.loglik = ll;
            break;
        }
        hess = X.transpose() * w.asDiagonal() * X;
        hess.diagonal().array() += l2 * penalty_mask.array();
        const Eigen::VectorXd delta = hess.ldlt().solve(grad);

        // step halving keeps the penalized log-likelihood monotone; the
        // acceptance margin scales with |ll| so rounding noise in the
        // objective cannot reject the final full Newton steps
        const double noise = 1e-12 * (1.0 + std::abs(ll));
        double step = 1.0;
        Eigen::VectorXd candidate;
        double cand_ll = ll;
        for (int h = 0; h < 30; ++h) {
            candidate = fit.beta + step * delta;
            cand_ll = penalized_loglik(X, y, candidate, l2, penalty_mask);
            if (cand_ll >= ll - noise) break;
            step *= 0.5;
        }
        fit.beta = candidate;
        ll = cand_ll;
    }
    if (!fit.converged) {
        const Eigen::VectorXd eta = X * fit.beta;
        Eigen::VectorXd prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = clamp_prob(1.0 / (1.0 + std::exp(-eta[i])));
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
        }
        hess = X.transpose() * w.asDiagonal() * X;
        hess.diagonal().array() += l2 * penalty_mask.array();
        fit.cov = hess.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
        fit.loglik = ll;
    }

    // Diverging coefficients signal (quasi-)complete separation when the
    // likelihood is unpenalized.
    const double max_abs = fit.beta.cwiseAbs().maxCoeff();
    bool perfect = true;
    const Eigen::VectorXd eta = X * fit.beta;
    for (Eigen::Index i = 0; i < n && perfect; ++i) {
        const double prob = 1.0 / (1.0 + std::exp(-eta[i]));
        if (std::abs(y[i] - prob) > 1e-6) perfect = false;
    }
    if (l2 == 0.0 && (max_abs > 15.0 || perfect)) fit.separation = true;
    return fit;
}

CountFeaturizer CountFeaturizer::build(const Vocabulary& vocab, const AnchorSpec& anchor) {
    CountFeaturizer f;
    f.feature_codes.push_back("[UNK]");
    f.token_ids.push_back(Vocabulary::kUnk);
    for (int id = 4; id < vocab.size(); ++id) {
        const std::string& code = vocab.id_to_code[id];
        if (anchor.matches(code)) continue;
        f.feature_codes.push_back(code);
        f.token_ids.push_back(id);
    }
    return f;
}

Eigen::MatrixXd CountFeaturizer::counts(const std::vector<PatientRecord>& records,
                                        const Vocabulary& vocab) const {
    std::vector<int> id_to_col(vocab.size(), -1);
    for (size_t c = 0; c < token_ids.size(); ++c) id_to_col[token_ids[c]] = static_cast<int>(c);

    Eigen::MatrixXd X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(records.size()),
                                              static_cast<Eigen::Index>(token_ids.size()));
    for (size_t i = 0; i < records.size(); ++i) {
        for (const auto& v : records[i].visits)
            for (const auto& code : v) {
                const int col = id_to_col[vocab.token_id(code)];
                if (col >= 0) X(static_cast<Eigen::Index>(i), col) += 1.0;
            }
    }
    return X;
}

void StandardScaler::fit(const Eigen::MatrixXd& X) {
    mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mean.transpose();
    stddev = (centered.array().square().colwise().sum() / static_cast<double>(X.rows()))
                 .sqrt()
                 .matrix();
    for (Eigen::Index j = 0; j < stddev.size(); ++j)
        if (stddev[j] < 1e-12) stddev[j] = 1.0;
}

Eigen::MatrixXd StandardScaler::transform(const Eigen::MatrixXd& X) const {
    return (X.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
}

std::vector<double> LogisticModel::z_scores() const {
    std::vector<double> z(coef.size());
    for (Eigen::Index j = 0; j < coef.size(); ++j) z[j] = coef[j] / se[j];
    return z;
}

LogisticModel train_logistic(const Eigen::MatrixXd& features, const std::vector<uint8_t>& labels,
                             double l2, double tol, int max_iter) {
    if (static_cast<size_t>(features.rows()) != labels.size())
        throw std::invalid_argument("train_logistic: size mismatch");
    if (!features.allFinite())
        throw std::invalid_argument("train_logistic: non-finite features");

    const Eigen::Index n = features.rows(), d = features.cols();
    Eigen::MatrixXd X(n, d + 1);
    X.col(0).setOnes();
    X.rightCols(d) = features;
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[i] ? 1.0 : 0.0;
    Eigen::VectorXd penalty_mask = Eigen::VectorXd::Ones(d + 1);
    penalty_mask[0] = 0.0;  // intercept unpenalized

    const LogitFit fit = fit_logit_newton(X, y, l2, penalty_mask, tol, max_iter);

    LogisticModel model;
    model.intercept = fit.beta[0];
    model.coef = fit.beta.tail(d);
    model.converged = fit.converged;
    model.se.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) model.se[j] = std::sqrt(fit.cov(j + 1, j + 1));
    model.params = {l2, tol, max_iter};
    return model;
}

LogisticModel train_anchor_logistic(const std::vector<PatientRecord>& records,
                                    const AnchorLabel& labels, const Vocabulary& vocab,
                                    const AnchorSpec& anchor, const LogisticParams& params,
                                    const std::vector<size_t>& train_idx) {
    if (train_idx.empty()) throw std::invalid_argument("train_anchor_logistic: empty split");

    CountFeaturizer feat = CountFeaturizer::build(vocab, anchor);
    const Eigen::MatrixXd all_counts = feat.counts(records, vocab);

    Eigen::MatrixXd train_counts(static_cast<Eigen::Index>(train_idx.size()), all_counts.cols());
    std::vector<uint8_t> train_labels(train_idx.size());
    for (size_t r = 0; r < train_idx.size(); ++r) {
        train_counts.row(static_cast<Eigen::Index>(r)) =
            all_counts.row(static_cast<Eigen::Index>(train_idx[r]));
        train_labels[r] = labels.s[train_idx[r]];
    }

    StandardScaler scaler;
    scaler.fit(train_counts);

    LogisticModel model = train_logistic(scaler.transform(train_counts), train_labels,
                                         params.l2, params.tol, params.max_iter);
    model.scaler = scaler;
    model.featurizer = feat;
    model.vocab_hash = vocab.hash();
    model.params = params;
    return model;
}

std::vector<double> predict_logistic(const LogisticModel& model,
                                     const std::vector<PatientRecord>& records,
                                     const Vocabulary& vocab) {
    if (model.vocab_hash != 0 && model.vocab_hash != vocab.hash())
        throw std::runtime_error("predict_logistic: vocabulary does not match the trained model");
    if (records.empty()) return {};
    const Eigen::MatrixXd X = model.scaler.transform(model.featurizer.counts(records, vocab));
    const Eigen::VectorXd eta = (X * model.coef).array() + model.intercept;
    std::vector<double> out(records.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = 1.0 / (1.0 + std::exp(-eta[static_cast<Eigen::Index>(i)]));
    return out;
}

std::string save_logistic(const LogisticModel& model) {
    nlohmann::json j;
    j["kind"] = "anchor-lr";
    j["vocab_hash"] = model.vocab_hash;
    j["l2"] = model.params.l2;
    j["tol"] = model.params.tol;
    j["max_iter"] = model.params.max_iter;
    j["converged"] = model.converged;
    j["intercept"] = model.intercept;
    j["feature_codes"] = model.featurizer.feature_codes;
    j["token_ids"] = model.featurizer.token_ids;
    j["coef"] = std::vector<double>(model.coef.data(), model.coef.data() + model.coef.size());
    j["se"] = std::vector<double>(model.se.data(), model.se.data() + model.se.size());
    j["scaler_mean"] = std::vector<double>(model.scaler.mean.data(),
                                           model.scaler.mean.data() + model.scaler.mean.size());
    j["scaler_std"] = std::vector<double>(model.scaler.stddev.data(),
                                          model.scaler.stddev.data() + model.scaler.stddev.size());
    return j.dump(2);
}

LogisticModel load_logistic(const std::string& text, const Vocabulary& vocab) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("kind") != "anchor-lr") throw std::runtime_error("load_logistic: wrong model kind");
    LogisticModel model;
    model.vocab_hash = j.at("vocab_hash").get<uint64_t>();
    if (model.vocab_hash != vocab.hash())
        throw std::runtime_error("load_logistic: vocabulary hash mismatch");
    model.params.l2 = j.at("l2").get<double>();
    model.params.tol = j.at("tol").get<double>();
    model.params.max_iter = j.at("max_iter").get<int>();
    model.converged = j.at("converged").get<bool>();
    model.intercept = j.at("intercept").get<double>();
    model.featurizer.feature_codes = j.at("feature_codes").get<std::vector<std::string>>();
    model.featurizer.token_ids = j.at("token_ids").get<std::vector<int>>();
    auto coef = j.at("coef").get<std::vector<double>>();
    model.coef = Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size()));
    auto se = j.at("se").get<std::vector<double>>();
    model.se = Eigen::Map<Eigen::VectorXd>(se.data(), static_cast<Eigen::Index>(se.size()));
    auto mean = j.at("scaler_mean").get<std::vector<double>>();
    model.scaler.mean = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    auto sd = j.at("scaler_std").get<std::vector<double>>();
    model.scaler.stddev = Eigen::Map<Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    return model;
}

}  // namespace anchorpheno
