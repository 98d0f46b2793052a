#include "anchorpheno/gwas.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "anchorpheno/logistic.hpp"
#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

namespace {

// Design matrix: [1, dosage, covariates]; the dosage coefficient sits at
// column 1.
Eigen::MatrixXd build_design(const Eigen::VectorXd& dosage, const Eigen::MatrixXd& covariates) {
    const Eigen::Index n = dosage.size();
    Eigen::MatrixXd X(n, 2 + covariates.cols());
    X.col(0).setOnes();
    X.col(1) = dosage;
    if (covariates.cols() > 0) X.rightCols(covariates.cols()) = covariates;
    return X;
}

void check_assoc_inputs(const Eigen::VectorXd& dosage, const Eigen::VectorXd& phenotype,
                        const Eigen::MatrixXd& covariates) {
    if (dosage.size() != phenotype.size())
        throw std::invalid_argument("association: dosage/phenotype length mismatch");
    if (covariates.rows() > 0 && covariates.rows() != dosage.size())
        throw std::invalid_argument("association: covariate row count mismatch");
    if (!dosage.allFinite() || !phenotype.allFinite() || !covariates.allFinite())
        throw std::invalid_argument("association: non-finite inputs");
}

}  // namespace

AssociationResult linear_assoc(const Eigen::VectorXd& dosage, const Eigen::VectorXd& phenotype,
                               const Eigen::MatrixXd& covariates, const std::string& variant_id) {
    check_assoc_inputs(dosage, phenotype, covariates);
    const Eigen::MatrixXd X = build_design(dosage, covariates);
    const Eigen::Index n = X.rows(), p = X.cols();
    if (n <= p) throw std::invalid_argument("linear_assoc: need more samples than parameters");
    if ((phenotype.array() - phenotype[0]).abs().maxCoeff() == 0.0) {
        // zero-variance response: the fit is exact and the error variance
        // collapses, so the test is undefined
        AssociationResult res;
        res.variant_id = variant_id;
        res.test = "linear";
        res.n_used = static_cast<int>(n);
        res.beta = 0.0;
        res.se = std::numeric_limits<double>::quiet_NaN();
        res.stat = std::numeric_limits<double>::quiet_NaN();
        res.p = std::numeric_limits<double>::quiet_NaN();
        res.ok = false;
        res.note = "constant phenotype";
        return res;
    }

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    // duplicated columns leave pivots at accumulation-noise level (~1e-14),
    // above Eigen's default rank threshold; use a coarser relative cutoff
    qr.setThreshold(1e-10);
    if (qr.rank() < p)
        throw std::invalid_argument("linear_assoc: rank-deficient design (variant " + variant_id +
                                    ")");
    const Eigen::VectorXd beta = qr.solve(phenotype);
    const Eigen::VectorXd resid = phenotype - X * beta;
    const double dof = static_cast<double>(n - p);
    const double sigma2 = resid.squaredNorm() / dof;

    // (X'X)^-1 from the QR factors: X'X = R'R up to the column permutation.
    const Eigen::MatrixXd R =
        qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv = R.inverse();
    Eigen::MatrixXd xtx_inv = Rinv * Rinv.transpose();
    xtx_inv = qr.colsPermutation() * xtx_inv * qr.colsPermutation().transpose();

    AssociationResult res;
    res.variant_id = variant_id;
    res.test = "linear";
    res.n_used = static_cast<int>(n);
    res.beta = beta[1];
    res.se = std::sqrt(sigma2 * xtx_inv(1, 1));
    if (!(res.se > 0.0) || !std::isfinite(res.se)) {
        res.ok = false;
        res.note = "zero or non-finite standard error";
        res.se = std::numeric_limits<double>::quiet_NaN();
        res.stat = std::numeric_limits<double>::quiet_NaN();
        res.p = std::numeric_limits<double>::quiet_NaN();
        return res;
    }
    res.stat = res.beta / res.se;
    const boost::math::students_t dist(dof);
    res.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(res.stat)));
    return res;
}

AssociationResult logistic_assoc(const Eigen::VectorXd& dosage, const Eigen::VectorXd& phenotype,
                                 const Eigen::MatrixXd& covariates,
                                 const std::string& variant_id) {
    check_assoc_inputs(dosage, phenotype, covariates);
    for (Eigen::Index i = 0; i < phenotype.size(); ++i)
        if (phenotype[i] != 0.0 && phenotype[i] != 1.0)
            throw std::invalid_argument("logistic_assoc: phenotype must be 0/1");

    const Eigen::MatrixXd X = build_design(dosage, covariates);
    const Eigen::VectorXd penalty_mask = Eigen::VectorXd::Zero(X.cols());

    AssociationResult res;
    res.variant_id = variant_id;
    res.test = "logistic";
    res.n_used = static_cast<int>(X.rows());

    const LogitFit fit = fit_logit_newton(X, phenotype, 0.0, penalty_mask, 1e-8, 50);
    res.beta = fit.beta[1];
    res.se = std::sqrt(fit.cov(1, 1));
    if (fit.separation || !std::isfinite(res.se) || !(res.se > 0.0)) {
        res.ok = false;
        res.note = fit.separation ? "separation detected" : "unstable standard error";
        res.stat = std::numeric_limits<double>::quiet_NaN();
        res.p = std::numeric_limits<double>::quiet_NaN();
        return res;
    }
    res.stat = res.beta / res.se;
    const boost::math::normal dist;
    res.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(res.stat)));
    if (!fit.converged) {
        res.ok = false;
        res.note = "newton solver did not converge";
    }
    return res;
}

GwasResult run_gwas(const GenotypeMatrix& genotypes, const std::vector<double>& phenotype,
                    const CovariateTable& covariates, const GwasOptions& options) {
    const size_t n = genotypes.patient_ids.size();
    if (phenotype.size() != n)
        throw std::invalid_argument("run_gwas: phenotype length does not match genotypes");
    if (covariates.patient_ids != genotypes.patient_ids)
        throw std::invalid_argument("run_gwas: covariate patients do not match genotypes");
    if (options.n_pcs < 0 || options.n_pcs > covariates.pcs.cols())
        throw std::invalid_argument("run_gwas: invalid number of covariate PCs");
    if (!(options.alpha >= 0.0 && options.alpha <= 1.0))
        throw std::invalid_argument("run_gwas: alpha must lie in [0, 1]");

    bool binary = true;
    for (double v : phenotype)
        if (v != 0.0 && v != 1.0) {
            binary = false;
            break;
        }
    const bool use_logistic = binary && !options.force_linear;

    const int n_cov = (options.use_sex_age ? 2 : 0) + options.n_pcs;
    Eigen::MatrixXd C(static_cast<Eigen::Index>(n), n_cov);
    int col = 0;
    if (options.use_sex_age) {
        for (size_t i = 0; i < n; ++i) {
            C(static_cast<Eigen::Index>(i), 0) = covariates.sex[i];
            C(static_cast<Eigen::Index>(i), 1) = covariates.age[i];
        }
        col = 2;
    }
    for (int j = 0; j < options.n_pcs; ++j, ++col)
        for (size_t i = 0; i < n; ++i)
            C(static_cast<Eigen::Index>(i), col) = covariates.pcs(static_cast<Eigen::Index>(i), j);

    // The covariate-only design must itself be full rank, otherwise every
    // variant fails identically and the run is a configuration error.
    {
        Eigen::MatrixXd base(static_cast<Eigen::Index>(n), 1 + n_cov);
        base.col(0).setOnes();
        if (n_cov > 0) base.rightCols(n_cov) = C;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(base);
        qr.setThreshold(1e-10);
        if (qr.rank() < base.cols())
            throw std::invalid_argument(
                "run_gwas: covariate design is rank deficient; drop the redundant covariate");
    }

    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = phenotype[i];

    GwasResult out;
    out.alpha = options.alpha;
    out.test = use_logistic ? "logistic" : "linear";
    out.rows.reserve(genotypes.variants.size());
    for (size_t v = 0; v < genotypes.variants.size(); ++v) {
        const Eigen::VectorXd dosage =
            genotypes.dosage.col(static_cast<Eigen::Index>(v)).cast<double>();
        const std::string& vid = genotypes.variants[v].id;
        AssociationResult row;
        try {
            row = use_logistic ? logistic_assoc(dosage, y, C, vid)
                               : linear_assoc(dosage, y, C, vid);
        } catch (const std::exception& e) {
            row.variant_id = vid;
            row.test = use_logistic ? "logistic" : "linear";
            row.n_used = static_cast<int>(n);
            row.ok = false;
            row.note = e.what();
            row.beta = std::numeric_limits<double>::quiet_NaN();
            row.se = std::numeric_limits<double>::quiet_NaN();
            row.stat = std::numeric_limits<double>::quiet_NaN();
            row.p = std::numeric_limits<double>::quiet_NaN();
        }
        if (row.ok && row.p < options.alpha) out.significant.push_back(vid);
        out.rows.push_back(std::move(row));
    }
    std::sort(out.significant.begin(), out.significant.end());
    return out;
}

namespace {

// r^2 with monomorphic columns treated as carrying no LD signal; the public
// ld_r2 rejects them instead.
double r2_or_zero(const GenotypeMatrix& genotypes, int ia, int ib) {
    const Eigen::VectorXd x = genotypes.dosage.col(ia).cast<double>();
    const Eigen::VectorXd y = genotypes.dosage.col(ib).cast<double>();
    const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
    const double vx = xc.squaredNorm(), vy = yc.squaredNorm();
    if (vx == 0.0 || vy == 0.0) return 0.0;
    const double cov = xc.dot(yc);
    return (cov * cov) / (vx * vy);
}

}  // namespace

double ld_r2(const GenotypeMatrix& genotypes, const std::string& a, const std::string& b) {
    const int ia = genotypes.variant_index(a), ib = genotypes.variant_index(b);
    if (ia < 0 || ib < 0) throw std::invalid_argument("ld_r2: unknown variant id");
    auto constant = [&](int j) {
        const auto col = genotypes.dosage.col(j);
        return (col.array() == col(0)).all();
    };
    if (constant(ia) || constant(ib))
        throw std::invalid_argument("ld_r2: constant dosage column");
    return r2_or_zero(genotypes, ia, ib);
}

std::set<std::string> ld_expand(const GenotypeMatrix& genotypes,
                                const std::set<std::string>& seeds, double r2_threshold) {
    std::set<std::string> out = seeds;
    std::vector<int> seed_cols;
    for (const auto& s : seeds) {
        const int idx = genotypes.variant_index(s);
        if (idx < 0) throw std::invalid_argument("ld_expand: unknown variant id " + s);
        seed_cols.push_back(idx);
    }
    for (size_t v = 0; v < genotypes.variants.size(); ++v) {
        if (out.count(genotypes.variants[v].id)) continue;
        for (int sc : seed_cols) {
            if (r2_or_zero(genotypes, static_cast<int>(v), sc) > r2_threshold) {
                out.insert(genotypes.variants[v].id);
                break;
            }
        }
    }
    return out;
}

TruthCatalog TruthCatalog::from_genotypes(const GenotypeMatrix& genotypes) {
    TruthCatalog cat;
    cat.causal_ids = genotypes.causal_ids();
    return cat;
}

CatalogMatch match_catalog(const GenotypeMatrix& genotypes, const TruthCatalog& catalog,
                           const std::set<std::string>& significant, double r2_threshold) {
    CatalogMatch m;
    m.total = static_cast<int>(catalog.causal_ids.size());
    if (m.total == 0) return m;
    const std::set<std::string> sig_expanded = ld_expand(genotypes, significant, r2_threshold);
    for (const auto& cid : catalog.causal_ids) {
        const std::set<std::string> entry = ld_expand(genotypes, {cid}, r2_threshold);
        bool hit = false;
        for (const auto& e : entry)
            if (sig_expanded.count(e)) {
                hit = true;
                break;
            }
        if (hit) {
            ++m.matched;
            m.matched_ids.push_back(cid);
        }
    }
    m.proportion = static_cast<double>(m.matched) / static_cast<double>(m.total);
    return m;
}

std::string format_gwas_rows(const std::vector<AssociationResult>& rows) {
    std::ostringstream os;
    os << "variant_id\tbeta\tse\tstat\tp\ttest\tn\tok\tnote\n";
    for (const auto& r : rows) {
        os << r.variant_id << '\t' << format_double(r.beta) << '\t' << format_double(r.se) << '\t'
           << format_double(r.stat) << '\t' << format_double(r.p) << '\t' << r.test << '\t'
           << r.n_used << '\t' << (r.ok ? 1 : 0) << '\t' << r.note << '\n';
    }
    return os.str();
}

std::vector<AssociationResult> parse_gwas_rows(const std::string& text) {
    std::vector<AssociationResult> rows;
    std::istringstream is(text);
    std::string line;
    bool header = true;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto f = split(line, '\t');
        if (f.size() != 9)
            throw std::runtime_error("gwas rows: line " + std::to_string(line_no) +
                                     ": expected 9 fields, found " + std::to_string(f.size()));
        AssociationResult r;
        r.variant_id = f[0];
        r.beta = std::stod(f[1]);
        r.se = std::stod(f[2]);
        r.stat = std::stod(f[3]);
        r.p = std::stod(f[4]);
        r.test = f[5];
        r.n_used = std::stoi(f[6]);
        r.ok = f[7] == "1";
        r.note = f[8];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace anchorpheno
