#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "anchorpheno/cohort.hpp"
#include "anchorpheno/gwas.hpp"

namespace ap = anchorpheno;

namespace {

Eigen::VectorXd random_dosage(size_t n, double maf, std::mt19937_64& rng) {
    std::binomial_distribution<int> binom(2, maf);
    Eigen::VectorXd g(n);
    for (size_t i = 0; i < n; ++i) g(static_cast<Eigen::Index>(i)) = binom(rng);
    return g;
}

// Kolmogorov-Smirnov distance to the uniform distribution.
double ks_uniform(std::vector<double> p) {
    std::sort(p.begin(), p.end());
    const double n = static_cast<double>(p.size());
    double d = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        d = std::max(d, (i + 1.0) / n - p[i]);
        d = std::max(d, p[i] - i / n);
    }
    return d;
}

ap::GenotypeMatrix two_column_matrix(const Eigen::VectorXi& a, const Eigen::VectorXi& b) {
    ap::GenotypeMatrix g;
    g.dosage.resize(a.size(), 2);
    g.dosage.col(0) = a;
    g.dosage.col(1) = b;
    for (int i = 0; i < a.size(); ++i) g.patient_ids.push_back("p" + std::to_string(i));
    g.variants.push_back({"v0000", 0.3, true, 0.5, 0});
    g.variants.push_back({"v0001", 0.3, false, 0.0, 0});
    return g;
}

const Eigen::MatrixXd kNoCov = Eigen::MatrixXd(0, 0);

}  // namespace

TEST_CASE("linear scan matches the normal equations") {
    std::mt19937_64 rng(301);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 150;
    for (int rep = 0; rep < 10; ++rep) {
        const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
        Eigen::MatrixXd C(n, 2);
        Eigen::VectorXd y(n);
        for (int i = 0; i < n; ++i) {
            C(i, 0) = gauss(rng);
            C(i, 1) = gauss(rng);
            y(i) = 0.4 * g(i) + 0.3 * C(i, 0) + gauss(rng);
        }
        const ap::AssociationResult res = ap::linear_assoc(g, y, C, "v");
        REQUIRE(res.ok);

        Eigen::MatrixXd X(n, 4);
        X.col(0).setOnes();
        X.col(1) = g;
        X.col(2) = C.col(0);
        X.col(3) = C.col(1);
        const Eigen::MatrixXd xtx = X.transpose() * X;
        const Eigen::VectorXd beta = xtx.ldlt().solve(X.transpose() * y);
        const Eigen::VectorXd resid = y - X * beta;
        const double sigma2 = resid.squaredNorm() / static_cast<double>(n - 4);
        const Eigen::MatrixXd cov = sigma2 * xtx.inverse();
        const double se = std::sqrt(cov(1, 1));

        CHECK(std::abs(res.beta - beta(1)) < 1e-8 * std::max(1.0, std::abs(beta(1))));
        CHECK(std::abs(res.se - se) < 1e-8 * se);
        CHECK(std::abs(res.stat - beta(1) / se) < 1e-6);
        CHECK(res.n_used == n);
        CHECK(res.test == "linear");
    }
}

TEST_CASE("null linear p-values are uniform") {
    std::mt19937_64 rng(303);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 1000;
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = gauss(rng);
    std::vector<double> ps;
    for (int v = 0; v < 400; ++v) {
        const Eigen::VectorXd g = random_dosage(n, 0.25, rng);
        const ap::AssociationResult res = ap::linear_assoc(g, y, kNoCov, "v");
        if (res.ok) ps.push_back(res.p);
    }
    REQUIRE(ps.size() > 390);
    CHECK(ks_uniform(ps) < 0.08);
}

TEST_CASE("a planted linear effect is recovered with a tiny p-value") {
    std::mt19937_64 rng(307);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 2000;
    const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = 0.5 * g(i) + gauss(rng);
    const ap::AssociationResult res = ap::linear_assoc(g, y, kNoCov, "v");
    REQUIRE(res.ok);
    CHECK(res.beta > 0.45);
    CHECK(res.beta < 0.55);
    CHECK(res.p < 1e-8);
}

TEST_CASE("constant phenotype yields a flagged row, not a throw") {
    std::mt19937_64 rng(311);
    const Eigen::VectorXd g = random_dosage(200, 0.3, rng);
    const Eigen::VectorXd y = Eigen::VectorXd::Constant(200, 1.0);
    const ap::AssociationResult res = ap::linear_assoc(g, y, kNoCov, "v");
    CHECK(!res.ok);
    CHECK(res.beta == 0.0);
    CHECK(!std::isfinite(res.p));
    CHECK(res.note.find("constant") != std::string::npos);
}

TEST_CASE("affine phenotype rescaling leaves the test untouched") {
    std::mt19937_64 rng(313);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 500;
    const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = 0.2 * g(i) + gauss(rng);

    const ap::AssociationResult base = ap::linear_assoc(g, y, kNoCov, "v");
    // doubling is exact in floating point, so the statistic matches bitwise
    const ap::AssociationResult twice = ap::linear_assoc(g, 2.0 * y, kNoCov, "v");
    CHECK(twice.stat == base.stat);
    CHECK(twice.p == base.p);
    CHECK(twice.beta == 2.0 * base.beta);

    const Eigen::VectorXd shifted = (0.5 * y).array() + 0.25;
    const ap::AssociationResult other = ap::linear_assoc(g, shifted, kNoCov, "v");
    CHECK(std::abs(other.stat - base.stat) < 1e-10);
    CHECK(std::abs(other.p - base.p) < 1e-10);
}

TEST_CASE("duplicated covariate columns are a rank error") {
    std::mt19937_64 rng(317);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 100;
    const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
    Eigen::MatrixXd C(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        C(i, 0) = gauss(rng);
        C(i, 1) = C(i, 0);
        y(i) = gauss(rng);
    }
    CHECK_THROWS_AS(ap::linear_assoc(g, y, C, "v"), std::invalid_argument);
}

TEST_CASE("logistic scan flags separation instead of throwing") {
    Eigen::VectorXd g(20), y(20);
    for (int i = 0; i < 20; ++i) {
        g(i) = i < 10 ? 0.0 : 2.0;
        y(i) = i < 10 ? 0.0 : 1.0;
    }
    const ap::AssociationResult res = ap::logistic_assoc(g, y, kNoCov, "v");
    CHECK(!res.ok);
    CHECK(!res.note.empty());
    CHECK(res.test == "logistic");
}

TEST_CASE("logistic scan rejects non-binary phenotypes and finds planted effects") {
    std::mt19937_64 rng(331);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 2000;
    const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        const double eta = -1.0 + 0.8 * g(i);
        y(i) = u(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    }
    const ap::AssociationResult res = ap::logistic_assoc(g, y, kNoCov, "v");
    REQUIRE(res.ok);
    CHECK(res.beta > 0.6);
    CHECK(res.beta < 1.0);
    CHECK(res.p < 1e-8);

    Eigen::VectorXd bad = y;
    bad(0) = 0.5;
    CHECK_THROWS_AS(ap::logistic_assoc(g, bad, kNoCov, "v"), std::invalid_argument);
}

TEST_CASE("null logistic p-values are uniform") {
    std::mt19937_64 rng(337);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 800;
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = u(rng) < 0.4 ? 1.0 : 0.0;
    std::vector<double> ps;
    for (int v = 0; v < 300; ++v) {
        const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
        const ap::AssociationResult res = ap::logistic_assoc(g, y, kNoCov, "v");
        if (res.ok) ps.push_back(res.p);
    }
    REQUIRE(ps.size() > 290);
    CHECK(ks_uniform(ps) < 0.08);
}

TEST_CASE("null scans stay near the nominal false positive rate") {
    std::mt19937_64 rng(341);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int n = 300;
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y(i) = gauss(rng);
    int below = 0, total = 0;
    for (int v = 0; v < 2000; ++v) {
        const Eigen::VectorXd g = random_dosage(n, 0.3, rng);
        const ap::AssociationResult res = ap::linear_assoc(g, y, kNoCov, "v");
        if (!res.ok) continue;
        ++total;
        below += res.p < 0.05;
    }
    const double frac = static_cast<double>(below) / static_cast<double>(total);
    CHECK(frac > 0.03);
    CHECK(frac < 0.07);
}

TEST_CASE("ld r2 is one for identical and complementary columns and rejects constants") {
    std::mt19937_64 rng(347);
    Eigen::VectorXi a(200);
    std::binomial_distribution<int> binom(2, 0.4);
    for (int i = 0; i < 200; ++i) a(i) = binom(rng);

    CHECK(ap::ld_r2(two_column_matrix(a, a), "v0000", "v0001") ==
          doctest::Approx(1.0).epsilon(1e-12));

    Eigen::VectorXi comp = 2 - a.array();
    CHECK(ap::ld_r2(two_column_matrix(a, comp), "v0000", "v0001") ==
          doctest::Approx(1.0).epsilon(1e-12));

    const Eigen::VectorXi flat = Eigen::VectorXi::Constant(200, 1);
    CHECK_THROWS_AS(ap::ld_r2(two_column_matrix(a, flat), "v0000", "v0001"), std::invalid_argument);
    CHECK_THROWS(ap::ld_r2(two_column_matrix(a, a), "v0000", "missing"));
}

TEST_CASE("ld expansion takes a single step and matches brute force") {
    ap::GeneratorConfig cfg;
    cfg.n_patients = 400;
    cfg.n_variants = 12;
    cfg.ld_block_size = 3;
    cfg.ld_mutation_rate = 0.15;
    cfg.causal_effects = {{0, 0.5}};
    cfg.comorbidities = ap::default_comorbidities(2, 1.0);
    cfg.min_codes = 2;
    const ap::GenotypeMatrix geno = ap::generate_cohort(cfg, 53).genotypes;

    CHECK(ap::ld_expand(geno, {}, 0.5).empty());

    const std::set<std::string> seeds = {"v0000", "v0007"};
    for (double thr : {0.2, 0.5, 0.9}) {
        const std::set<std::string> got = ap::ld_expand(geno, seeds, thr);
        std::set<std::string> want = seeds;
        for (const auto& v : geno.variants) {
            for (const auto& s : seeds) {
                if (v.id == s) continue;
                bool constant = true;
                for (int i = 1; i < geno.dosage.rows(); ++i)
                    if (geno.dosage(i, geno.variant_index(v.id)) !=
                        geno.dosage(0, geno.variant_index(v.id))) {
                        constant = false;
                        break;
                    }
                if (constant) continue;
                if (ap::ld_r2(geno, v.id, s) >= thr) want.insert(v.id);
            }
        }
        CHECK(got == want);
    }
}

TEST_CASE("catalog matching counts LD-reachable causal entries") {
    std::mt19937_64 rng(349);
    std::binomial_distribution<int> binom(2, 0.3);
    std::binomial_distribution<int> other(2, 0.4);
    Eigen::VectorXi a(500), b(500);
    for (int i = 0; i < 500; ++i) {
        a(i) = binom(rng);
        b(i) = other(rng);
    }

    ap::TruthCatalog catalog;
    catalog.causal_ids = {"v0000"};

    // exact hit
    const ap::GenotypeMatrix same = two_column_matrix(a, b);
    CHECK(ap::match_catalog(same, catalog, {"v0000"}, 0.5).proportion == 1.0);
    // independent significant variant cannot match
    CHECK(ap::match_catalog(same, catalog, {"v0001"}, 0.5).proportion == 0.0);
    // a perfect LD twin matches through the expansion
    const ap::GenotypeMatrix twins = two_column_matrix(a, a);
    const ap::CatalogMatch m = ap::match_catalog(twins, catalog, {"v0001"}, 0.5);
    CHECK(m.proportion == 1.0);
    CHECK(m.matched == 1);
    CHECK(m.total == 1);

    ap::TruthCatalog empty_catalog;
    CHECK(ap::match_catalog(same, empty_catalog, {"v0000"}, 0.5).proportion == 0.0);
}

TEST_CASE("whole-matrix scans honor alpha and report per-variant failures") {
    ap::GeneratorConfig cfg;
    cfg.n_patients = 1200;
    cfg.n_variants = 20;
    cfg.ld_block_size = 4;
    cfg.ld_mutation_rate = 0.1;
    cfg.causal_effects = {{0, 0.9}};
    cfg.prevalence = 0.3;
    cfg.comorbidities = ap::default_comorbidities(3, 1.0);
    cfg.min_codes = 2;
    const ap::Cohort coh = ap::generate_cohort(cfg, 59);

    std::vector<double> pheno(coh.truth.y.begin(), coh.truth.y.end());

    ap::GwasOptions opt;
    opt.alpha = 1e-4;
    const ap::GwasResult res = ap::run_gwas(coh.genotypes, pheno, coh.covariates, opt);
    CHECK(res.test == "logistic");  // binary phenotype is auto-detected
    REQUIRE(res.rows.size() == 20);

    // the planted variant (or an LD twin) must be recovered
    const std::set<std::string> sig(res.significant.begin(), res.significant.end());
    const ap::CatalogMatch m =
        ap::match_catalog(coh.genotypes, ap::TruthCatalog::from_genotypes(coh.genotypes), sig, 0.5);
    CHECK(m.proportion == 1.0);

    CHECK(std::is_sorted(res.significant.begin(), res.significant.end()));

    // alpha monotonicity: tightening alpha can only shrink the set
    ap::GwasOptions tight = opt;
    tight.alpha = 1e-12;
    const ap::GwasResult res2 = ap::run_gwas(coh.genotypes, pheno, coh.covariates, tight);
    for (const auto& id : res2.significant)
        CHECK(std::find(res.significant.begin(), res.significant.end(), id) !=
              res.significant.end());

    // alpha 1 keeps every finite-p row, alpha 0 keeps none
    ap::GwasOptions all = opt;
    all.alpha = 1.0;
    size_t finite = 0;
    for (const auto& row : res.rows) finite += (row.ok && std::isfinite(row.p) && row.p < 1.0);
    CHECK(ap::run_gwas(coh.genotypes, pheno, coh.covariates, all).significant.size() == finite);
    ap::GwasOptions none = opt;
    none.alpha = 0.0;
    CHECK(ap::run_gwas(coh.genotypes, pheno, coh.covariates, none).significant.empty());

    // force the linear path on the same binary phenotype
    ap::GwasOptions lin = opt;
    lin.force_linear = true;
    CHECK(ap::run_gwas(coh.genotypes, pheno, coh.covariates, lin).test == "linear");
}

TEST_CASE("a monomorphic variant becomes a flagged row inside a scan") {
    std::mt19937_64 rng(61);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXi a(300);
    std::binomial_distribution<int> binom(2, 0.3);
    for (int i = 0; i < 300; ++i) a(i) = binom(rng);
    ap::GenotypeMatrix geno = two_column_matrix(a, Eigen::VectorXi::Constant(300, 2));

    ap::CovariateTable cov;
    std::vector<double> pheno;
    for (int i = 0; i < 300; ++i) {
        cov.patient_ids.push_back(geno.patient_ids[i]);
        cov.sex.push_back(i % 2);
        cov.age.push_back(50.0 + (i % 20));
        pheno.push_back(gauss(rng));
    }
    cov.pcs = Eigen::MatrixXd::Zero(300, 10);

    const ap::GwasResult res = ap::run_gwas(geno, pheno, cov, ap::GwasOptions{});
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].ok);
    CHECK(!res.rows[1].ok);
    CHECK(!std::isfinite(res.rows[1].p));

    // degenerate covariates fail before any variant is touched
    ap::CovariateTable broken = cov;
    for (int i = 0; i < 300; ++i) broken.age[i] = static_cast<double>(broken.sex[i]);
    CHECK_THROWS_WITH_AS(ap::run_gwas(geno, pheno, broken, ap::GwasOptions{}),
                         doctest::Contains("covariate"), std::invalid_argument);
}

TEST_CASE("scan rows survive the text format round trip") {
    std::vector<ap::AssociationResult> rows(2);
    rows[0] = {"v0000", 0.123456789, 0.01, 12.3456789, 1.25e-31, "linear", 500, true, ""};
    rows[1] = {"v0001", 0.0, std::nan(""), std::nan(""), std::nan(""), "linear", 500, false,
               "constant phenotype"};
    const std::string text = ap::format_gwas_rows(rows);
    const auto back = ap::parse_gwas_rows(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].variant_id == "v0000");
    CHECK(back[0].beta == rows[0].beta);
    CHECK(back[0].p == rows[0].p);
    CHECK(back[0].ok);
    CHECK(!back[1].ok);
    CHECK(std::isnan(back[1].se));
    CHECK(back[1].note == "constant phenotype");
    CHECK_THROWS(ap::parse_gwas_rows("variant_id\tbeta\nv0\t1\n"));
}

TEST_CASE("the truth catalog lists exactly the causal variants") {
    ap::GeneratorConfig cfg;
    cfg.n_variants = 9;
    cfg.ld_block_size = 3;
    cfg.causal_effects = {{0, 0.4}, {4, 0.6}};
    cfg.n_patients = 100;
    cfg.comorbidities = ap::default_comorbidities(2, 1.0);
    cfg.min_codes = 2;
    const ap::GenotypeMatrix geno = ap::generate_cohort(cfg, 67).genotypes;
    const ap::TruthCatalog cat = ap::TruthCatalog::from_genotypes(geno);
    CHECK(cat.causal_ids == std::vector<std::string>{"v0000", "v0004"});
}
