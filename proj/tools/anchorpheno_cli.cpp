// Command-line driver for the anchor phenotyping toolkit.
//
// Workflow commands operate on a shared output directory:
//   synth   -> cohort.tsv (+ genotypes/variants/covariates/truth for liability cohorts)
//   train   -> model_<name>.json           (needs cohort.tsv)
//   score   -> phenotype_<name>.tsv        (needs cohort.tsv + model_<name>.json)
//   gwas    -> gwas_<name>.tsv             (needs genotypes + covariates + phenotype)
// Experiment commands run end to end from the config alone:
//   compare, noise-sweep, ablate, pipeline

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "anchorpheno/harness.hpp"
#include "anchorpheno/metrics.hpp"
#include "anchorpheno/tsv.hpp"

namespace ap = anchorpheno;
namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    uint64_t seed = 0;
    std::string out_dir = "out";
    std::string model;
    double alpha = -1.0;  // <0 means "not set on the command line"
    double r2 = -1.0;
};

void add_common(CLI::App* cmd, CommonArgs* a, bool with_model) {
    cmd->add_option("--config", a->config_path, "Experiment config (JSON)");
    cmd->add_option("--seed", a->seed, "Master seed")->capture_default_str();
    cmd->add_option("--out-dir", a->out_dir, "Output directory")->capture_default_str();
    if (with_model)
        cmd->add_option("--model", a->model,
                        "Model name: anchorbert, anchor-lr, pheprob, threshold-<k>");
    cmd->add_option("--alpha", a->alpha, "Significance threshold override");
    cmd->add_option("--r2", a->r2, "LD r^2 threshold override");
}

// Overrides are applied before hashing so derived outputs carry the hash of
// the effective configuration.
ap::ExperimentConfig effective_config(const CommonArgs& a) {
    ap::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = ap::load_experiment_config(a.config_path);
    if (a.alpha >= 0.0) cfg.alpha = a.alpha;
    if (a.r2 >= 0.0) cfg.r2_threshold = a.r2;
    cfg.validate();
    return cfg;
}

std::string at(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void require_file(const std::string& path, const std::string& hint) {
    if (!fs::exists(path))
        throw std::runtime_error("missing " + path + " (" + hint + ")");
}

struct LoadedCohort {
    std::vector<ap::PatientRecord> records;
    ap::Vocabulary vocab;
    ap::AnchorSpec anchor;
    ap::AnchorLabel observed;
};

LoadedCohort load_dir_cohort(const ap::ExperimentConfig& cfg, const std::string& dir) {
    LoadedCohort lc;
    const std::string path = at(dir, "cohort.tsv");
    require_file(path, "run `anchorpheno synth` first");
    lc.records = ap::load_cohort(path);
    lc.anchor = ap::anchor_of(cfg);
    lc.vocab = ap::build_vocabulary(lc.records, cfg.vocab_min_frequency, lc.anchor.codes);
    lc.observed = ap::label_anchor(lc.records, lc.anchor);
    return lc;
}

int cmd_synth(const CommonArgs& a) {
    const ap::ExperimentConfig cfg = effective_config(a);
    const ap::GeneratedCohort coh = ap::make_cohort(cfg, a.seed);
    fs::create_directories(a.out_dir);
    ap::write_text_file(at(a.out_dir, "cohort.tsv"), ap::save_cohort(coh.records));
    ap::write_text_file(at(a.out_dir, "truth.tsv"), ap::save_truth(coh.records, coh.truth));
    if (coh.has_genotypes) {
        ap::write_text_file(at(a.out_dir, "genotypes.tsv"), ap::save_genotypes(coh.genotypes));
        ap::write_text_file(at(a.out_dir, "variants.tsv"), ap::save_genotype_meta(coh.genotypes));
        ap::write_text_file(at(a.out_dir, "covariates.tsv"),
                            ap::save_covariates(coh.covariates));
    }
    std::cout << "synth\tpatients=" << coh.records.size() << "\tconfig_hash=" << cfg.hash()
              << "\n";
    return 0;
}

int cmd_train(const CommonArgs& a) {
    if (a.model.empty()) throw std::runtime_error("train: --model is required");
    int k = 0;
    if (ap::is_threshold_model(a.model, &k))
        throw std::runtime_error("train: threshold models have no trainable parameters");
    const ap::ExperimentConfig cfg = effective_config(a);
    const LoadedCohort lc = load_dir_cohort(cfg, a.out_dir);
    const ap::SplitIndices split = ap::split_indices(lc.records.size(), cfg.split, a.seed);
    const ap::ModelRun run = ap::run_model(a.model, lc.records, lc.observed, lc.observed,
                                           lc.vocab, lc.anchor, cfg, split, a.seed);
    ap::write_text_file(at(a.out_dir, "model_" + a.model + ".json"), run.model_json);
    std::cout << "train\tmodel=" << a.model << "\tconfig_hash=" << cfg.hash() << "\n";
    return 0;
}

int cmd_score(const CommonArgs& a) {
    if (a.model.empty()) throw std::runtime_error("score: --model is required");
    const ap::ExperimentConfig cfg = effective_config(a);
    const LoadedCohort lc = load_dir_cohort(cfg, a.out_dir);

    ap::PhenotypeVector pheno;
    int k = 0;
    if (ap::is_threshold_model(a.model, &k)) {
        pheno = ap::threshold_phenotype(lc.records, lc.anchor, k);
    } else {
        const std::string mpath = at(a.out_dir, "model_" + a.model + ".json");
        require_file(mpath, "run `anchorpheno train --model " + a.model + "` first");
        const std::string text = ap::read_text_file(mpath);
        std::vector<double> scores;
        if (a.model == "anchorbert") {
            const ap::TransformerModel m = ap::load_transformer(text, &lc.vocab);
            scores = ap::predict_transformer(m, lc.records, lc.vocab, lc.anchor);
        } else if (a.model == "anchor-lr") {
            const ap::LogisticModel m = ap::load_logistic(text, lc.vocab);
            scores = ap::predict_logistic(m, lc.records, lc.vocab);
        } else if (a.model == "pheprob") {
            const ap::PheprobModel m = ap::load_pheprob(text);
            std::vector<int> counts, totals;
            ap::pheprob_counts(lc.records, lc.anchor, &counts, &totals);
            scores = ap::pheprob_posteriors(m, counts, totals);
        } else {
            throw std::runtime_error("score: unknown model '" + a.model + "'");
        }
        if (a.model == "pheprob") {
            pheno.score = scores;
            pheno.kind = ap::PhenotypeKind::continuous;
        } else {
            pheno = ap::phenotype_from_scores(scores, lc.observed, cfg.phenotype_c);
        }
    }
    std::vector<std::string> ids;
    ids.reserve(lc.records.size());
    for (const auto& r : lc.records) ids.push_back(r.patient_id);
    ap::write_text_file(at(a.out_dir, "phenotype_" + a.model + ".tsv"),
                        ap::save_phenotype(ids, pheno));
    std::cout << "score\tmodel=" << a.model << "\tpatients=" << ids.size() << "\n";
    return 0;
}

int cmd_gwas(const CommonArgs& a) {
    if (a.model.empty()) throw std::runtime_error("gwas: --model is required");
    const ap::ExperimentConfig cfg = effective_config(a);
    const std::string gpath = at(a.out_dir, "genotypes.tsv");
    const std::string vpath = at(a.out_dir, "variants.tsv");
    const std::string cpath = at(a.out_dir, "covariates.tsv");
    const std::string ppath = at(a.out_dir, "phenotype_" + a.model + ".tsv");
    require_file(gpath, "run `anchorpheno synth` with a liability cohort first");
    require_file(vpath, "run `anchorpheno synth` with a liability cohort first");
    require_file(cpath, "run `anchorpheno synth` with a liability cohort first");
    require_file(ppath, "run `anchorpheno score --model " + a.model + "` first");

    const ap::GenotypeMatrix geno = ap::load_genotypes(gpath, vpath);
    const ap::CovariateTable cov = ap::load_covariates(cpath);
    std::vector<std::string> ids;
    const ap::PhenotypeVector pheno = ap::load_phenotype(ppath, &ids);
    if (ids != geno.patient_ids)
        throw std::runtime_error("gwas: phenotype and genotype patient ids differ");

    ap::GwasOptions opt;
    opt.alpha = cfg.alpha;
    opt.n_pcs = cfg.n_pcs;
    const ap::GwasResult res = ap::run_gwas(geno, pheno.score, cov, opt);
    ap::write_text_file(at(a.out_dir, "gwas_" + a.model + ".tsv"),
                        ap::format_gwas_rows(res.rows));

    const ap::TruthCatalog catalog = ap::TruthCatalog::from_genotypes(geno);
    const std::set<std::string> sig(res.significant.begin(), res.significant.end());
    const ap::CatalogMatch cm = ap::match_catalog(geno, catalog, sig, cfg.r2_threshold);
    std::cout << "gwas\tmodel=" << a.model << "\tsignificant=" << res.significant.size()
              << "\tmatched=" << cm.matched << "/" << cm.total << "\n";
    return 0;
}

int cmd_compare(const CommonArgs& a) {
    const ap::ExperimentConfig cfg = effective_config(a);
    const ap::ComparisonReport rep = ap::run_classifier_comparison(cfg, a.seed);
    fs::create_directories(a.out_dir);
    ap::write_text_file(at(a.out_dir, "compare.tsv"), rep.to_tsv());
    ap::write_text_file(at(a.out_dir, "compare_metrics.tsv"),
                        ap::write_metrics_report(rep.metrics()));
    std::cout << "compare\tmodels=" << rep.rows.size() << "\trepeats=" << cfg.repeats
              << "\tconfig_hash=" << rep.config_hash << "\n";
    return 0;
}

int cmd_noise_sweep(const CommonArgs& a) {
    const ap::ExperimentConfig cfg = effective_config(a);
    const ap::NoiseSweepReport rep = ap::run_noise_sweep(cfg, a.seed);
    fs::create_directories(a.out_dir);
    ap::write_text_file(at(a.out_dir, "noise_sweep.tsv"), rep.to_tsv());
    std::cout << "noise-sweep\trows=" << rep.rows.size() << "\tconfig_hash=" << rep.config_hash
              << "\n";
    return 0;
}

int cmd_ablate(const CommonArgs& a) {
    const ap::ExperimentConfig cfg = effective_config(a);
    const ap::AblationReport rep = ap::run_ablation(cfg, a.seed);
    fs::create_directories(a.out_dir);
    ap::write_text_file(at(a.out_dir, "ablation.tsv"), rep.to_tsv());
    std::cout << "ablate\trows=" << rep.rows.size() << "\tconfig_hash=" << rep.config_hash
              << "\n";
    return 0;
}

int cmd_pipeline(const CommonArgs& a) {
    const ap::ExperimentConfig cfg = effective_config(a);
    const ap::PipelineResult res = ap::run_full_pipeline(cfg, a.seed, a.out_dir);
    std::cout << "pipeline\tmodels=" << res.rows.size() << "\tpanel=" << res.panel.size()
              << "\tconfig_hash=" << res.config_hash << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anchor-variable phenotyping toolkit"};
    app.require_subcommand(1);

    CommonArgs a;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
    add_common(synth, &a, false);
    CLI::App* train = app.add_subcommand("train", "Train an anchor classifier");
    add_common(train, &a, true);
    CLI::App* score = app.add_subcommand("score", "Score a cohort with a saved model");
    add_common(score, &a, true);
    CLI::App* gwas = app.add_subcommand("gwas", "Association scan on a scored phenotype");
    add_common(gwas, &a, true);
    CLI::App* compare = app.add_subcommand("compare", "Held-out classifier comparison");
    add_common(compare, &a, false);
    CLI::App* sweep = app.add_subcommand("noise-sweep", "Label-noise robustness sweep");
    add_common(sweep, &a, false);
    CLI::App* ablate = app.add_subcommand("ablate", "Case-removal power ablation");
    add_common(ablate, &a, false);
    CLI::App* pipeline = app.add_subcommand("pipeline", "Cohort -> phenotypes -> scan -> catalog");
    add_common(pipeline, &a, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(a);
        if (train->parsed()) return cmd_train(a);
        if (score->parsed()) return cmd_score(a);
        if (gwas->parsed()) return cmd_gwas(a);
        if (compare->parsed()) return cmd_compare(a);
        if (sweep->parsed()) return cmd_noise_sweep(a);
        if (ablate->parsed()) return cmd_ablate(a);
        if (pipeline->parsed()) return cmd_pipeline(a);
    } catch (const std::exception& e) {
        std::cerr << "error\t" << e.what() << "\n";
        return 1;
    }
    std::cerr << "error\tno subcommand\n";
    return 1;
}
