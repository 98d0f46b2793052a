#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "anchorpheno/anchor.hpp"
#include "anchorpheno/cohort.hpp"
#include "anchorpheno/gwas.hpp"
#include "anchorpheno/harness.hpp"
#include "anchorpheno/metrics.hpp"
#include "anchorpheno/pheprob.hpp"
#include "anchorpheno/vocab.hpp"

namespace py = pybind11;
namespace ap = anchorpheno;

namespace {

// records cross the boundary as [(patient_id, [[code, ...], ...]), ...]
using PyRecords = std::vector<std::pair<std::string, std::vector<std::vector<std::string>>>>;

std::vector<ap::PatientRecord> to_records(const PyRecords& in) {
    std::vector<ap::PatientRecord> out;
    out.reserve(in.size());
    for (const auto& [id, visits] : in) out.push_back({id, visits});
    return out;
}

PyRecords from_records(const std::vector<ap::PatientRecord>& in) {
    PyRecords out;
    out.reserve(in.size());
    for (const auto& r : in) out.emplace_back(r.patient_id, r.visits);
    return out;
}

ap::GenotypeMatrix to_genotypes(const std::vector<std::vector<int>>& dosage,
                                const std::vector<std::string>& variant_ids) {
    if (dosage.empty()) throw std::invalid_argument("gwas: empty dosage matrix");
    const size_t n = dosage.size();
    const size_t m = dosage.front().size();
    if (variant_ids.size() != m)
        throw std::invalid_argument("gwas: variant id count does not match dosage columns");
    ap::GenotypeMatrix g;
    g.dosage.resize(n, m);
    for (size_t i = 0; i < n; ++i) {
        if (dosage[i].size() != m) throw std::invalid_argument("gwas: ragged dosage matrix");
        for (size_t j = 0; j < m; ++j) g.dosage(i, j) = dosage[i][j];
        g.patient_ids.push_back("p" + std::to_string(i));
    }
    for (size_t j = 0; j < m; ++j) {
        ap::VariantInfo v;
        v.id = variant_ids[j];
        v.ld_block = int(j);
        g.variants.push_back(v);
    }
    return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "anchor-variable phenotyping: cohort synthesis, anchor classifiers, "
              "phenotype transforms and association scans";
    m.attr("__version__") = "0.1.0";

    m.def("auroc", &ap::auroc, py::arg("scores"), py::arg("labels"),
          "Area under the ROC curve with tie handling.");
    m.def("average_precision", &ap::average_precision, py::arg("scores"), py::arg("labels"),
          "Average precision (area under the precision-recall curve).");

    m.def(
        "anchor_phenotype",
        [](const std::vector<double>& scores, const std::vector<int>& s, double c) {
            ap::AnchorLabel labels;
            labels.s.assign(s.begin(), s.end());
            return ap::phenotype_from_scores(scores, labels, c).score;
        },
        py::arg("scores"), py::arg("s"), py::arg("c") = 1.0,
        "Anchor transform: 1 where the anchor fired, else min(score / c, 1).");

    m.def(
        "fit_pheprob",
        [](const std::vector<int>& counts, const std::vector<int>& totals, uint64_t seed) {
            const ap::PheprobModel model = ap::fit_pheprob(counts, totals, {}, seed);
            py::dict params;
            params["pi"] = model.pi;
            params["p_case"] = model.p_case;
            params["p_control"] = model.p_control;
            params["loglik"] = model.loglik;
            params["iterations"] = model.iterations;
            params["converged"] = model.converged;
            return py::make_tuple(params, ap::pheprob_posteriors(model, counts, totals));
        },
        py::arg("counts"), py::arg("totals"), py::arg("seed") = 0,
        "Fit the two-component binomial mixture; returns (params, posteriors).");

    m.def(
        "generate_cohort",
        [](const std::string& config_json, uint64_t seed) {
            const ap::ExperimentConfig cfg = ap::parse_experiment_config(config_json);
            const ap::GeneratedCohort cohort = ap::make_cohort(cfg, seed);
            const ap::AnchorLabel observed = ap::label_anchor(cohort.records, ap::anchor_of(cfg));
            std::vector<int> s(observed.s.begin(), observed.s.end());
            std::vector<int> y(cohort.truth.y.begin(), cohort.truth.y.end());
            return py::make_tuple(from_records(cohort.records), s, y);
        },
        py::arg("config_json") = "{}", py::arg("seed") = 0,
        "Synthesize a cohort; returns (records, observed_anchor, latent_labels).");

    m.def(
        "anchor_scores",
        [](const PyRecords& py_records, const std::vector<std::string>& anchor_codes,
           const std::string& model, const std::string& config_json, uint64_t seed) {
            const auto records = to_records(py_records);
            const ap::ExperimentConfig cfg = ap::parse_experiment_config(config_json);
            const ap::AnchorSpec anchor{anchor_codes};
            const ap::Vocabulary vocab =
                ap::build_vocabulary(records, cfg.vocab_min_frequency, anchor.codes);
            const ap::AnchorLabel observed = ap::label_anchor(records, anchor);
            const ap::SplitIndices split = ap::split_indices(records.size(), cfg.split, seed);
            const ap::ModelRun run =
                ap::run_model(model, records, observed, observed, vocab, anchor, cfg, split, seed);
            return py::make_tuple(run.scores, run.phenotype.score);
        },
        py::arg("records"), py::arg("anchor_codes"), py::arg("model") = "anchor-lr",
        py::arg("config_json") = "{}", py::arg("seed") = 0,
        "Train one anchor model and score every record; returns (scores, phenotype).");

    m.def(
        "gwas",
        [](const std::vector<std::vector<int>>& dosage, const std::vector<std::string>& variant_ids,
           const std::vector<double>& phenotype, double alpha, bool force_linear) {
            const ap::GenotypeMatrix g = to_genotypes(dosage, variant_ids);
            ap::CovariateTable cov;
            cov.patient_ids = g.patient_ids;
            ap::GwasOptions opt;
            opt.alpha = alpha;
            opt.force_linear = force_linear;
            opt.use_sex_age = false;
            opt.n_pcs = 0;
            const ap::GwasResult res = ap::run_gwas(g, phenotype, cov, opt);
            py::list rows;
            for (const auto& r : res.rows) {
                py::dict d;
                d["variant_id"] = r.variant_id;
                d["beta"] = r.beta;
                d["se"] = r.se;
                d["stat"] = r.stat;
                d["p"] = r.p;
                d["test"] = r.test;
                d["n"] = r.n_used;
                d["ok"] = r.ok;
                d["note"] = r.note;
                rows.append(d);
            }
            return py::make_tuple(rows, res.significant);
        },
        py::arg("dosage"), py::arg("variant_ids"), py::arg("phenotype"), py::arg("alpha") = 5e-8,
        py::arg("force_linear") = false,
        "Per-variant association scan; returns (rows, significant_variant_ids).");

    m.def(
        "run_comparison",
        [](const std::string& config_json, uint64_t seed) {
            return ap::run_classifier_comparison(ap::parse_experiment_config(config_json), seed)
                .to_tsv();
        },
        py::arg("config_json") = "{}", py::arg("seed") = 0,
        "Repeated-cohort classifier comparison; returns the report as TSV text.");

    m.def(
        "run_noise_sweep",
        [](const std::string& config_json, uint64_t seed) {
            return ap::run_noise_sweep(ap::parse_experiment_config(config_json), seed).to_tsv();
        },
        py::arg("config_json") = "{}", py::arg("seed") = 0,
        "Label-noise robustness sweep; returns the report as TSV text.");

    m.def(
        "run_pipeline",
        [](const std::string& config_json, uint64_t seed, const std::string& out_dir) {
            return ap::run_full_pipeline(ap::parse_experiment_config(config_json), seed, out_dir)
                .catalog_tsv();
        },
        py::arg("config_json"), py::arg("seed"), py::arg("out_dir"),
        "Cohort -> phenotypes -> association scan -> catalog match; writes report files "
        "and returns the catalog TSV.");
}
