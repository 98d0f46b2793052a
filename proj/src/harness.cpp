#include "anchorpheno/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "anchorpheno/metrics.hpp"
#include "anchorpheno/prng.hpp"
#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& kv : j.items())
        if (!allowed.count(kv.key()))
            throw std::invalid_argument("config: unknown key '" + kv.key() + "' in " + where);
}

void mean_sd(const std::vector<double>& v, double* mean, double* sd) {
    if (v.empty()) {
        *mean = 0.0;
        *sd = 0.0;
        return;
    }
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    *mean = m;
    if (v.size() < 2) {
        *sd = 0.0;
        return;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    *sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json cohort_to_json(const CohortSettings& c) {
    const GeneratorConfig& g = c.generator;
    json j;
    j["kind"] = c.kind;
    j["n_patients"] = g.n_patients;
    j["prevalence"] = g.prevalence;
    j["n_variants"] = g.n_variants;
    j["maf_min"] = g.maf_min;
    j["maf_max"] = g.maf_max;
    j["ld_block_size"] = g.ld_block_size;
    j["ld_mutation_rate"] = g.ld_mutation_rate;
    json causal = json::array();
    for (const auto& [idx, eff] : g.causal_effects) causal.push_back(json::array({idx, eff}));
    j["causal"] = causal;
    j["beta_sex"] = g.beta_sex;
    j["beta_age"] = g.beta_age;
    j["anchor_code"] = g.anchor_code;
    j["anchor_sensitivity"] = g.anchor_sensitivity;
    j["anchor_fp_rate"] = g.anchor_fp_rate;
    j["anchor_repeat_rate"] = g.anchor_repeat_rate;
    j["n_signal_codes"] = c.n_signal_codes;
    j["signal_log_odds"] = c.signal_log_odds;
    j["n_filler_codes"] = g.n_filler_codes;
    j["filler_rate"] = g.filler_rate;
    j["visits_min"] = g.visits_min;
    j["visits_max"] = g.visits_max;
    j["min_codes"] = g.min_codes;
    const XorCohortConfig& x = c.xor_config;
    json jx;
    jx["n_patients"] = x.n_patients;
    jx["marker_rate"] = x.marker_rate;
    jx["marker_visit_rate"] = x.marker_visit_rate;
    jx["label_flip_rate"] = x.label_flip_rate;
    jx["anchor_code"] = x.anchor_code;
    jx["marker_a"] = x.marker_a;
    jx["marker_b"] = x.marker_b;
    jx["n_filler_codes"] = x.n_filler_codes;
    jx["filler_rate"] = x.filler_rate;
    jx["visits_min"] = x.visits_min;
    jx["visits_max"] = x.visits_max;
    jx["min_codes"] = x.min_codes;
    j["xor"] = jx;
    return j;
}

CohortSettings cohort_from_json(const json& j) {
    check_keys(j, {"kind",           "n_patients",      "prevalence",
                   "n_variants",     "maf_min",         "maf_max",
                   "ld_block_size",  "ld_mutation_rate", "causal",
                   "beta_sex",       "beta_age",        "anchor_code",
                   "anchor_sensitivity", "anchor_fp_rate", "anchor_repeat_rate",
                   "n_signal_codes", "signal_log_odds", "n_filler_codes",
                   "filler_rate",    "visits_min",      "visits_max",
                   "min_codes",      "xor"},
               "cohort");
    CohortSettings c;
    GeneratorConfig& g = c.generator;
    c.kind = j.value("kind", c.kind);
    g.n_patients = j.value("n_patients", g.n_patients);
    g.prevalence = j.value("prevalence", g.prevalence);
    g.n_variants = j.value("n_variants", g.n_variants);
    g.maf_min = j.value("maf_min", g.maf_min);
    g.maf_max = j.value("maf_max", g.maf_max);
    g.ld_block_size = j.value("ld_block_size", g.ld_block_size);
    g.ld_mutation_rate = j.value("ld_mutation_rate", g.ld_mutation_rate);
    if (j.contains("causal")) {
        g.causal_effects.clear();
        for (const auto& e : j.at("causal")) {
            if (!e.is_array() || e.size() != 2)
                throw std::invalid_argument("config: causal entries must be [variant, effect]");
            g.causal_effects.emplace_back(e[0].get<int>(), e[1].get<double>());
        }
    }
    g.beta_sex = j.value("beta_sex", g.beta_sex);
    g.beta_age = j.value("beta_age", g.beta_age);
    g.anchor_code = j.value("anchor_code", g.anchor_code);
    g.anchor_sensitivity = j.value("anchor_sensitivity", g.anchor_sensitivity);
    g.anchor_fp_rate = j.value("anchor_fp_rate", g.anchor_fp_rate);
    g.anchor_repeat_rate = j.value("anchor_repeat_rate", g.anchor_repeat_rate);
    c.n_signal_codes = j.value("n_signal_codes", c.n_signal_codes);
    c.signal_log_odds = j.value("signal_log_odds", c.signal_log_odds);
    g.n_filler_codes = j.value("n_filler_codes", g.n_filler_codes);
    g.filler_rate = j.value("filler_rate", g.filler_rate);
    g.visits_min = j.value("visits_min", g.visits_min);
    g.visits_max = j.value("visits_max", g.visits_max);
    g.min_codes = j.value("min_codes", g.min_codes);
    if (j.contains("xor")) {
        const json& jx = j.at("xor");
        check_keys(jx,
                   {"n_patients", "marker_rate", "marker_visit_rate", "label_flip_rate",
                    "anchor_code", "marker_a", "marker_b", "n_filler_codes", "filler_rate",
                    "visits_min", "visits_max", "min_codes"},
                   "cohort.xor");
        XorCohortConfig& x = c.xor_config;
        x.n_patients = jx.value("n_patients", x.n_patients);
        x.marker_rate = jx.value("marker_rate", x.marker_rate);
        x.marker_visit_rate = jx.value("marker_visit_rate", x.marker_visit_rate);
        x.label_flip_rate = jx.value("label_flip_rate", x.label_flip_rate);
        x.anchor_code = jx.value("anchor_code", x.anchor_code);
        x.marker_a = jx.value("marker_a", x.marker_a);
        x.marker_b = jx.value("marker_b", x.marker_b);
        x.n_filler_codes = jx.value("n_filler_codes", x.n_filler_codes);
        x.filler_rate = jx.value("filler_rate", x.filler_rate);
        x.visits_min = jx.value("visits_min", x.visits_min);
        x.visits_max = jx.value("visits_max", x.visits_max);
        x.min_codes = jx.value("min_codes", x.min_codes);
    }
    return c;
}

json transformer_to_json(const TransformerConfig& t) {
    json j;
    j["max_len"] = t.max_len;
    j["d_model"] = t.d_model;
    j["n_layers"] = t.n_layers;
    j["n_heads"] = t.n_heads;
    j["intermediate_size"] = t.intermediate_size;
    j["hidden_dropout"] = t.hidden_dropout;
    j["attention_dropout"] = t.attention_dropout;
    j["init_range"] = t.init_range;
    j["ln_eps"] = t.ln_eps;
    j["learning_rate"] = t.learning_rate;
    j["warmup_proportion"] = t.warmup_proportion;
    j["weight_decay"] = t.weight_decay;
    j["batch_size"] = t.batch_size;
    j["n_epochs"] = t.n_epochs;
    return j;
}

TransformerConfig transformer_from_json(const json& j) {
    check_keys(j,
               {"max_len", "d_model", "n_layers", "n_heads", "intermediate_size",
                "hidden_dropout", "attention_dropout", "init_range", "ln_eps", "learning_rate",
                "warmup_proportion", "weight_decay", "batch_size", "n_epochs"},
               "transformer");
    TransformerConfig t;
    t.max_len = j.value("max_len", t.max_len);
    t.d_model = j.value("d_model", t.d_model);
    t.n_layers = j.value("n_layers", t.n_layers);
    t.n_heads = j.value("n_heads", t.n_heads);
    t.intermediate_size = j.value("intermediate_size", t.intermediate_size);
    t.hidden_dropout = j.value("hidden_dropout", t.hidden_dropout);
    t.attention_dropout = j.value("attention_dropout", t.attention_dropout);
    t.init_range = j.value("init_range", t.init_range);
    t.ln_eps = j.value("ln_eps", t.ln_eps);
    t.learning_rate = j.value("learning_rate", t.learning_rate);
    t.warmup_proportion = j.value("warmup_proportion", t.warmup_proportion);
    t.weight_decay = j.value("weight_decay", t.weight_decay);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.n_epochs = j.value("n_epochs", t.n_epochs);
    return t;
}

std::vector<std::string> patient_ids(const std::vector<PatientRecord>& records) {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.patient_id);
    return ids;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (cohort.kind != "liability" && cohort.kind != "xor")
        throw std::invalid_argument("config: cohort.kind must be 'liability' or 'xor'");
    double sum = 0.0;
    for (double r : split) {
        if (!(r > 0.0)) throw std::invalid_argument("config: split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("config: split ratios must sum to 1");
    if (models.empty()) throw std::invalid_argument("config: empty model roster");
    for (const auto& m : models) {
        int k = 0;
        if (m != "anchorbert" && m != "anchor-lr" && m != "pheprob" &&
            !is_threshold_model(m, &k))
            throw std::invalid_argument("config: unknown model '" + m + "'");
    }
    for (double p : noise_proportions)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("config: noise proportions must lie in [0, 1]");
    for (double p : ablation_proportions)
        if (!(p >= 0.0 && p <= 1.0))
            throw std::invalid_argument("config: ablation proportions must lie in [0, 1]");
    if (repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("config: alpha must lie in (0, 1)");
    if (!(r2_threshold >= 0.0 && r2_threshold <= 1.0))
        throw std::invalid_argument("config: r2_threshold must lie in [0, 1]");
    if (n_pcs < 0 || n_pcs > 10)
        throw std::invalid_argument("config: n_pcs must lie in [0, 10]");
    if (!(phenotype_c > 0.0 && phenotype_c <= 1.0))
        throw std::invalid_argument("config: phenotype_c must lie in (0, 1]");
    if (!(vocab_min_frequency >= 0.0 && vocab_min_frequency < 1.0))
        throw std::invalid_argument("config: vocab_min_frequency must lie in [0, 1)");
}

std::string ExperimentConfig::canonical_json() const {
    json j;
    j["cohort"] = cohort_to_json(cohort);
    j["split"] = split;
    j["models"] = models;
    j["noise_proportions"] = noise_proportions;
    j["ablation_proportions"] = ablation_proportions;
    j["repeats"] = repeats;
    j["alpha"] = alpha;
    j["r2_threshold"] = r2_threshold;
    j["n_pcs"] = n_pcs;
    j["phenotype_c"] = phenotype_c;
    j["vocab_min_frequency"] = vocab_min_frequency;
    j["transformer"] = transformer_to_json(transformer);
    j["logistic"] = {{"l2", logistic.l2}, {"tol", logistic.tol}, {"max_iter", logistic.max_iter}};
    j["pheprob"] = {{"tol", pheprob.tol},
                    {"max_iter", pheprob.max_iter},
                    {"restarts", pheprob.restarts}};
    return j.dump();
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical_json())); }

ExperimentConfig parse_experiment_config(const std::string& json_text) {
    const json j = json::parse(json_text);
    check_keys(j,
               {"cohort", "split", "models", "noise_proportions", "ablation_proportions",
                "repeats", "alpha", "r2_threshold", "n_pcs", "phenotype_c",
                "vocab_min_frequency", "transformer", "logistic", "pheprob"},
               "top level");
    ExperimentConfig c;
    if (j.contains("cohort")) c.cohort = cohort_from_json(j.at("cohort"));
    if (j.contains("split")) {
        const auto s = j.at("split").get<std::vector<double>>();
        if (s.size() != 3)
            throw std::invalid_argument("config: split must have three ratios");
        c.split = {s[0], s[1], s[2]};
    }
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("noise_proportions"))
        c.noise_proportions = j.at("noise_proportions").get<std::vector<double>>();
    if (j.contains("ablation_proportions"))
        c.ablation_proportions = j.at("ablation_proportions").get<std::vector<double>>();
    c.repeats = j.value("repeats", c.repeats);
    c.alpha = j.value("alpha", c.alpha);
    c.r2_threshold = j.value("r2_threshold", c.r2_threshold);
    c.n_pcs = j.value("n_pcs", c.n_pcs);
    c.phenotype_c = j.value("phenotype_c", c.phenotype_c);
    c.vocab_min_frequency = j.value("vocab_min_frequency", c.vocab_min_frequency);
    if (j.contains("transformer")) c.transformer = transformer_from_json(j.at("transformer"));
    if (j.contains("logistic")) {
        const json& jl = j.at("logistic");
        check_keys(jl, {"l2", "tol", "max_iter"}, "logistic");
        c.logistic.l2 = jl.value("l2", c.logistic.l2);
        c.logistic.tol = jl.value("tol", c.logistic.tol);
        c.logistic.max_iter = jl.value("max_iter", c.logistic.max_iter);
    }
    if (j.contains("pheprob")) {
        const json& jp = j.at("pheprob");
        check_keys(jp, {"tol", "max_iter", "restarts"}, "pheprob");
        c.pheprob.tol = jp.value("tol", c.pheprob.tol);
        c.pheprob.max_iter = jp.value("max_iter", c.pheprob.max_iter);
        c.pheprob.restarts = jp.value("restarts", c.pheprob.restarts);
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(read_text_file(path));
}

SplitIndices split_indices(size_t n, const std::array<double, 3>& ratios, uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (!(r > 0.0)) throw std::invalid_argument("split: ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: ratios must sum to 1");
    if (n < 3) throw std::invalid_argument("split: need at least 3 patients");

    std::vector<size_t> perm(n);
    std::iota(perm.begin(), perm.end(), size_t{0});
    auto eng = make_engine(derive_seed(seed, "split"));
    std::shuffle(perm.begin(), perm.end(), eng);

    const size_t n_train = static_cast<size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const size_t n_valid = static_cast<size_t>(std::llround(ratios[1] * static_cast<double>(n)));
    if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n)
        throw std::invalid_argument("split: a part would be empty");

    SplitIndices s;
    s.train.assign(perm.begin(), perm.begin() + n_train);
    s.valid.assign(perm.begin() + n_train, perm.begin() + n_train + n_valid);
    s.test.assign(perm.begin() + n_train + n_valid, perm.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.valid.begin(), s.valid.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

bool is_threshold_model(const std::string& name, int* k) {
    const std::string prefix = "threshold-";
    if (name.rfind(prefix, 0) != 0) return false;
    const std::string num = name.substr(prefix.size());
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) return false;
    const int v = std::stoi(num);
    if (v < 1) return false;
    if (k) *k = v;
    return true;
}

GeneratedCohort make_cohort(const ExperimentConfig& config, uint64_t seed) {
    GeneratedCohort out;
    if (config.cohort.kind == "xor") {
        XorCohort xc = generate_xor_cohort(config.cohort.xor_config, seed);
        out.records = std::move(xc.records);
        out.truth = std::move(xc.truth);
        out.has_genotypes = false;
    } else {
        GeneratorConfig gen = config.cohort.generator;
        gen.comorbidities =
            default_comorbidities(config.cohort.n_signal_codes, config.cohort.signal_log_odds);
        Cohort c = generate_cohort(gen, seed);
        out.records = std::move(c.records);
        out.truth = std::move(c.truth);
        out.genotypes = std::move(c.genotypes);
        out.covariates = std::move(c.covariates);
        out.has_genotypes = true;
    }
    return out;
}

AnchorSpec anchor_of(const ExperimentConfig& config) {
    if (config.cohort.kind == "xor") return AnchorSpec{{config.cohort.xor_config.anchor_code}};
    return AnchorSpec{{config.cohort.generator.anchor_code}};
}

ModelRun run_model(const std::string& name, const std::vector<PatientRecord>& records,
                   const AnchorLabel& train_labels, const AnchorLabel& observed,
                   const Vocabulary& vocab, const AnchorSpec& anchor,
                   const ExperimentConfig& config, const SplitIndices& split, uint64_t seed) {
    ModelRun out;
    out.name = name;
    int k = 0;
    if (is_threshold_model(name, &k)) {
        out.phenotype = threshold_phenotype(records, anchor, k);
        out.scores = out.phenotype.score;
        return out;
    }
    if (name == "anchorbert") {
        TransformerConfig cfg = config.transformer;
        cfg.seed = derive_seed(seed, "anchorbert");
        const TrainResult tr =
            train_transformer(records, train_labels, vocab, anchor, cfg, split.train, split.valid);
        out.scores = predict_transformer(tr.model, records, vocab, anchor);
        out.phenotype = phenotype_from_scores(out.scores, observed, config.phenotype_c);
        out.model_json = save_transformer(tr.model);
        return out;
    }
    if (name == "anchor-lr") {
        const LogisticModel lm = train_anchor_logistic(records, train_labels, vocab, anchor,
                                                       config.logistic, split.train);
        out.scores = predict_logistic(lm, records, vocab);
        out.phenotype = phenotype_from_scores(out.scores, observed, config.phenotype_c);
        out.model_json = save_logistic(lm);
        return out;
    }
    if (name == "pheprob") {
        std::vector<int> counts, totals;
        pheprob_counts(records, anchor, &counts, &totals);
        std::vector<int> tc, tt;
        tc.reserve(split.train.size());
        for (size_t i : split.train) {
            tc.push_back(counts[i]);
            tt.push_back(totals[i]);
        }
        const PheprobModel pm = fit_pheprob(tc, tt, config.pheprob, derive_seed(seed, "pheprob"));
        out.scores = pheprob_posteriors(pm, counts, totals);
        out.phenotype.score = out.scores;
        out.phenotype.kind = PhenotypeKind::continuous;
        out.model_json = save_pheprob(pm);
        return out;
    }
    throw std::invalid_argument("unknown model: " + name);
}

std::string ComparisonReport::to_tsv() const {
    std::ostringstream os;
    os << "model\tauroc_mean\tauroc_sd\tauprc_mean\tauprc_sd\trepeats\tseed\tconfig_hash\n";
    for (const auto& r : rows) {
        os << r.model << '\t' << format_double(r.auroc_mean) << '\t' << format_double(r.auroc_sd)
           << '\t' << format_double(r.auprc_mean) << '\t' << format_double(r.auprc_sd) << '\t'
           << r.auroc.size() << '\t' << format_seed(seed) << '\t' << config_hash << '\n';
    }
    return os.str();
}

std::map<std::string, double> ComparisonReport::metrics() const {
    std::map<std::string, double> m;
    for (const auto& r : rows) {
        m[r.model + ".auroc_mean"] = r.auroc_mean;
        m[r.model + ".auroc_sd"] = r.auroc_sd;
        m[r.model + ".auprc_mean"] = r.auprc_mean;
        m[r.model + ".auprc_sd"] = r.auprc_sd;
    }
    return m;
}

ComparisonReport run_classifier_comparison(const ExperimentConfig& config, uint64_t seed) {
    config.validate();
    const GeneratedCohort coh = make_cohort(config, seed);
    const AnchorSpec anchor = anchor_of(config);
    const Vocabulary vocab =
        build_vocabulary(coh.records, config.vocab_min_frequency, anchor.codes);
    const AnchorLabel observed = label_anchor(coh.records, anchor);
    const size_t n = coh.records.size();

    ComparisonReport rep;
    rep.seed = seed;
    rep.config_hash = config.hash();
    for (const auto& m : config.models) {
        ComparisonRow row;
        row.model = m;
        rep.rows.push_back(row);
    }

    for (int r = 0; r < config.repeats; ++r) {
        const uint64_t rseed = derive_seed(seed, "repeat", static_cast<uint64_t>(r));
        const SplitIndices split = split_indices(n, config.split, rseed);
        std::vector<uint8_t> ytest;
        ytest.reserve(split.test.size());
        for (size_t i : split.test) ytest.push_back(observed.s[i]);
        for (size_t mi = 0; mi < config.models.size(); ++mi) {
            const ModelRun run = run_model(config.models[mi], coh.records, observed, observed,
                                           vocab, anchor, config, split, rseed);
            std::vector<double> stest;
            stest.reserve(split.test.size());
            for (size_t i : split.test) stest.push_back(run.scores[i]);
            rep.rows[mi].auroc.push_back(auroc(stest, ytest));
            rep.rows[mi].auprc.push_back(average_precision(stest, ytest));
        }
    }
    for (auto& row : rep.rows) {
        mean_sd(row.auroc, &row.auroc_mean, &row.auroc_sd);
        mean_sd(row.auprc, &row.auprc_mean, &row.auprc_sd);
    }
    return rep;
}

std::string NoiseSweepReport::to_tsv() const {
    std::ostringstream os;
    os << "model\tnoise_proportion\tvalid_ap_mean\tvalid_ap_sd\ttest_ap_mean\ttest_ap_sd\t"
          "repeats\tseed\tconfig_hash\n";
    for (const auto& r : rows) {
        os << r.model << '\t' << format_double(r.proportion) << '\t'
           << format_double(r.valid_ap_mean) << '\t' << format_double(r.valid_ap_sd) << '\t'
           << format_double(r.test_ap_mean) << '\t' << format_double(r.test_ap_sd) << '\t'
           << r.valid_ap.size() << '\t' << format_seed(seed) << '\t' << config_hash << '\n';
    }
    return os.str();
}

NoiseSweepReport run_noise_sweep(const ExperimentConfig& config, uint64_t seed) {
    config.validate();
    if (std::find(config.noise_proportions.begin(), config.noise_proportions.end(), 0.0) ==
        config.noise_proportions.end())
        throw std::invalid_argument("noise sweep: proportions must include 0");

    const GeneratedCohort coh = make_cohort(config, seed);
    const AnchorSpec anchor = anchor_of(config);
    const Vocabulary vocab =
        build_vocabulary(coh.records, config.vocab_min_frequency, anchor.codes);
    const AnchorLabel observed = label_anchor(coh.records, anchor);
    const size_t n = coh.records.size();

    NoiseSweepReport rep;
    rep.seed = seed;
    rep.config_hash = config.hash();
    const size_t n_props = config.noise_proportions.size();
    for (const auto& m : config.models)
        for (double p : config.noise_proportions) {
            NoiseSweepRow row;
            row.model = m;
            row.proportion = p;
            rep.rows.push_back(row);
        }

    for (int r = 0; r < config.repeats; ++r) {
        const uint64_t rseed = derive_seed(seed, "repeat", static_cast<uint64_t>(r));
        const SplitIndices split = split_indices(n, config.split, rseed);
        const uint64_t noise_seed = derive_seed(rseed, "noise");
        std::vector<uint8_t> yvalid, ytest;
        for (size_t i : split.valid) yvalid.push_back(observed.s[i]);
        for (size_t i : split.test) ytest.push_back(observed.s[i]);

        for (size_t pi = 0; pi < n_props; ++pi) {
            // one noise stream per repeat, so flip sets are nested across
            // proportions
            const AnchorLabel noisy =
                inject_label_noise(observed, config.noise_proportions[pi], noise_seed);
            for (size_t mi = 0; mi < config.models.size(); ++mi) {
                const ModelRun run = run_model(config.models[mi], coh.records, noisy, observed,
                                               vocab, anchor, config, split, rseed);
                std::vector<double> svalid, stest;
                for (size_t i : split.valid) svalid.push_back(run.scores[i]);
                for (size_t i : split.test) stest.push_back(run.scores[i]);
                NoiseSweepRow& row = rep.rows[mi * n_props + pi];
                row.valid_ap.push_back(average_precision(svalid, yvalid));
                row.test_ap.push_back(average_precision(stest, ytest));
            }
        }
    }
    for (auto& row : rep.rows) {
        mean_sd(row.valid_ap, &row.valid_ap_mean, &row.valid_ap_sd);
        mean_sd(row.test_ap, &row.test_ap_mean, &row.test_ap_sd);
    }
    return rep;
}

std::string PipelineResult::catalog_tsv() const {
    std::ostringstream os;
    os << "model\tn_significant\tmatched\tcatalog_size\tproportion\tseed\tconfig_hash\n";
    for (const auto& r : rows) {
        os << r.model << '\t' << r.n_significant << '\t' << r.matched << '\t' << r.catalog_size
           << '\t' << format_double(r.proportion) << '\t' << format_seed(seed) << '\t'
           << config_hash << '\n';
    }
    return os.str();
}

PipelineResult run_pipeline_core(const ExperimentConfig& config, uint64_t seed) {
    config.validate();
    if (config.cohort.kind != "liability")
        throw std::invalid_argument("pipeline: requires a liability cohort with genotypes");

    PipelineResult out;
    out.seed = seed;
    out.config_hash = config.hash();
    out.cohort = make_cohort(config, seed);
    const AnchorSpec anchor = anchor_of(config);
    out.vocab = build_vocabulary(out.cohort.records, config.vocab_min_frequency, anchor.codes);
    out.observed = label_anchor(out.cohort.records, anchor);
    out.split = split_indices(out.cohort.records.size(), config.split, seed);

    const TruthCatalog catalog = TruthCatalog::from_genotypes(out.cohort.genotypes);
    GwasOptions gopt;
    gopt.alpha = config.alpha;
    gopt.n_pcs = config.n_pcs;

    for (const auto& model : config.models) {
        ModelRun run = run_model(model, out.cohort.records, out.observed, out.observed, out.vocab,
                                 anchor, config, out.split, derive_seed(seed, "model"));
        GwasResult g =
            run_gwas(out.cohort.genotypes, run.phenotype.score, out.cohort.covariates, gopt);
        const std::set<std::string> sig(g.significant.begin(), g.significant.end());
        const CatalogMatch cm =
            match_catalog(out.cohort.genotypes, catalog, sig, config.r2_threshold);
        out.rows.push_back(
            {model, static_cast<int>(g.significant.size()), cm.matched, cm.total, cm.proportion});
        out.panel.insert(sig.begin(), sig.end());
        out.scores[model] = std::move(run.scores);
        out.phenotypes[model] = std::move(run.phenotype);
        out.gwas[model] = std::move(g);
    }
    return out;
}

PipelineResult run_full_pipeline(const ExperimentConfig& config, uint64_t seed,
                                 const std::string& out_dir) {
    PipelineResult res = run_pipeline_core(config, seed);
    std::filesystem::create_directories(out_dir);
    auto at = [&out_dir](const std::string& name) {
        return (std::filesystem::path(out_dir) / name).string();
    };

    write_text_file(at("cohort.tsv"), save_cohort(res.cohort.records));
    write_text_file(at("genotypes.tsv"), save_genotypes(res.cohort.genotypes));
    write_text_file(at("variants.tsv"), save_genotype_meta(res.cohort.genotypes));
    write_text_file(at("truth.tsv"), save_truth(res.cohort.records, res.cohort.truth));
    write_text_file(at("covariates.tsv"), save_covariates(res.cohort.covariates));

    const std::vector<std::string> ids = patient_ids(res.cohort.records);
    for (const auto& row : res.rows) {
        write_text_file(at("phenotype_" + row.model + ".tsv"),
                        save_phenotype(ids, res.phenotypes.at(row.model)));
        write_text_file(at("gwas_" + row.model + ".tsv"),
                        format_gwas_rows(res.gwas.at(row.model).rows));
    }
    write_text_file(at("catalog.tsv"), res.catalog_tsv());
    return res;
}

std::string AblationReport::to_tsv() const {
    std::ostringstream os;
    os << "regime\tmodel\tproportion\tretention_mean\tretention_sd\trepeats\tseed\t"
          "config_hash\n";
    for (const auto& r : rows) {
        os << r.regime << '\t' << r.model << '\t' << format_double(r.proportion) << '\t'
           << format_double(r.retention_mean) << '\t' << format_double(r.retention_sd) << '\t'
           << r.retention.size() << '\t' << format_seed(seed) << '\t' << config_hash << '\n';
    }
    return os.str();
}

AblationReport ablation_from_pipeline(const PipelineResult& pipe, const ExperimentConfig& config,
                                      uint64_t seed) {
    config.validate();
    if (!pipe.cohort.has_genotypes)
        throw std::invalid_argument("ablation: requires a liability cohort with genotypes");
    const auto& coh = pipe.cohort;
    const size_t n = coh.records.size();
    const int n_cov = 2 + config.n_pcs;
    if (n < static_cast<size_t>(n_cov) + 2)
        throw std::invalid_argument("ablation: cohort smaller than covariate count + 2");

    Eigen::MatrixXd C(static_cast<Eigen::Index>(n), n_cov);
    for (size_t i = 0; i < n; ++i) {
        C(static_cast<Eigen::Index>(i), 0) = coh.covariates.sex[i];
        C(static_cast<Eigen::Index>(i), 1) = coh.covariates.age[i];
        for (int j = 0; j < config.n_pcs; ++j)
            C(static_cast<Eigen::Index>(i), 2 + j) =
                coh.covariates.pcs(static_cast<Eigen::Index>(i), j);
    }

    const std::vector<std::string> panel(pipe.panel.begin(), pipe.panel.end());
    const TruthCatalog catalog = TruthCatalog::from_genotypes(coh.genotypes);

    std::vector<size_t> all(n), cases;
    std::iota(all.begin(), all.end(), size_t{0});
    for (size_t i = 0; i < n; ++i)
        if (pipe.observed.s[i]) cases.push_back(i);

    AblationReport rep;
    rep.seed = seed;
    rep.config_hash = config.hash();
    const std::vector<std::string> regimes = {"both", "cases_only"};
    const size_t n_props = config.ablation_proportions.size();
    const size_t n_models = config.models.size();
    for (const auto& regime : regimes)
        for (const auto& model : config.models)
            for (double p : config.ablation_proportions) {
                AblationRow row;
                row.regime = regime;
                row.model = model;
                row.proportion = p;
                rep.rows.push_back(row);
            }
    auto row_at = [&](size_t ri, size_t mi, size_t pi) -> AblationRow& {
        return rep.rows[(ri * n_models + mi) * n_props + pi];
    };

    for (int r = 0; r < config.repeats; ++r) {
        for (size_t ri = 0; ri < regimes.size(); ++ri) {
            for (size_t pi = 0; pi < n_props; ++pi) {
                const double p = config.ablation_proportions[pi];
                // one removal draw per (regime, proportion, repeat), shared by
                // all models
                const uint64_t rem_seed =
                    derive_seed(seed, "ablate-" + regimes[ri],
                                static_cast<uint64_t>(r) * 1000003ULL + pi);
                std::vector<size_t> pool = regimes[ri] == "both" ? all : cases;
                auto eng = make_engine(rem_seed);
                std::shuffle(pool.begin(), pool.end(), eng);
                const size_t n_remove =
                    static_cast<size_t>(std::floor(p * static_cast<double>(pool.size())));
                std::vector<uint8_t> removed(n, 0);
                for (size_t i = 0; i < n_remove; ++i) removed[pool[i]] = 1;
                std::vector<size_t> survivors;
                survivors.reserve(n - n_remove);
                for (size_t i = 0; i < n; ++i)
                    if (!removed[i]) survivors.push_back(i);

                // Too few survivors: no association is estimable, nothing is
                // retained.
                const bool estimable = survivors.size() >= static_cast<size_t>(n_cov) + 2;

                Eigen::MatrixXd Cs;
                if (estimable) {
                    Cs.resize(static_cast<Eigen::Index>(survivors.size()), n_cov);
                    for (size_t i = 0; i < survivors.size(); ++i)
                        Cs.row(static_cast<Eigen::Index>(i)) =
                            C.row(static_cast<Eigen::Index>(survivors[i]));
                }

                for (size_t mi = 0; mi < n_models; ++mi) {
                    const std::string& model = config.models[mi];
                    double retention = 0.0;
                    if (estimable) {
                        const PhenotypeVector& pheno = pipe.phenotypes.at(model);
                        const bool binary = pheno.kind == PhenotypeKind::binary;
                        Eigen::VectorXd y(static_cast<Eigen::Index>(survivors.size()));
                        for (size_t i = 0; i < survivors.size(); ++i)
                            y[static_cast<Eigen::Index>(i)] = pheno.score[survivors[i]];
                        std::set<std::string> sig;
                        for (const auto& vid : panel) {
                            const int vi = coh.genotypes.variant_index(vid);
                            Eigen::VectorXd dos(static_cast<Eigen::Index>(survivors.size()));
                            for (size_t i = 0; i < survivors.size(); ++i)
                                dos[static_cast<Eigen::Index>(i)] = coh.genotypes.dosage(
                                    static_cast<Eigen::Index>(survivors[i]), vi);
                            AssociationResult res;
                            try {
                                res = binary ? logistic_assoc(dos, y, Cs, vid)
                                             : linear_assoc(dos, y, Cs, vid);
                            } catch (const std::exception&) {
                                continue;  // degenerate subset: variant not recoverable
                            }
                            if (res.ok && res.p < config.alpha) sig.insert(vid);
                        }
                        retention =
                            match_catalog(coh.genotypes, catalog, sig, config.r2_threshold)
                                .proportion;
                    }
                    row_at(ri, mi, pi).retention.push_back(retention);
                }
            }
        }
    }
    for (auto& row : rep.rows) mean_sd(row.retention, &row.retention_mean, &row.retention_sd);
    return rep;
}

AblationReport run_ablation(const ExperimentConfig& config, uint64_t seed) {
    const PipelineResult pipe = run_pipeline_core(config, seed);
    return ablation_from_pipeline(pipe, config, seed);
}

}  // namespace anchorpheno
