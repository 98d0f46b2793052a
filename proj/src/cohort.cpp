#include "anchorpheno/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "anchorpheno/prng.hpp"
#include "anchorpheno/tsv.hpp"

namespace anchorpheno {

size_t PatientRecord::total_codes() const {
    size_t n = 0;
    for (const auto& v : visits) n += v.size();
    return n;
}

int GenotypeMatrix::variant_index(const std::string& id) const {
    for (size_t j = 0; j < variants.size(); ++j)
        if (variants[j].id == id) return static_cast<int>(j);
    return -1;
}

std::vector<std::string> GenotypeMatrix::causal_ids() const {
    std::vector<std::string> out;
    for (const auto& v : variants)
        if (v.causal) out.push_back(v.id);
    return out;
}

namespace {

std::string patient_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%05d", i);
    return buf;
}

std::string variant_name(int j) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "v%04d", j);
    return buf;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

// Sorted unique code list per visit keeps records canonical.
void normalize_visit(std::vector<std::string>& visit) {
    std::sort(visit.begin(), visit.end());
    visit.erase(std::unique(visit.begin(), visit.end()), visit.end());
}

std::string config_fingerprint(const GeneratorConfig& c) {
    std::string s;
    s += std::to_string(c.n_patients) + "|" + format_double(c.prevalence) + "|";
    s += std::to_string(c.n_variants) + "|" + format_double(c.maf_min) + "|" +
         format_double(c.maf_max) + "|" + std::to_string(c.ld_block_size) + "|" +
         format_double(c.ld_mutation_rate) + "|";
    for (auto& [idx, beta] : c.causal_effects)
        s += std::to_string(idx) + ":" + format_double(beta) + ",";
    s += "|" + format_double(c.beta_sex) + "|" + format_double(c.beta_age);
    s += "|" + c.anchor_code + "|" + format_double(c.anchor_sensitivity) + "|" +
         format_double(c.anchor_fp_rate) + "|" + format_double(c.anchor_repeat_rate);
    for (auto& cm : c.comorbidities)
        s += "|" + cm.code + ":" + format_double(cm.base_rate) + ":" + format_double(cm.log_odds);
    s += "|" + std::to_string(c.n_filler_codes) + "|" + format_double(c.filler_rate);
    s += "|" + std::to_string(c.visits_min) + ":" + std::to_string(c.visits_max) + ":" +
         std::to_string(c.min_codes);
    return hex64(fnv1a64(s));
}

}  // namespace

std::vector<ComorbidityCode> default_comorbidities(int n_signal, double log_odds) {
    std::vector<ComorbidityCode> out;
    for (int i = 0; i < n_signal; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "CM%02d", i);
        out.push_back({buf, 0.04, log_odds});
    }
    return out;
}

Cohort generate_cohort(const GeneratorConfig& config, uint64_t seed) {
    if (config.prevalence <= 0.0 || config.prevalence >= 1.0)
        throw std::invalid_argument("generate_cohort: prevalence must be in (0,1)");
    if (config.anchor_sensitivity <= 0.0 || config.anchor_sensitivity > 1.0)
        throw std::invalid_argument("generate_cohort: anchor sensitivity must be in (0,1]");
    if (config.n_patients < 10)
        throw std::invalid_argument("generate_cohort: need at least 10 patients");
    if (config.n_variants < 1 || config.ld_block_size < 1)
        throw std::invalid_argument("generate_cohort: bad genotype dimensions");
    if (config.visits_min < 1 || config.visits_max < config.visits_min)
        throw std::invalid_argument("generate_cohort: bad visit range");
    if (config.maf_min <= 0.0 || config.maf_max >= 0.5 || config.maf_min > config.maf_max)
        throw std::invalid_argument("generate_cohort: MAF range must satisfy 0 < min <= max < 0.5");
    for (auto& [idx, beta] : config.causal_effects) {
        (void)beta;
        if (idx < 0 || idx >= config.n_variants)
            throw std::invalid_argument("generate_cohort: causal variant index out of range");
    }

    const int n = config.n_patients;
    const int m = config.n_variants;

    Cohort cohort;
    cohort.truth.config_hash = config_fingerprint(config);

    // --- variant metadata: block-shared MAF drawn from one stream
    auto var_eng = make_engine(derive_seed(seed, "variants"));
    std::uniform_real_distribution<double> maf_dist(config.maf_min, config.maf_max);
    cohort.genotypes.variants.resize(m);
    for (int j = 0; j < m; ++j) {
        VariantInfo& v = cohort.genotypes.variants[j];
        v.id = variant_name(j);
        v.ld_block = j / config.ld_block_size;
        if (j % config.ld_block_size == 0) {
            v.maf = maf_dist(var_eng);
        } else {
            v.maf = cohort.genotypes.variants[j - 1].maf;
        }
    }
    for (auto& [idx, beta] : config.causal_effects) {
        cohort.genotypes.variants[idx].causal = true;
        cohort.genotypes.variants[idx].effect = beta;
    }

    // --- per-patient genotype rows: block seed dosage copied with per-entry
    //     resampling at the mutation rate
    cohort.genotypes.dosage.resize(n, m);
    cohort.genotypes.patient_ids.resize(n);
    for (int i = 0; i < n; ++i) {
        cohort.genotypes.patient_ids[i] = patient_name(i);
        auto eng = make_engine(derive_seed(seed, "genotype", static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        int block_seed_dosage = 0;
        for (int j = 0; j < m; ++j) {
            const double maf = cohort.genotypes.variants[j].maf;
            auto draw = [&]() {
                int d = 0;
                if (u01(eng) < maf) ++d;
                if (u01(eng) < maf) ++d;
                return d;
            };
            if (j % config.ld_block_size == 0) {
                block_seed_dosage = draw();
                cohort.genotypes.dosage(i, j) = block_seed_dosage;
            } else {
                const bool mutate = u01(eng) < config.ld_mutation_rate;
                // a fresh draw is consumed either way to keep streams aligned
                const int fresh = draw();
                cohort.genotypes.dosage(i, j) = mutate ? fresh : block_seed_dosage;
            }
        }
    }

    // --- covariates
    cohort.covariates.patient_ids = cohort.genotypes.patient_ids;
    cohort.covariates.sex.resize(n);
    cohort.covariates.age.resize(n);
    cohort.covariates.pcs.resize(n, 10);
    for (int i = 0; i < n; ++i) {
        auto eng = make_engine(derive_seed(seed, "covariates", static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        cohort.covariates.sex[i] = u01(eng) < 0.5 ? 0 : 1;
        cohort.covariates.age[i] = 40.0 + 30.0 * u01(eng);
        for (int k = 0; k < 10; ++k) cohort.covariates.pcs(i, k) = gauss(eng);
    }

    // --- liability and latent labels: top-k liabilities are cases, which
    //     pins the realized prevalence to the configured one
    const double age_mean = 55.0;
    const double age_sd = 30.0 / std::sqrt(12.0);
    cohort.truth.liability.resize(n);
    for (int i = 0; i < n; ++i) {
        auto eng = make_engine(derive_seed(seed, "liability", static_cast<uint64_t>(i)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        double lia = gauss(eng);
        for (auto& [idx, beta] : config.causal_effects)
            lia += beta * cohort.genotypes.dosage(i, idx);
        lia += config.beta_sex * cohort.covariates.sex[i];
        lia += config.beta_age * (cohort.covariates.age[i] - age_mean) / age_sd;
        cohort.truth.liability[i] = lia;
    }
    const int k_cases = static_cast<int>(std::llround(config.prevalence * n));
    if (k_cases < 1 || k_cases >= n)
        throw std::invalid_argument("generate_cohort: prevalence yields no cases or no controls at this n");
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (cohort.truth.liability[a] != cohort.truth.liability[b])
            return cohort.truth.liability[a] > cohort.truth.liability[b];
        return a < b;
    });
    cohort.truth.y.assign(n, 0);
    for (int r = 0; r < k_cases; ++r) cohort.truth.y[order[r]] = 1;

    // --- visit/code sampling
    std::vector<std::string> filler_codes;
    for (int f = 0; f < config.n_filler_codes; ++f) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "F%03d", f);
        filler_codes.emplace_back(buf);
    }
    std::vector<double> com_rate_control, com_rate_case;
    for (const auto& cm : config.comorbidities) {
        if (cm.base_rate <= 0.0 || cm.base_rate >= 1.0)
            throw std::invalid_argument("generate_cohort: comorbidity base rate must be in (0,1)");
        com_rate_control.push_back(cm.base_rate);
        com_rate_case.push_back(sigmoid(logit(cm.base_rate) + cm.log_odds));
    }

    cohort.records.resize(n);
    for (int i = 0; i < n; ++i) {
        auto eng = make_engine(derive_seed(seed, "visits", static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const bool is_case = cohort.truth.y[i] != 0;
        const double carrier_p = is_case ? config.anchor_sensitivity : config.anchor_fp_rate;
        const bool carrier = u01(eng) < carrier_p;

        PatientRecord rec;
        rec.patient_id = cohort.genotypes.patient_ids[i];
        for (int attempt = 0; attempt < 200; ++attempt) {
            std::uniform_int_distribution<int> tdist(config.visits_min, config.visits_max);
            const int t_visits = tdist(eng);
            std::vector<std::vector<std::string>> visits(t_visits);
            size_t non_anchor = 0;
            for (int t = 0; t < t_visits; ++t) {
                for (size_t cix = 0; cix < config.comorbidities.size(); ++cix) {
                    const double p = is_case ? com_rate_case[cix] : com_rate_control[cix];
                    if (u01(eng) < p) visits[t].push_back(config.comorbidities[cix].code);
                }
                for (const auto& f : filler_codes)
                    if (u01(eng) < config.filler_rate) visits[t].push_back(f);
                non_anchor += visits[t].size();
                if (carrier && u01(eng) < config.anchor_repeat_rate)
                    visits[t].push_back(config.anchor_code);
            }
            if (carrier) {
                bool any = false;
                for (auto& v : visits)
                    for (auto& c : v)
                        if (c == config.anchor_code) any = true;
                if (!any) {
                    std::uniform_int_distribution<int> pick(0, t_visits - 1);
                    visits[pick(eng)].push_back(config.anchor_code);
                }
            }
            // threshold counts non-anchor codes only, so anchor presence stays
            // independent of the accepted code sample given y
            if (non_anchor < static_cast<size_t>(config.min_codes)) continue;
            for (auto& v : visits) normalize_visit(v);
            std::erase_if(visits, [](const auto& v) { return v.empty(); });
            if (visits.empty()) continue;
            rec.visits = std::move(visits);
            break;
        }
        if (rec.visits.empty())
            throw std::runtime_error(
                "generate_cohort: could not reach min code count for patient " + rec.patient_id +
                "; raise code rates or visit counts");
        cohort.records[i] = std::move(rec);
    }

    return cohort;
}

XorCohort generate_xor_cohort(const XorCohortConfig& config, uint64_t seed) {
    if (config.n_patients < 10)
        throw std::invalid_argument("generate_xor_cohort: need at least 10 patients");

    XorCohort out;
    out.truth.config_hash = hex64(fnv1a64(
        "xor|" + std::to_string(config.n_patients) + "|" + format_double(config.marker_rate) +
        "|" + format_double(config.marker_visit_rate) + "|" + format_double(config.label_flip_rate) +
        "|" + config.anchor_code + "|" + config.marker_a + "|" + config.marker_b + "|" +
        std::to_string(config.n_filler_codes) + "|" + format_double(config.filler_rate) + "|" +
        std::to_string(config.visits_min) + ":" + std::to_string(config.visits_max)));

    std::vector<std::string> filler_codes;
    for (int f = 0; f < config.n_filler_codes; ++f) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "F%03d", f);
        filler_codes.emplace_back(buf);
    }

    const int n = config.n_patients;
    out.records.resize(n);
    out.truth.y.resize(n);
    out.truth.liability.resize(n);
    for (int i = 0; i < n; ++i) {
        auto eng = make_engine(derive_seed(seed, "xor", static_cast<uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const bool has_a = u01(eng) < config.marker_rate;
        const bool has_b = u01(eng) < config.marker_rate;
        const bool ideal = has_a != has_b;
        const bool flipped = u01(eng) < config.label_flip_rate;
        const bool anchored = flipped ? !ideal : ideal;
        out.truth.y[i] = ideal ? 1 : 0;
        out.truth.liability[i] = ideal ? 1.0 : 0.0;

        PatientRecord rec;
        rec.patient_id = patient_name(i);
        for (int attempt = 0; attempt < 200; ++attempt) {
            std::uniform_int_distribution<int> tdist(config.visits_min, config.visits_max);
            const int t_visits = tdist(eng);
            std::vector<std::vector<std::string>> visits(t_visits);
            auto place_marker = [&](const std::string& code) {
                bool any = false;
                for (int t = 0; t < t_visits; ++t)
                    if (u01(eng) < config.marker_visit_rate) {
                        visits[t].push_back(code);
                        any = true;
                    }
                if (!any) {
                    std::uniform_int_distribution<int> pick(0, t_visits - 1);
                    visits[pick(eng)].push_back(code);
                }
            };
            if (has_a) place_marker(config.marker_a);
            if (has_b) place_marker(config.marker_b);
            for (int t = 0; t < t_visits; ++t)
                for (const auto& f : filler_codes)
                    if (u01(eng) < config.filler_rate) visits[t].push_back(f);
            if (anchored) {
                std::uniform_int_distribution<int> pick(0, t_visits - 1);
                visits[pick(eng)].push_back(config.anchor_code);
            }
            size_t total = 0;
            for (auto& v : visits) total += v.size();
            if (total < static_cast<size_t>(config.min_codes)) continue;
            for (auto& v : visits) normalize_visit(v);
            std::erase_if(visits, [](const auto& v) { return v.empty(); });
            if (visits.empty()) continue;
            rec.visits = std::move(visits);
            break;
        }
        if (rec.visits.empty())
            throw std::runtime_error("generate_xor_cohort: could not reach min code count");
        out.records[i] = std::move(rec);
    }
    return out;
}

std::vector<PatientRecord> filter_min_codes(const std::vector<PatientRecord>& records,
                                            size_t min_codes) {
    std::vector<PatientRecord> out;
    for (const auto& r : records)
        if (r.total_codes() >= min_codes) out.push_back(r);
    return out;
}

// --- file formats ----------------------------------------------------------

std::string save_cohort(const std::vector<PatientRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.patient_id;
        for (const auto& v : r.visits) {
            out.push_back('\t');
            out += join(v, ',');
        }
        out.push_back('\n');
    }
    return out;
}

std::vector<PatientRecord> load_cohort_text(const std::string& text) {
    std::vector<PatientRecord> records;
    std::unordered_set<std::string> seen;
    const auto lines = split(text, '\n');
    for (size_t ln = 0; ln < lines.size(); ++ln) {
        const auto& line = lines[ln];
        if (line.empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() < 2)
            throw std::runtime_error("cohort line " + std::to_string(ln + 1) +
                                     ": expected patient_id and at least one visit");
        PatientRecord rec;
        rec.patient_id = fields[0];
        if (rec.patient_id.empty())
            throw std::runtime_error("cohort line " + std::to_string(ln + 1) + ": empty patient id");
        if (!seen.insert(rec.patient_id).second)
            throw std::runtime_error("cohort line " + std::to_string(ln + 1) +
                                     ": duplicate patient id '" + rec.patient_id + "'");
        for (size_t f = 1; f < fields.size(); ++f) {
            auto codes = split(fields[f], ',');
            for (const auto& c : codes)
                if (c.empty())
                    throw std::runtime_error("cohort line " + std::to_string(ln + 1) +
                                             ": empty code in visit " + std::to_string(f));
            normalize_visit(codes);
            rec.visits.push_back(std::move(codes));
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<PatientRecord> load_cohort(const std::string& path) {
    return load_cohort_text(read_text_file(path));
}

std::string save_genotypes(const GenotypeMatrix& g) {
    std::string out = "patient_id";
    for (const auto& v : g.variants) out += "\t" + v.id;
    out.push_back('\n');
    for (Eigen::Index i = 0; i < g.dosage.rows(); ++i) {
        out += g.patient_ids[i];
        for (Eigen::Index j = 0; j < g.dosage.cols(); ++j) {
            out.push_back('\t');
            out += std::to_string(g.dosage(i, j));
        }
        out.push_back('\n');
    }
    return out;
}

std::string save_genotype_meta(const GenotypeMatrix& g) {
    std::string out = "variant_id\tmaf\tcausal\teffect\tld_block\n";
    for (const auto& v : g.variants) {
        out += v.id + "\t" + format_double(v.maf) + "\t" + (v.causal ? "1" : "0") + "\t" +
               format_double(v.effect) + "\t" + std::to_string(v.ld_block) + "\n";
    }
    return out;
}

GenotypeMatrix load_genotypes(const std::string& geno_path, const std::string& meta_path) {
    GenotypeMatrix g;
    const auto lines = read_lines(geno_path);
    if (lines.empty()) throw std::runtime_error("genotype file is empty: " + geno_path);
    const auto header = split(lines[0], '\t');
    if (header.empty() || header[0] != "patient_id")
        throw std::runtime_error("genotype file: bad header");
    const size_t m = header.size() - 1;
    std::vector<std::string> variant_ids(header.begin() + 1, header.end());

    size_t n = 0;
    for (size_t ln = 1; ln < lines.size(); ++ln)
        if (!lines[ln].empty()) ++n;
    g.dosage.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    size_t row = 0;
    for (size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split(lines[ln], '\t');
        if (fields.size() != m + 1)
            throw std::runtime_error("genotype line " + std::to_string(ln + 1) +
                                     ": expected " + std::to_string(m + 1) + " fields");
        g.patient_ids.push_back(fields[0]);
        for (size_t j = 0; j < m; ++j) {
            if (fields[j + 1].size() != 1 || fields[j + 1][0] < '0' || fields[j + 1][0] > '2')
                throw std::runtime_error("genotype line " + std::to_string(ln + 1) +
                                         ": dosage must be 0, 1 or 2");
            g.dosage(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j)) =
                fields[j + 1][0] - '0';
        }
        ++row;
    }

    const auto meta_lines = read_lines(meta_path);
    if (meta_lines.empty() || split(meta_lines[0], '\t')[0] != "variant_id")
        throw std::runtime_error("genotype meta file: bad header");
    for (size_t ln = 1; ln < meta_lines.size(); ++ln) {
        if (meta_lines[ln].empty()) continue;
        const auto fields = split(meta_lines[ln], '\t');
        if (fields.size() != 5)
            throw std::runtime_error("genotype meta line " + std::to_string(ln + 1) +
                                     ": expected 5 fields");
        VariantInfo v;
        v.id = fields[0];
        v.maf = std::stod(fields[1]);
        v.causal = fields[2] == "1";
        v.effect = std::stod(fields[3]);
        v.ld_block = std::stoi(fields[4]);
        g.variants.push_back(std::move(v));
    }
    if (g.variants.size() != m)
        throw std::runtime_error("genotype meta: variant count does not match genotype header");
    for (size_t j = 0; j < m; ++j)
        if (g.variants[j].id != variant_ids[j])
            throw std::runtime_error("genotype meta: variant order does not match genotype header");
    return g;
}

std::string save_truth(const std::vector<PatientRecord>& records, const CohortTruth& truth) {
    if (records.size() != truth.y.size())
        throw std::invalid_argument("save_truth: size mismatch");
    std::string out;
    for (size_t i = 0; i < records.size(); ++i) {
        out += records[i].patient_id + "\t" + std::to_string(static_cast<int>(truth.y[i])) +
               "\t" + format_double(truth.liability[i]) + "\n";
    }
    return out;
}

CohortTruth load_truth(const std::string& path, const std::vector<PatientRecord>& records) {
    CohortTruth t;
    const auto lines = read_lines(path);
    size_t row = 0;
    for (size_t ln = 0; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split(lines[ln], '\t');
        if (fields.size() != 3)
            throw std::runtime_error("truth line " + std::to_string(ln + 1) + ": expected 3 fields");
        if (row >= records.size() || fields[0] != records[row].patient_id)
            throw std::runtime_error("truth line " + std::to_string(ln + 1) +
                                     ": patient id does not match cohort order");
        t.y.push_back(static_cast<uint8_t>(std::stoi(fields[1])));
        t.liability.push_back(std::stod(fields[2]));
        ++row;
    }
    if (row != records.size())
        throw std::runtime_error("truth file: patient count does not match cohort");
    return t;
}

std::string save_covariates(const CovariateTable& c) {
    std::string out = "patient_id\tsex\tage";
    for (int k = 1; k <= 10; ++k) out += "\tpc" + std::to_string(k);
    out.push_back('\n');
    for (size_t i = 0; i < c.patient_ids.size(); ++i) {
        out += c.patient_ids[i] + "\t" + std::to_string(c.sex[i]) + "\t" + format_double(c.age[i]);
        for (int k = 0; k < 10; ++k) {
            out.push_back('\t');
            out += format_double(c.pcs(static_cast<Eigen::Index>(i), k));
        }
        out.push_back('\n');
    }
    return out;
}

CovariateTable load_covariates(const std::string& path) {
    CovariateTable c;
    const auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error("covariate file is empty: " + path);
    size_t n = 0;
    for (size_t ln = 1; ln < lines.size(); ++ln)
        if (!lines[ln].empty()) ++n;
    c.pcs.resize(static_cast<Eigen::Index>(n), 10);
    size_t row = 0;
    for (size_t ln = 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto fields = split(lines[ln], '\t');
        if (fields.size() != 13)
            throw std::runtime_error("covariate line " + std::to_string(ln + 1) +
                                     ": expected 13 fields");
        c.patient_ids.push_back(fields[0]);
        c.sex.push_back(std::stoi(fields[1]));
        c.age.push_back(std::stod(fields[2]));
        for (int k = 0; k < 10; ++k)
            c.pcs(static_cast<Eigen::Index>(row), k) = std::stod(fields[3 + k]);
        ++row;
    }
    return c;
}

}  // namespace anchorpheno
