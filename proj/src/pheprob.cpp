#include "anchorpheno/pheprob.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "anchorpheno/prng.hpp"

namespace anchorpheno {

namespace {

double clamp_rate(double p) { return std::min(1.0 - 1e-9, std::max(1e-9, p)); }

// log of the binomial pmf without the C(S,C) term; the term is shared by both
// components so it cancels in the posteriors and shifts the loglik by a
// constant that does not depend on the parameters. Keeping it out avoids
// lgamma calls in the EM inner loop.
double log_pmf_kernel(int c, int s, double p) {
    return c * std::log(p) + (s - c) * std::log1p(-p);
}

struct EmResult {
    PheprobModel model;
};

PheprobModel run_em(const std::vector<int>& counts, const std::vector<int>& totals,
                    double pi0, double p1_0, double p0_0, const PheprobParams& params) {
    const size_t n = counts.size();
    PheprobModel m;
    m.pi = std::min(1.0 - 1e-6, std::max(1e-6, pi0));
    m.p_case = clamp_rate(p1_0);
    m.p_control = clamp_rate(p0_0);

    std::vector<double> post(n);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < params.max_iter; ++iter) {
        // E step in log space
        const double log_pi = std::log(m.pi), log_1mpi = std::log1p(-m.pi);
        double ll = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double a = log_pi + log_pmf_kernel(counts[i], totals[i], m.p_case);
            const double b = log_1mpi + log_pmf_kernel(counts[i], totals[i], m.p_control);
            const double mx = std::max(a, b);
            const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
            post[i] = std::exp(a - lse);
            ll += lse;
        }
        m.loglik_trace.push_back(ll);
        m.loglik = ll;
        m.iterations = iter + 1;
        if (ll - prev_ll < params.tol && iter > 0) {
            m.converged = true;
            break;
        }
        prev_ll = ll;

        // M step: closed form for a binomial mixture
        double w1 = 0.0, c1 = 0.0, s1 = 0.0, c0 = 0.0, s0 = 0.0;
        for (size_t i = 0; i < n; ++i) {
            w1 += post[i];
            c1 += post[i] * counts[i];
            s1 += post[i] * totals[i];
            c0 += (1.0 - post[i]) * counts[i];
            s0 += (1.0 - post[i]) * totals[i];
        }
        m.pi = std::min(1.0 - 1e-6, std::max(1e-6, w1 / static_cast<double>(n)));
        m.p_case = clamp_rate(s1 > 0 ? c1 / s1 : 0.5);
        m.p_control = clamp_rate(s0 > 0 ? c0 / s0 : 0.5);
    }

    // canonical ordering: component 1 carries the larger anchor rate
    if (m.p_case < m.p_control) {
        std::swap(m.p_case, m.p_control);
        m.pi = 1.0 - m.pi;
    }
    return m;
}

}  // namespace

PheprobModel fit_pheprob(const std::vector<int>& counts, const std::vector<int>& totals,
                         const PheprobParams& params, uint64_t seed) {
    if (counts.size() != totals.size() || counts.empty())
        throw std::invalid_argument("fit_pheprob: counts/totals size mismatch or empty");
    bool any_nonzero = false;
    for (size_t i = 0; i < counts.size(); ++i) {
        if (totals[i] < 1) throw std::invalid_argument("fit_pheprob: total count must be >= 1");
        if (counts[i] < 0 || counts[i] > totals[i])
            throw std::invalid_argument("fit_pheprob: need 0 <= anchor count <= total count");
        if (counts[i] > 0) any_nonzero = true;
    }
    if (!any_nonzero)
        throw std::invalid_argument(
            "fit_pheprob: every anchor count is zero; the mixture is unidentifiable. "
            "Check that the anchor codes actually occur in the records.");

    // Ratio-split init: patients above the median count ratio seed the case
    // component. Deterministic, usually lands in the right basin.
    std::vector<double> ratios(counts.size());
    for (size_t i = 0; i < counts.size(); ++i)
        ratios[i] = static_cast<double>(counts[i]) / static_cast<double>(totals[i]);
    std::vector<double> sorted = ratios;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    double c_hi = 0, s_hi = 0, c_lo = 0, s_lo = 0, n_hi = 0;
    for (size_t i = 0; i < counts.size(); ++i) {
        if (ratios[i] > median) {
            c_hi += counts[i];
            s_hi += totals[i];
            n_hi += 1;
        } else {
            c_lo += counts[i];
            s_lo += totals[i];
        }
    }
    if (n_hi == 0 || n_hi == static_cast<double>(counts.size())) {
        c_hi = c_lo / 2 + 1;
        s_hi = s_lo / 2 + 1;
        n_hi = counts.size() / 2.0;
    }

    PheprobModel best = run_em(counts, totals,
                               n_hi / static_cast<double>(counts.size()),
                               s_hi > 0 ? c_hi / s_hi : 0.5,
                               s_lo > 0 ? c_lo / s_lo : 0.1, params);

    auto eng = make_engine(derive_seed(seed, "pheprob-restarts"));
    std::uniform_real_distribution<double> u01(0.02, 0.98);
    for (int r = 0; r < params.restarts; ++r) {
        const double pa = u01(eng), pb = u01(eng), pi = u01(eng);
        PheprobModel cand = run_em(counts, totals, pi, std::max(pa, pb), std::min(pa, pb), params);
        if (cand.loglik > best.loglik) best = cand;
    }
    return best;
}

std::vector<double> pheprob_posteriors(const PheprobModel& model, const std::vector<int>& counts,
                                       const std::vector<int>& totals) {
    if (counts.size() != totals.size())
        throw std::invalid_argument("pheprob_posteriors: size mismatch");
    std::vector<double> post(counts.size());
    const double log_pi = std::log(std::min(1.0 - 1e-12, std::max(1e-12, model.pi)));
    const double log_1mpi = std::log1p(-std::min(1.0 - 1e-12, std::max(1e-12, model.pi)));
    for (size_t i = 0; i < counts.size(); ++i) {
        if (totals[i] < 1 || counts[i] < 0 || counts[i] > totals[i])
            throw std::invalid_argument("pheprob_posteriors: invalid count pair");
        const double a = log_pi + log_pmf_kernel(counts[i], totals[i], clamp_rate(model.p_case));
        const double b =
            log_1mpi + log_pmf_kernel(counts[i], totals[i], clamp_rate(model.p_control));
        const double mx = std::max(a, b);
        post[i] = std::exp(a - mx) / (std::exp(a - mx) + std::exp(b - mx));
    }
    return post;
}

void pheprob_counts(const std::vector<PatientRecord>& records, const AnchorSpec& anchor,
                    std::vector<int>* counts, std::vector<int>* totals) {
    counts->clear();
    totals->clear();
    counts->reserve(records.size());
    totals->reserve(records.size());
    for (const auto& rec : records) {
        int c = 0, s = 0;
        for (const auto& v : rec.visits)
            for (const auto& code : v) {
                ++s;
                if (anchor.matches(code)) ++c;
            }
        counts->push_back(c);
        totals->push_back(s);
    }
}

std::string save_pheprob(const PheprobModel& model) {
    nlohmann::json j;
    j["kind"] = "pheprob";
    j["pi"] = model.pi;
    j["p_case"] = model.p_case;
    j["p_control"] = model.p_control;
    j["loglik"] = model.loglik;
    j["iterations"] = model.iterations;
    j["converged"] = model.converged;
    return j.dump(2);
}

PheprobModel load_pheprob(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("kind") != "pheprob") throw std::runtime_error("load_pheprob: wrong model kind");
    PheprobModel m;
    m.pi = j.at("pi").get<double>();
    m.p_case = j.at("p_case").get<double>();
    m.p_control = j.at("p_control").get<double>();
    m.loglik = j.at("loglik").get<double>();
    m.iterations = j.at("iterations").get<int>();
    m.converged = j.at("converged").get<bool>();
    return m;
}

}  // namespace anchorpheno
