#pragma once

#include <gensens/core_data.hpp>
#include <gensens/error.hpp>
#include <gensens/rng.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace gensens {

/// One cell of a discrete population: covariate profile, its probability
/// mass, the selection and assignment mechanisms, and mean potential outcomes.
struct Profile {
    std::vector<double> v; // observed effect modifiers
    std::vector<double> u; // unobserved effect modifiers
    std::vector<double> x; // further adjustment covariates (not modifiers)
    double mass = 0.0;
    std::vector<double> selection;  // P(S = s | profile), s = 1..m
    std::vector<double> assignment; // P(A = 1 | X, S = s), s = 1..m
    double y1 = 0.0, y0 = 0.0;      // E(Y^a | profile)

    double tau() const { return y1 - y0; }
    double p_selected() const {
        double r = 0.0;
        for (double p : selection) r += p;
        return r;
    }
};

/// Finite population with an explicit joint table. The individual effect of a
/// unit is taken to be its profile's mean effect.
class DiscretePopulation {
public:
    DiscretePopulation(std::string name, int studies, std::vector<Profile> profiles,
                       std::vector<std::string> v_names = {}, std::vector<std::string> x_names = {},
                       double noise_sd = 1.0)
        : name_(std::move(name)), studies_(studies), profiles_(std::move(profiles)),
          v_names_(std::move(v_names)), x_names_(std::move(x_names)), noise_sd_(noise_sd) {
        validate();
    }

    const std::string& name() const { return name_; }
    int studies() const { return studies_; }
    const std::vector<Profile>& profiles() const { return profiles_; }
    const std::vector<std::string>& v_names() const { return v_names_; }
    const std::vector<std::string>& x_names() const { return x_names_; }
    double noise_sd() const { return noise_sd_; }

private:
    void validate() {
        auto fail = [&](const std::string& msg) { throw Error(ErrorCode::Validation, "oracle", name_ + ": " + msg); };
        if (studies_ < 1) fail("at least one study is required");
        if (profiles_.empty()) fail("no profiles");
        double total = 0.0;
        const std::size_t nv = profiles_.front().v.size(), nu = profiles_.front().u.size(),
                          nx = profiles_.front().x.size();
        if (v_names_.empty())
            for (std::size_t j = 0; j < nv; ++j) v_names_.push_back("v" + std::to_string(j + 1));
        if (x_names_.empty())
            for (std::size_t j = 0; j < nx; ++j) x_names_.push_back("x" + std::to_string(j + 1));
        if (v_names_.size() != nv || x_names_.size() != nx) fail("covariate names do not match profiles");
        for (std::size_t i = 0; i < profiles_.size(); ++i) {
            const auto& p = profiles_[i];
            const std::string at = "profile " + std::to_string(i);
            if (p.v.size() != nv || p.u.size() != nu || p.x.size() != nx) fail(at + " has ragged covariates");
            if (!(p.mass >= 0.0)) fail(at + " has negative mass");
            if (p.selection.size() != static_cast<std::size_t>(studies_) ||
                p.assignment.size() != static_cast<std::size_t>(studies_))
                fail(at + " needs one selection and one assignment probability per study");
            for (std::size_t s = 0; s < p.selection.size(); ++s) {
                if (!(p.selection[s] >= 0.0 && p.selection[s] <= 1.0)) fail(at + " selection outside [0, 1]");
                if (p.selection[s] > 0.0 && !(p.assignment[s] > 0.0 && p.assignment[s] < 1.0))
                    throw Error(ErrorCode::Positivity, "oracle",
                                name_ + ": " + at + " violates treatment positivity in study " +
                                    std::to_string(s + 1));
            }
            if (p.p_selected() > 1.0 + 1e-15) fail(at + " selection probabilities sum above 1");
            if (!std::isfinite(p.y1) || !std::isfinite(p.y0)) fail(at + " has non-finite outcomes");
            total += p.mass;
        }
        if (std::abs(total - 1.0) > 1e-12) fail("masses sum to " + std::to_string(total));

        // U may modify effects but must not drive assignment: P(A | V, X, U, S)
        // has to be the same for every U sharing (V, X).
        std::map<std::vector<double>, std::vector<double>> seen;
        for (std::size_t i = 0; i < profiles_.size(); ++i) {
            const auto& p = profiles_[i];
            auto key = p.v;
            key.insert(key.end(), p.x.begin(), p.x.end());
            auto [it, inserted] = seen.emplace(key, p.assignment);
            if (inserted) continue;
            for (std::size_t s = 0; s < p.assignment.size(); ++s)
                if (std::abs(it->second[s] - p.assignment[s]) > 1e-15)
                    fail("profile " + std::to_string(i) + ": assignment depends on U (confounding U is "
                         "outside the framework)");
        }
    }

    std::string name_;
    int studies_;
    std::vector<Profile> profiles_;
    std::vector<std::string> v_names_, x_names_;
    double noise_sd_;
};

/// Weights evaluated at one profile; lambda and gamma are indexed [s - 1][a].
struct ProfileWeights {
    double w = 0.0;
    std::vector<std::array<double, 2>> lambda;
    std::vector<std::array<double, 2>> gamma;
};

namespace detail {

inline std::vector<double> concat(std::vector<double> a, const std::vector<double>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

} // namespace detail

/// Exact weights by summation over the joint table. With include_u the
/// generalization weight conditions on (V, U) and the propensity on
/// (X, U, S); otherwise on V and (X, S).
inline std::vector<ProfileWeights> true_weights(const DiscretePopulation& pop, bool include_u) {
    const auto& prof = pop.profiles();
    const auto m = static_cast<std::size_t>(pop.studies());

    double p_r1 = 0.0;
    for (const auto& p : prof) p_r1 += p.mass * p.p_selected();
    const double p_r0 = 1.0 - p_r1;
    if (!(p_r1 > 0.0) || !(p_r0 > 0.0))
        throw Error(ErrorCode::Positivity, "oracle", pop.name() + ": P(R = 1) must lie in (0, 1)");

    // Selection by modifier set.
    std::map<std::vector<double>, std::array<double, 2>> by_mod; // key -> {mass R=0, mass R=1}
    auto mod_key = [&](const Profile& p) { return include_u ? detail::concat(p.v, p.u) : p.v; };
    for (const auto& p : prof) {
        auto& acc = by_mod[mod_key(p)];
        acc[0] += p.mass * (1.0 - p.p_selected());
        acc[1] += p.mass * p.p_selected();
    }

    // Treatment by (S, A) and by (X, S, A), all within R = 1.
    std::vector<std::array<double, 2>> by_study(m, {0.0, 0.0});
    std::map<std::vector<double>, std::vector<std::array<double, 2>>> by_x;
    auto x_key = [&](const Profile& p) {
        auto k = detail::concat(p.v, p.x);
        return include_u ? detail::concat(k, p.u) : k;
    };
    std::array<double, 2> by_arm{0.0, 0.0};
    for (const auto& p : prof) {
        auto& cell = by_x[x_key(p)];
        cell.resize(m, {0.0, 0.0});
        for (std::size_t s = 0; s < m; ++s) {
            const double ps = p.mass * p.selection[s];
            const double t = ps * p.assignment[s];
            by_study[s][1] += t;
            by_study[s][0] += ps - t;
            cell[s][1] += t;
            cell[s][0] += ps - t;
            by_arm[1] += t;
            by_arm[0] += ps - t;
        }
    }

    std::vector<ProfileWeights> out(prof.size());
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const auto& p = prof[i];
        const auto& sel = by_mod.at(mod_key(p));
        if (!(sel[1] > 0.0))
            throw Error(ErrorCode::Positivity, "oracle",
                        pop.name() + ": profile " + std::to_string(i) +
                            " has no chance of study participation given its modifiers");
        out[i].w = (p_r1 / p_r0) * (sel[0] / sel[1]);
        out[i].lambda.assign(m, {0.0, 0.0});
        out[i].gamma.assign(m, {0.0, 0.0});
        const auto& cell = by_x.at(x_key(p));
        for (std::size_t s = 0; s < m; ++s) {
            const double study_total = by_study[s][0] + by_study[s][1];
            const double cell_total = cell[s][0] + cell[s][1];
            for (int a = 0; a < 2; ++a) {
                if (study_total > 0.0)
                    out[i].lambda[s][static_cast<std::size_t>(a)] =
                        (by_arm[static_cast<std::size_t>(a)] / p_r1) /
                        (by_study[s][static_cast<std::size_t>(a)] / study_total);
                if (cell_total > 0.0 && study_total > 0.0)
                    out[i].gamma[s][static_cast<std::size_t>(a)] =
                        (by_study[s][static_cast<std::size_t>(a)] / study_total) /
                        (cell[s][static_cast<std::size_t>(a)] / cell_total);
            }
        }
    }
    return out;
}

struct OracleReport {
    std::string population;
    double exact_pate = 0.0;              // E(tau | R = 0)
    double identified_value = 0.0;        // identification formula with observed-modifier weights
    double identification_gap = 0.0;      // identified_value - exact_pate
    double exact_estimator_expectation = 0.0; // limit of the weighted estimator, summed over (S, A)
    double e_r_w_tau = 0.0;               // E_R(w tau)
    double e_r_wstar_tau = 0.0;           // E_R(w* tau)
    double exact_bias = 0.0;              // estimator expectation - exact_pate
    double cov_eps_tau = 0.0;             // cov_R(w - w*, tau)
    double closed_form_bias = 0.0;        // bias formula at the exact parameters
    double r2_eps = 0.0, rho = 0.0, sigma2_tau = 0.0;
    double var_w = 0.0, var_wstar = 0.0, var_eps = 0.0;
    double mean_w = 0.0, mean_wstar = 0.0;
    double orthogonality_gap = 0.0; // var(w*) - var(w) - var(eps)
    double gamma_gap = 0.0;         // max |gamma* - gamma|
    double lambda_gap = 0.0;        // max |lambda* - lambda|
    bool a5_holds = true;           // per-study CATE given V equals the target's
};

namespace detail {

/// Largest |E(tau | V, S = s) - E(tau | V, R = 0)| over V cells present in both.
inline double a5_violation(const DiscretePopulation& pop) {
    const auto m = static_cast<std::size_t>(pop.studies());
    std::map<std::vector<double>, std::vector<std::array<double, 2>>> acc; // [0]=target, [s]; {mass, mass*tau}
    for (const auto& p : pop.profiles()) {
        auto& cell = acc[p.v];
        cell.resize(m + 1, {0.0, 0.0});
        const double m0 = p.mass * (1.0 - p.p_selected());
        cell[0][0] += m0;
        cell[0][1] += m0 * p.tau();
        for (std::size_t s = 0; s < m; ++s) {
            const double ms = p.mass * p.selection[s];
            cell[s + 1][0] += ms;
            cell[s + 1][1] += ms * p.tau();
        }
    }
    double worst = 0.0;
    for (const auto& [v, cell] : acc) {
        if (!(cell[0][0] > 0.0)) continue;
        const double target = cell[0][1] / cell[0][0];
        for (std::size_t s = 1; s <= m; ++s)
            if (cell[s][0] > 0.0) worst = std::max(worst, std::abs(cell[s][1] / cell[s][0] - target));
    }
    return worst;
}

} // namespace detail

/// Every exact quantity of the bias decomposition by enumeration.
inline OracleReport analyze_population(const DiscretePopulation& pop) {
    const auto& prof = pop.profiles();
    const auto m = static_cast<std::size_t>(pop.studies());
    const auto w = true_weights(pop, false);
    const auto ws = true_weights(pop, true);

    OracleReport r;
    r.population = pop.name();
    double p_r1 = 0.0;
    for (const auto& p : prof) p_r1 += p.mass * p.p_selected();
    const double p_r0 = 1.0 - p_r1;

    // Target effect.
    for (const auto& p : prof) r.exact_pate += p.mass * (1.0 - p.p_selected()) * p.tau();
    r.exact_pate /= p_r0;

    // Identification formula and estimator limit, both summed over (profile, S, A).
    // The estimator divides by N_a / N -> P(A = a | R = 1) after scaling by P(R = 1).
    std::array<double, 2> arm{0.0, 0.0};
    for (const auto& p : prof)
        for (std::size_t s = 0; s < m; ++s) {
            arm[1] += p.mass * p.selection[s] * p.assignment[s];
            arm[0] += p.mass * p.selection[s] * (1.0 - p.assignment[s]);
        }
    double ident = 0.0, est1 = 0.0, est0 = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const auto& p = prof[i];
        const double odds = w[i].w * p_r0 / p_r1; // P(R=0|V) / P(R=1|V)
        for (std::size_t s = 0; s < m; ++s) {
            const double e = p.assignment[s];
            const double t = p.mass * p.selection[s] * e, c = p.mass * p.selection[s] * (1.0 - e);
            ident += odds * (t * p.y1 / e - c * p.y0 / (1.0 - e));
            est1 += t * w[i].w * w[i].lambda[s][1] * w[i].gamma[s][1] * p.y1;
            est0 += c * w[i].w * w[i].lambda[s][0] * w[i].gamma[s][0] * p.y0;
        }
    }
    r.identified_value = ident / p_r0;
    r.identification_gap = r.identified_value - r.exact_pate;
    r.exact_estimator_expectation = est1 / arm[1] - est0 / arm[0];
    r.exact_bias = r.exact_estimator_expectation - r.exact_pate;

    // Moments over the study population R = 1.
    double ew = 0.0, ews = 0.0, et = 0.0, ewt = 0.0, ewst = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const double q = prof[i].mass * prof[i].p_selected() / p_r1;
        const double t = prof[i].tau();
        ew += q * w[i].w;
        ews += q * ws[i].w;
        et += q * t;
        ewt += q * w[i].w * t;
        ewst += q * ws[i].w * t;
    }
    double vw = 0.0, vws = 0.0, ve = 0.0, vt = 0.0, cet = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const double q = prof[i].mass * prof[i].p_selected() / p_r1;
        const double dw = w[i].w - ew, dws = ws[i].w - ews;
        const double de = (w[i].w - ws[i].w) - (ew - ews);
        const double dt = prof[i].tau() - et;
        vw += q * dw * dw;
        vws += q * dws * dws;
        ve += q * de * de;
        vt += q * dt * dt;
        cet += q * de * dt;
    }
    r.mean_w = ew;
    r.mean_wstar = ews;
    r.e_r_w_tau = ewt;
    r.e_r_wstar_tau = ewst;
    r.var_w = vw;
    r.var_wstar = vws;
    r.var_eps = ve;
    r.sigma2_tau = vt;
    r.cov_eps_tau = cet;
    r.orthogonality_gap = vws - vw - ve;
    r.r2_eps = vws > 0.0 ? ve / vws : 0.0;
    r.rho = (ve > 0.0 && vt > 0.0) ? cet / std::sqrt(ve * vt) : 0.0;

    // Closed form at the exact parameters; R^2 = 1 exactly when w is constant.
    if (vw == 0.0)
        r.closed_form_bias = r.rho * std::sqrt(vws * vt);
    else
        r.closed_form_bias = r.rho * std::sqrt(r.r2_eps / (1.0 - r.r2_eps) * vw * vt);

    for (std::size_t i = 0; i < prof.size(); ++i)
        for (std::size_t s = 0; s < m; ++s)
            if (prof[i].selection[s] > 0.0)
                for (std::size_t a = 0; a < 2; ++a) {
                    r.gamma_gap = std::max(r.gamma_gap, std::abs(ws[i].gamma[s][a] - w[i].gamma[s][a]));
                    r.lambda_gap = std::max(r.lambda_gap, std::abs(ws[i].lambda[s][a] - w[i].lambda[s][a]));
                }
    r.a5_holds = detail::a5_violation(pop) <= 1e-12;
    return r;
}

struct IdentificationCheck {
    double identified = 0.0, exact = 0.0, gap = 0.0;
    bool holds = false;
};

/// Identification formula against E(Y1 - Y0 | R = 0); `holds` at 1e-12.
inline IdentificationCheck verify_identification(const DiscretePopulation& pop, double tol = 1e-12) {
    const auto r = analyze_population(pop);
    return {r.identified_value, r.exact_pate, r.identification_gap, std::abs(r.identification_gap) <= tol};
}

/// Bias three ways: estimator limit minus PATE, cov(eps, tau), closed form.
/// Throws when they disagree beyond `tol`.
inline OracleReport verify_bias_decomposition(const DiscretePopulation& pop, double tol = 1e-12) {
    auto r = analyze_population(pop);
    const double scale = std::max(1.0, std::abs(r.exact_pate));
    if (std::abs(r.exact_bias - r.cov_eps_tau) > tol * scale ||
        std::abs((r.e_r_w_tau - r.e_r_wstar_tau) - r.cov_eps_tau) > tol * scale ||
        std::abs(r.closed_form_bias - r.cov_eps_tau) > tol * scale)
        throw Error(ErrorCode::Inconsistency, "oracle",
                    pop.name() + ": bias routes disagree (exact " + std::to_string(r.exact_bias) +
                        ", cov " + std::to_string(r.cov_eps_tau) +
                        ", closed form " + std::to_string(r.closed_form_bias) + ")");
    return r;
}

struct OracleSample {
    PooledDataset dataset;
    std::vector<std::size_t> profile; // profile index per row
};

/// n i.i.d. units from the population law. Selected units receive a study,
/// treatment, and outcome mean + N(0, noise_sd^2); U is not exposed.
inline OracleSample sample_with_profiles(const DiscretePopulation& pop, std::size_t n, std::uint64_t seed) {
    const auto& prof = pop.profiles();
    std::vector<double> cum(prof.size());
    double c = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) cum[i] = (c += prof[i].mass);

    KeyedRng rng(seed, 0, 3);
    const std::size_t nv = pop.v_names().size(), nx = pop.x_names().size();
    std::vector<int> study(n);
    std::vector<std::int8_t> treatment(n, -1);
    std::vector<double> outcome(n, std::numeric_limits<double>::quiet_NaN());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nv + nx));
    std::vector<std::size_t> idx(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double u = rng.uniform() * c;
        std::size_t i = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
        if (i >= prof.size()) i = prof.size() - 1;
        while (prof[i].mass == 0.0 && i > 0) --i;
        const auto& p = prof[i];
        idx[r] = i;
        const double v = rng.uniform();
        double acc = 0.0;
        int s = 0;
        for (std::size_t k = 0; k < p.selection.size(); ++k) {
            acc += p.selection[k];
            if (v < acc) {
                s = static_cast<int>(k) + 1;
                break;
            }
        }
        const bool treated = rng.bernoulli(s > 0 ? p.assignment[static_cast<std::size_t>(s - 1)] : 0.5);
        const double noise = rng.normal() * pop.noise_sd();
        study[r] = s;
        if (s > 0) {
            treatment[r] = treated ? 1 : 0;
            outcome[r] = (treated ? p.y1 : p.y0) + noise;
        }
        for (std::size_t j = 0; j < nv; ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = p.v[j];
        for (std::size_t j = 0; j < nx; ++j)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(nv + j)) = p.x[j];
    }
    std::vector<std::string> names = pop.v_names();
    names.insert(names.end(), pop.x_names().begin(), pop.x_names().end());
    std::vector<CovariateGroup> groups;
    for (std::size_t j = 0; j < names.size(); ++j) groups.push_back({names[j], {j}});
    return {PooledDataset(std::move(study), std::move(treatment), std::move(outcome), std::move(x), names,
                          groups, pop.v_names(), names),
            std::move(idx)};
}

inline PooledDataset sample_from(const DiscretePopulation& pop, std::size_t n, std::uint64_t seed) {
    return sample_with_profiles(pop, n, seed).dataset;
}

// JSON table format:
// { "name": ..., "studies": m, "v_names": [...], "x_names": [...], "noise_sd": 1,
//   "profiles": [ {"v": [...], "u": [...], "x": [...], "mass": p,
//                  "selection": [P(S=1|.), ...], "assignment": [P(A=1|X,S=1), ...],
//                  "y1": EY1, "y0": EY0}, ... ] }
inline DiscretePopulation population_from_json(const nlohmann::json& j) {
    try {
        std::vector<Profile> profiles;
        for (const auto& p : j.at("profiles")) {
            Profile q;
            q.v = p.value("v", std::vector<double>{});
            q.u = p.value("u", std::vector<double>{});
            q.x = p.value("x", std::vector<double>{});
            q.mass = p.at("mass").get<double>();
            q.selection = p.at("selection").get<std::vector<double>>();
            q.assignment = p.at("assignment").get<std::vector<double>>();
            q.y1 = p.at("y1").get<double>();
            q.y0 = p.at("y0").get<double>();
            profiles.push_back(std::move(q));
        }
        return DiscretePopulation(j.value("name", std::string("population")), j.at("studies").get<int>(),
                                  std::move(profiles), j.value("v_names", std::vector<std::string>{}),
                                  j.value("x_names", std::vector<std::string>{}), j.value("noise_sd", 1.0));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Schema, "oracle", std::string("population table: ") + e.what());
    }
}

inline DiscretePopulation load_population(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "oracle", "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Schema, "oracle", path + ": " + e.what());
    }
    return population_from_json(j);
}

inline nlohmann::json to_json(const OracleReport& r) {
    return {{"population", r.population},
            {"exact_pate", r.exact_pate},
            {"identified_value", r.identified_value},
            {"identification_gap", r.identification_gap},
            {"exact_estimator_expectation", r.exact_estimator_expectation},
            {"e_r_w_tau", r.e_r_w_tau},
            {"e_r_wstar_tau", r.e_r_wstar_tau},
            {"exact_bias", r.exact_bias},
            {"cov_eps_tau", r.cov_eps_tau},
            {"closed_form_bias", r.closed_form_bias},
            {"r2_eps", r.r2_eps},
            {"rho", r.rho},
            {"sigma2_tau", r.sigma2_tau},
            {"var_w", r.var_w},
            {"var_wstar", r.var_wstar},
            {"a5_holds", r.a5_holds}};
}

} // namespace gensens
