#pragma once

#include <gensens/bootstrap.hpp>
#include <gensens/core_data.hpp>
#include <gensens/error.hpp>
#include <gensens/logistic.hpp>
#include <gensens/parallel.hpp>
#include <gensens/rng.hpp>
#include <gensens/wald.hpp>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace gensens {

struct SimConfig {
    int n = 1000;       // expected size of the target sample and of each trial
    double k = 1.0;     // strength of the third modifier
    double selection_log_or = std::log(1.25);
    double xi_log_or = std::log(1.25);
    double zeta_log_or = std::log(1.5);
    double correlation = 0.5;
    double treatment_prob = 0.5;
    bool include_x3 = false; // let weight estimation see the third modifier
    bool resample_target = false; // per-trial bootstrap also redraws the target sample
    std::uint64_t seed = 0;
    int replications = 1000;
    int bootstrap = 1000;
    std::size_t intercept_pool = 1000000;
    unsigned threads = 1;
};

/// Intercepts of the selection and allocation models.
struct SimIntercepts {
    double beta0 = 0.0, xi0 = 0.0, zeta0 = 0.0;
    double selected_share = 0.0;                 // E P(R = 1); 3/4 by design
    std::array<double, 3> trial_share{0, 0, 0}; // E(pi_s | R = 1); 1/3 each by design
};

namespace detail {

inline Eigen::Matrix3d sim_covariance(double rho) {
    Eigen::Matrix3d s = Eigen::Matrix3d::Constant(rho);
    s.diagonal().setOnes();
    return s;
}

inline Eigen::Vector3d draw_covariates(KeyedRng& rng, const Eigen::Matrix3d& chol) {
    Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
    return chol * z;
}

/// pi_1, pi_2, pi_3 of the multinomial allocation.
inline std::array<double, 3> allocation_probs(double sum_x, double xi0, double xi, double zeta0,
                                              double zeta) {
    const double e1 = std::exp(xi0 + xi * sum_x), e2 = std::exp(zeta0 + zeta * sum_x);
    const double den = 1.0 + e1 + e2;
    return {e1 / den, e2 / den, 1.0 / den};
}

} // namespace detail

/// Solves the intercepts on a fixed covariate pool so that on average a
/// quarter of the draws form the target and each trial receives a third of
/// the selected units. Only the covariate sum enters any model.
inline SimIntercepts solve_intercepts(const SimConfig& cfg) {
    const Eigen::Matrix3d chol = detail::sim_covariance(cfg.correlation).llt().matrixL();
    std::vector<double> sums(cfg.intercept_pool);
    KeyedRng rng(0x5eed'1a7e'c0de'0001ULL, 0, 0);
    for (auto& s : sums) s = detail::draw_covariates(rng, chol).sum();

    SimIntercepts out;
    const double target_share = 0.75;
    auto selected_mean = [&](double b0) {
        double acc = 0.0;
        for (double s : sums) acc += expit(b0 + cfg.selection_log_or * s);
        return acc / static_cast<double>(sums.size());
    };
    double lo = -20.0, hi = 20.0;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        (selected_mean(mid) < target_share ? lo : hi) = mid;
    }
    out.beta0 = 0.5 * (lo + hi);
    out.selected_share = selected_mean(out.beta0);

    std::vector<double> p(sums.size());
    double p_total = 0.0;
    for (std::size_t i = 0; i < sums.size(); ++i) {
        p[i] = expit(out.beta0 + cfg.selection_log_or * sums[i]);
        p_total += p[i];
    }
    auto shares = [&](double xi0, double zeta0) {
        std::array<double, 3> acc{0, 0, 0};
        for (std::size_t i = 0; i < sums.size(); ++i) {
            const auto pi = detail::allocation_probs(sums[i], xi0, cfg.xi_log_or, zeta0, cfg.zeta_log_or);
            for (int s = 0; s < 3; ++s) acc[static_cast<std::size_t>(s)] += p[i] * pi[static_cast<std::size_t>(s)];
        }
        for (auto& a : acc) a /= p_total;
        return acc;
    };
    // Multiplicative calibration of the two non-reference categories.
    double xi0 = 0.0, zeta0 = 0.0;
    std::array<double, 3> sh = shares(xi0, zeta0);
    int it = 0;
    for (; it < 500; ++it) {
        if (std::abs(sh[0] - 1.0 / 3.0) < 1e-10 && std::abs(sh[1] - 1.0 / 3.0) < 1e-10) break;
        xi0 += std::log(sh[2] / sh[0]);
        zeta0 += std::log(sh[2] / sh[1]);
        sh = shares(xi0, zeta0);
    }
    if (std::abs(sh[0] - 1.0 / 3.0) > 0.005 / 3.0 || std::abs(sh[1] - 1.0 / 3.0) > 0.005 / 3.0)
        throw Error(ErrorCode::Convergence, "simulation", "allocation intercepts did not converge");
    out.xi0 = xi0;
    out.zeta0 = zeta0;
    out.trial_share = sh;
    return out;
}

struct SimUnit {
    Eigen::Vector3d x;
    int study = 0; // 0 target, 1..3 trials
    int treatment = -1;
    double y0 = 0.0, y1 = 0.0;
};

struct SimReplicate {
    PooledDataset dataset;
    double truth = 0.0;                                    // exact PATE of the design
    double wald_p = std::numeric_limits<double>::quiet_NaN(); // filled by analyze_replicate
};

/// Individual effect tau(x) = -5 - 2 x1 - 2 x2 - 2 k x3.
inline double sim_effect(const Eigen::Vector3d& x, double k) {
    return -5.0 - 2.0 * x(0) - 2.0 * x(1) - 2.0 * k * x(2);
}

/// Raw units of replicate `rep` (4n draws before selection).
inline std::vector<SimUnit> simulate_units(const SimConfig& cfg, const SimIntercepts& ic, std::uint64_t rep) {
    const Eigen::Matrix3d chol = detail::sim_covariance(cfg.correlation).llt().matrixL();
    KeyedRng rng(cfg.seed, rep, 1);
    const auto total = static_cast<std::size_t>(4) * static_cast<std::size_t>(cfg.n);
    std::vector<SimUnit> units(total);
    for (auto& u : units) {
        u.x = detail::draw_covariates(rng, chol);
        const double s = u.x.sum();
        const bool selected = rng.bernoulli(expit(ic.beta0 + cfg.selection_log_or * s));
        const auto pi = detail::allocation_probs(s, ic.xi0, cfg.xi_log_or, ic.zeta0, cfg.zeta_log_or);
        const double v = rng.uniform();
        const bool treated = rng.bernoulli(cfg.treatment_prob);
        const double noise = rng.normal();
        u.y0 = 5.0 + u.x(0) + u.x(1) + cfg.k * u.x(2) + noise;
        u.y1 = u.y0 + sim_effect(u.x, cfg.k);
        if (selected) {
            u.study = v < pi[0] ? 1 : (v < pi[0] + pi[1] ? 2 : 3);
            u.treatment = treated ? 1 : 0;
        }
    }
    return units;
}

/// Packages units as a dataset. The third modifier is only exposed when
/// cfg.include_x3 is set; otherwise it never enters the covariate matrix.
inline PooledDataset sim_dataset(const SimConfig& cfg, const std::vector<SimUnit>& units) {
    const std::size_t n = units.size();
    const int p = cfg.include_x3 ? 3 : 2;
    std::vector<int> study(n);
    std::vector<std::int8_t> treatment(n);
    std::vector<double> outcome(n);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& u = units[i];
        study[i] = u.study;
        treatment[i] = static_cast<std::int8_t>(u.treatment);
        outcome[i] = u.study == 0 ? std::numeric_limits<double>::quiet_NaN()
                                  : (u.treatment == 1 ? u.y1 : u.y0);
        x.row(static_cast<Eigen::Index>(i)) = u.x.head(p).transpose();
    }
    std::vector<std::string> names{"x1", "x2"};
    if (cfg.include_x3) names.push_back("x3");
    std::vector<CovariateGroup> groups;
    for (std::size_t j = 0; j < names.size(); ++j) groups.push_back({names[j], {j}});
    return PooledDataset(std::move(study), std::move(treatment), std::move(outcome), std::move(x), names,
                         groups, names, names);
}

/// E(tau | R = 0) by one-dimensional quadrature: the selection model depends
/// on x only through u = b'x, and E(x | u) is linear in u.
inline double exact_dgp_pate(const SimConfig& cfg, const SimIntercepts& ic) {
    const Eigen::Matrix3d sigma = detail::sim_covariance(cfg.correlation);
    const Eigen::Vector3d b = Eigen::Vector3d::Constant(cfg.selection_log_or);
    const Eigen::Vector3d c(-2.0, -2.0, -2.0 * cfg.k); // tau = -5 + c'x
    const double s2 = b.dot(sigma * b);
    if (s2 == 0.0) return -5.0;
    const double s = std::sqrt(s2);
    const double slope = c.dot(sigma * b) / s2; // E(c'x | u) = slope * u
    auto density = [&](double u) { return std::exp(-0.5 * u * u / s2) * (1.0 - expit(ic.beta0 + u)); };
    using boost::math::quadrature::gauss_kronrod;
    const double lim = 40.0 * s;
    const double mass = gauss_kronrod<double, 61>::integrate(density, -lim, lim, 15, 1e-14);
    const double first =
        gauss_kronrod<double, 61>::integrate([&](double u) { return u * density(u); }, -lim, lim, 15, 1e-14);
    return -5.0 + slope * first / mass;
}

inline double exact_dgp_pate(const SimConfig& cfg) { return exact_dgp_pate(cfg, solve_intercepts(cfg)); }

struct MonteCarloValue {
    double value = 0.0;
    double standard_error = 0.0;
};

/// Same quantity by direct simulation: ratio of E[(1 - p(x)) tau(x)] to
/// E[1 - p(x)], with a delta-method standard error.
inline MonteCarloValue monte_carlo_dgp_pate(const SimConfig& cfg, const SimIntercepts& ic, std::size_t draws,
                                            std::uint64_t seed) {
    const Eigen::Matrix3d chol = detail::sim_covariance(cfg.correlation).llt().matrixL();
    KeyedRng rng(seed, 0, 7);
    double sw = 0.0, swt = 0.0, sww = 0.0, swtwt = 0.0, swwt = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const Eigen::Vector3d x = detail::draw_covariates(rng, chol);
        const double w = 1.0 - expit(ic.beta0 + cfg.selection_log_or * x.sum());
        const double wt = w * sim_effect(x, cfg.k);
        sw += w;
        swt += wt;
        sww += w * w;
        swtwt += wt * wt;
        swwt += w * wt;
    }
    const double n = static_cast<double>(draws);
    const double mw = sw / n, mwt = swt / n;
    const double r = mwt / mw;
    // Var of the ratio via the linearization wt - r w.
    const double var_lin = (swtwt - 2.0 * r * swwt + r * r * sww) / n - (mwt - r * mw) * (mwt - r * mw);
    return {r, std::sqrt(std::max(0.0, var_lin) / n) / mw};
}

inline SimReplicate generate_replicate(const SimConfig& cfg, const SimIntercepts& ic, std::uint64_t rep) {
    return {sim_dataset(cfg, simulate_units(cfg, ic, rep)), exact_dgp_pate(cfg, ic)};
}

struct TrialEstimates {
    std::vector<double> estimates;
    std::vector<double> sds;
    WaldResult wald;
};

/// Generalizes from each trial separately (entropy balancing, per-trial
/// logistic propensities) and tests their equality with bootstrap sds.
inline TrialEstimates analyze_replicate(const SimConfig& cfg, const PooledDataset& data, std::uint64_t rep) {
    TrialEstimates out;
    EstimatorSpec spec;
    spec.weights.generalization = GeneralizationMethod::EntropyBalancing;
    spec.weights.deconfounding = DeconfoundingMethod::LogisticPerStudy;
    for (int s = 1; s <= 3; ++s) {
        const PooledDataset sub = data.restrict_to_study(s);
        const auto point = compute_statistic(sub, spec);
        BootstrapPlan plan;
        plan.replicates = cfg.bootstrap;
        plan.seed = KeyedRng(cfg.seed, rep, 10 + static_cast<std::uint64_t>(s)).engine()();
        plan.threads = 1;
        plan.resample_target = cfg.resample_target;
        const auto boot = bootstrap_estimate(sub, plan, spec);
        out.estimates.push_back(point.tau);
        out.sds.push_back(boot.sd);
    }
    out.wald = wald_test({out.estimates, out.sds});
    return out;
}

struct PowerCell {
    int n = 0;
    double k = 0.0;
    double alpha = 0.0;
    double rejection_rate = 0.0;
    int replicates = 0;
    int failures = 0;
};

struct ReplicateOutcome {
    double p_value = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> estimates, sds;
    std::string failure;
};

/// Per-replicate Wald p-values for one (n, k) design. Failed replicates keep
/// a NaN p-value and the error text.
inline std::vector<ReplicateOutcome> run_design(const SimConfig& cfg, const SimIntercepts& ic) {
    std::vector<ReplicateOutcome> out(static_cast<std::size_t>(cfg.replications));
    parallel_for(out.size(), cfg.threads, [&](std::size_t r) {
        try {
            const PooledDataset data = sim_dataset(cfg, simulate_units(cfg, ic, r));
            const auto t = analyze_replicate(cfg, data, r);
            out[r].p_value = t.wald.p_value;
            out[r].estimates = t.estimates;
            out[r].sds = t.sds;
        } catch (const Error& e) {
            out[r].failure = e.what();
        }
    });
    return out;
}

/// Rejection rates over the {n} x {k} x {alpha} grid. Each (n, k) design uses
/// the same base seed; replicate streams are keyed by index.
inline std::vector<PowerCell> run_power_study(const SimConfig& base, const std::vector<int>& ns,
                                              const std::vector<double>& ks,
                                              const std::vector<double>& alphas) {
    const SimIntercepts ic = solve_intercepts(base);
    std::vector<PowerCell> cells;
    for (int n : ns)
        for (double k : ks) {
            SimConfig cfg = base;
            cfg.n = n;
            cfg.k = k;
            const auto outcomes = run_design(cfg, ic);
            int failures = 0;
            for (const auto& o : outcomes) failures += std::isnan(o.p_value) ? 1 : 0;
            for (double a : alphas) {
                int rejected = 0;
                for (const auto& o : outcomes) rejected += (!std::isnan(o.p_value) && o.p_value < a) ? 1 : 0;
                const int used = cfg.replications - failures;
                cells.push_back({n, k, a, used > 0 ? static_cast<double>(rejected) / used : 0.0,
                                 cfg.replications, failures});
            }
        }
    return cells;
}

inline void write_power_csv(std::ostream& out, const std::vector<PowerCell>& cells) {
    out << "n,k,alpha,rejection_rate,replicates,failures\n";
    char buf[128];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof buf, "%d,%g,%g,%.6f,%d,%d\n", c.n, c.k, c.alpha, c.rejection_rate,
                      c.replicates, c.failures);
        out << buf;
    }
}

} // namespace gensens
