#include "helpers.hpp"

#include <random>

using namespace gensens;
using testutil::study_unit;
using testutil::target_unit;

namespace {

PooledDataset trial(std::uint64_t seed, int n, double effect) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd;
    std::vector<UnitRecord> u;
    for (int i = 0; i < n / 2; ++i) u.push_back(target_unit({{"v", nd(eng)}}));
    for (int i = 0; i < n; ++i) {
        const int a = i % 2;
        const double v = nd(eng);
        u.push_back(study_unit(1, a, 1.0 + v + a * effect * (1 + v) + nd(eng), {{"v", v}}));
    }
    return PooledDataset::from_units(u, {"v"}, {"v"});
}

Eigen::VectorXd ones(const PooledDataset& d) {
    return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d.study_rows().size()));
}

double diff_in_means(const PooledDataset& d) {
    double s[2] = {0, 0};
    int n[2] = {0, 0};
    for (auto i : d.study_rows()) {
        s[d.treatment(i)] += d.outcome(i);
        ++n[d.treatment(i)];
    }
    return s[1] / n[1] - s[0] / n[0];
}

// E_R(tau) and E(tau | R = 0) straight from the profile table.
std::pair<double, double> study_and_target_means(const DiscretePopulation& pop) {
    double r1 = 0, r1t = 0, r0 = 0, r0t = 0;
    for (const auto& p : pop.profiles()) {
        r1 += p.mass * p.p_selected();
        r1t += p.mass * p.p_selected() * p.tau();
        r0 += p.mass * (1 - p.p_selected());
        r0t += p.mass * (1 - p.p_selected()) * p.tau();
    }
    return {r1t / r1, r0t / r0};
}

Eigen::VectorXd true_propensity(const DiscretePopulation& pop, const testutil::Enumerated& e) {
    const auto& rows = e.data.study_rows();
    Eigen::VectorXd p(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k)
        p(static_cast<Eigen::Index>(k)) =
            pop.profiles()[e.profile[rows[k]]].assignment[static_cast<std::size_t>(e.data.study_id(rows[k]) - 1)];
    return p;
}

} // namespace

TEST(Estimators, UnitWeightsGiveDifferenceInMeans) {
    auto d = trial(1, 200, 2.0);
    EXPECT_NEAR(estimate_pate(d, ones(d), ones(d), ones(d)).tau_hat, diff_in_means(d), 1e-12);
}

TEST(Estimators, ConstantOutcomeHandArithmetic) {
    std::vector<UnitRecord> u = {target_unit()};
    for (int a : {1, 0, 0}) u.push_back(study_unit(1, a, 2.0));
    for (int a : {1, 1, 0}) u.push_back(study_unit(2, a, 2.0));
    auto d = PooledDataset::from_units(u, {}, {});
    Eigen::VectorXd w(6);
    w << 1.2, 0.8, 1.0, 0.5, 1.5, 1.0;
    const auto lambda = estimate_combination_weights(d);
    Eigen::VectorXd expected_lambda(6);
    expected_lambda << 1.5, 0.75, 0.75, 0.75, 0.75, 1.5;
    EXPECT_LT((lambda - expected_lambda).cwiseAbs().maxCoeff(), 1e-15);
    // treated: (1.2*1.5 + 0.5*0.75 + 1.5*0.75)/3 = 1.1; control: (0.8*0.75 + 0.75 + 1.5)/3 = 0.95
    EXPECT_NEAR(estimate_pate(d, w, lambda, ones(d)).tau_hat, 2.0 * (1.1 - 0.95), 1e-14);
}

TEST(Estimators, OracleWeightsRecoverExpectation) {
    for (const char* name : {"conditionally_randomized", "multi_study_unequal_ratios", "a5_violating",
                             "u_independent_of_selection", "four_profiles"}) {
        auto pop = testutil::bundled(name);
        auto e = testutil::enumerate_population(pop, testutil::layout_size(name));
        auto ws = testutil::oracle_weight_set(pop, e);
        auto rep = analyze_population(pop);
        const double tau = estimate_pate(e.data, ws).tau_hat;
        EXPECT_NEAR(tau, rep.exact_estimator_expectation, 1e-10) << name;
        if (rep.a5_holds) {
            EXPECT_NEAR(tau, rep.exact_pate, 1e-10) << name;
        }
        // ideal weights remove the bias entirely
        auto ideal = testutil::oracle_weight_set(pop, e, true);
        EXPECT_NEAR(estimate_pate(e.data, ideal).tau_hat, study_and_target_means(pop).second, 1e-10) << name;
    }
}

TEST(Estimators, CovarianceMatchesOracle) {
    for (const char* name : {"conditionally_randomized", "multi_study_unequal_ratios", "a5_violating"}) {
        auto pop = testutil::bundled(name);
        auto e = testutil::enumerate_population(pop, testutil::layout_size(name));
        auto ws = testutil::oracle_weight_set(pop, e);
        const double tau = estimate_pate(e.data, ws).tau_hat;
        const auto m = hajek_moments(e.data, true_propensity(pop, e));
        // cov_R(w, tau) = E_R(w tau) - E_R(tau) since E_R(w) = 1
        const auto tw = true_weights(pop, false);
        double r1 = 0, wt = 0, t = 0;
        for (std::size_t i = 0; i < pop.profiles().size(); ++i) {
            const auto& p = pop.profiles()[i];
            const double mass = p.mass * p.p_selected();
            r1 += mass;
            wt += mass * tw[i].w * p.tau();
            t += mass * p.tau();
        }
        EXPECT_NEAR(estimate_cov_w_tau(tau, m), (wt - t) / r1, 1e-10) << name;
    }
}

TEST(Estimators, LeaveOneOutWithoutAdjustmentIsUnadjustedContrast) {
    auto pop = testutil::bundled("conditionally_randomized");
    auto e = testutil::enumerate_population(pop, 10000);
    auto ws = testutil::oracle_weight_set(pop, e);
    auto r = estimate_pate_leave_one_out(e.data, ws, ones(e.data));
    EXPECT_NEAR(r.tau_hat, study_and_target_means(pop).first, 1e-10);
}

TEST(Estimators, LeaveOnlyModifierIsLambdaGammaEstimate) {
    auto d = trial(2, 300, 1.0);
    auto ws = estimate_weights(d);
    auto w0 = leave_one_out_weights(d, "v").w;
    EXPECT_NEAR(estimate_pate_leave_one_out(d, ws, w0).tau_hat,
                estimate_pate(d, ones(d), ws.lambda, ws.gamma).tau_hat, 1e-12);
}

TEST(Estimators, IrrelevantModifierLeavesEstimate) {
    std::mt19937_64 eng(8);
    std::normal_distribution<double> nd;
    std::vector<UnitRecord> u;
    for (int i = 0; i < 20000; ++i) u.push_back(target_unit({{"v", nd(eng) + 0.5}, {"j", nd(eng)}}));
    for (int i = 0; i < 20000; ++i) {
        const double v = nd(eng), j = nd(eng);
        const int a = i % 2;
        u.push_back(study_unit(1, a, v + a * (1 + v) + nd(eng), {{"v", v}, {"j", j}}));
    }
    auto d = PooledDataset::from_units(u, {"v", "j"}, {"v", "j"});
    auto ws = estimate_weights(d);
    const double full = estimate_pate(d, ws).tau_hat;
    const double loo = estimate_pate_leave_one_out(d, ws, leave_one_out_weights(d, "j").w).tau_hat;
    EXPECT_NEAR(full, loo, 0.02);
}

TEST(Estimators, SingleStudyDatasetMatchesPooled) {
    auto d = trial(3, 400, 1.5);
    auto single = estimate_pate_single_study(d, 1);
    EXPECT_DOUBLE_EQ(single.estimate.tau_hat, estimate_pate(d, estimate_weights(d)).tau_hat);
}

TEST(Estimators, SingleStudyOracle) {
    // Target plus study 2 only, renormalized, is itself a one-study population.
    auto pop = testutil::bundled("multi_study_unequal_ratios");
    std::vector<Profile> profiles;
    for (auto p : pop.profiles()) {
        const double keep = 1 - p.p_selected() + p.selection[1];
        p.mass *= keep;
        p.selection = {p.selection[1] / keep};
        p.assignment = {p.assignment[1]};
        profiles.push_back(p);
    }
    double total = 0;
    for (const auto& p : profiles) total += p.mass;
    for (auto& p : profiles) p.mass /= total;
    double fix = 1;
    for (std::size_t i = 0; i + 1 < profiles.size(); ++i) fix -= profiles[i].mass;
    profiles.back().mass = fix;
    DiscretePopulation sub("study2", 1, profiles, pop.v_names(), pop.x_names());
    const double n = testutil::layout_size("multi_study_unequal_ratios");
    auto full = testutil::enumerate_population(pop, n);
    auto e = testutil::enumerate_population(sub, total * n);
    EXPECT_EQ(e.data.study_rows().size(), full.data.restrict_to_study(2).study_rows().size());
    auto ws = testutil::oracle_weight_set(sub, e);
    EXPECT_NEAR(estimate_pate(e.data, ws).tau_hat, analyze_population(pop).exact_pate, 1e-10);
}

TEST(Estimators, SingleStudyBalancedIsDifferenceInMeans) {
    std::vector<UnitRecord> u;
    for (int i = 0; i < 4; ++i) u.push_back(target_unit({{"v", double(i % 2)}}));
    for (int i = 0; i < 8; ++i) u.push_back(study_unit(1, i % 2, i * 1.5, {{"v", double((i / 2) % 2)}}));
    for (int i = 0; i < 8; ++i) u.push_back(study_unit(2, i % 2, i * 0.5 + 3, {{"v", double(i < 6)}}));
    auto d = PooledDataset::from_units(u, {"v"}, {"v"});
    WeightOptions o;
    o.deconfounding = DeconfoundingMethod::Constant;
    EXPECT_NEAR(estimate_pate_single_study(d, 1, o).estimate.tau_hat, diff_in_means(d.restrict_to_study(1)), 1e-10);
}

TEST(Estimators, UnconvergedWeightsRefused) {
    auto d = trial(4, 50, 1.0);
    auto ws = estimate_weights(d);
    ws.generalization_fit.converged = false;
    EXPECT_EQ(testutil::error_code_of([&] { estimate_pate(d, ws); }), ErrorCode::Convergence);
    EXPECT_NO_THROW(estimate_pate(d, ws, true));
    EXPECT_EQ(testutil::error_code_of([&] { estimate_pate(d, Eigen::VectorXd::Ones(3), ones(d), ones(d)); }),
              ErrorCode::Alignment);
}

TEST(Estimators, HajekConstantPropensityIsPlugInVariance) {
    auto d = trial(5, 300, 1.0);
    auto m = hajek_moments(d, Eigen::VectorXd::Constant(300, 0.5));
    for (int a = 0; a < 2; ++a) {
        double s = 0, ss = 0;
        int n = 0;
        for (auto i : d.study_rows())
            if (d.treatment(i) == a) {
                s += d.outcome(i);
                ++n;
            }
        const double mean = s / n;
        for (auto i : d.study_rows())
            if (d.treatment(i) == a) ss += (d.outcome(i) - mean) * (d.outcome(i) - mean);
        EXPECT_NEAR(m.mu[a], mean, 1e-12);
        EXPECT_NEAR(m.var[a], ss / n, 1e-10);
    }
}

TEST(Estimators, HajekFourUnits) {
    std::vector<UnitRecord> u = {target_unit(), study_unit(1, 1, 2), study_unit(1, 1, 4), study_unit(1, 0, 1),
                                 study_unit(1, 0, 3)};
    auto d = PooledDataset::from_units(u, {}, {});
    Eigen::VectorXd p(4);
    p << 0.25, 0.75, 0.5, 0.75;
    auto m = hajek_moments(d, p);
    EXPECT_NEAR(m.mu[1], 2.5, 1e-15);
    EXPECT_NEAR(m.var[1], 0.75, 1e-15);
    EXPECT_NEAR(m.mu[0], 7.0 / 3, 1e-15);
    EXPECT_NEAR(m.var[0], 8.0 / 9, 1e-15);
}

TEST(Estimators, HajekFuzzedNonnegativeAndFormsAgree) {
    std::mt19937_64 eng(17);
    std::uniform_real_distribution<double> unif(0.02, 0.98);
    std::normal_distribution<double> nd;
    for (int trial_no = 0; trial_no < 1000; ++trial_no) {
        const int n = 4 + trial_no % 20;
        std::vector<UnitRecord> u = {target_unit()};
        for (int i = 0; i < n; ++i) u.push_back(study_unit(1, i % 2, nd(eng) * 100 + 7));
        auto d = PooledDataset::from_units(u, {}, {});
        Eigen::VectorXd p(n);
        for (int i = 0; i < n; ++i) p(i) = unif(eng);
        auto m = hajek_moments(d, p);
        for (int a = 0; a < 2; ++a) {
            EXPECT_GE(m.var[a], 0.0);
            EXPECT_NEAR(m.nu[a] - m.mu[a] * m.mu[a], m.var[a], 1e-10 * std::max(1.0, m.nu[a]));
        }
    }
}

TEST(Estimators, HajekErrors) {
    auto d = trial(6, 10, 1.0);
    EXPECT_EQ(testutil::error_code_of([&] { hajek_moments(d, Eigen::VectorXd::Constant(10, 1.0)); }),
              ErrorCode::Domain);
    EXPECT_EQ(testutil::error_code_of([&] { hajek_moments(d, Eigen::VectorXd::Constant(3, 0.5)); }),
              ErrorCode::Alignment);
}

TEST(Estimators, PooledVariance) {
    std::vector<ArmVariance> same = {{5, 2.0}, {9, 2.0}, {3, 2.0}};
    EXPECT_DOUBLE_EQ(pooled_trial_variance(same), 2.0);
    std::vector<ArmVariance> equal = {{3, 1.0}, {3, 3.0}};
    EXPECT_DOUBLE_EQ(pooled_trial_variance(equal), 2.0);
    std::vector<ArmVariance> unequal = {{2, 1.0}, {4, 4.0}};
    EXPECT_DOUBLE_EQ(pooled_trial_variance(unequal), 3.25);
    std::vector<ArmVariance> tiny = {{1, 1.0}};
    EXPECT_EQ(testutil::error_code_of([&] { pooled_trial_variance(tiny); }), ErrorCode::InsufficientData);
}

TEST(Estimators, CovarianceZeroWithUnitWeights) {
    auto d = trial(7, 200, 1.0);
    const double tau = estimate_pate(d, ones(d), ones(d), ones(d)).tau_hat;
    auto m = hajek_moments(d, Eigen::VectorXd::Constant(200, 0.5));
    EXPECT_NEAR(estimate_cov_w_tau(tau, m), 0.0, 1e-12);
}

TEST(Estimators, ScaleEquivariance) {
    auto d = trial(8, 300, 1.0);
    std::vector<UnitRecord> scaled;
    const double c = -3.5;
    for (std::size_t i = 0; i < d.size(); ++i) {
        auto u = d.unit(i);
        if (u.outcome) u.outcome = *u.outcome * c;
        scaled.push_back(u);
    }
    auto e = PooledDataset::from_units(scaled, {"v"}, {"v"});
    auto ws = estimate_weights(d), we = estimate_weights(e);
    const double t = estimate_pate(d, ws).tau_hat, te = estimate_pate(e, we).tau_hat;
    EXPECT_NEAR(te, c * t, 1e-10);
    auto m = hajek_moments(d, ws.propensity), me = hajek_moments(e, we.propensity);
    for (int a = 0; a < 2; ++a) {
        EXPECT_NEAR(me.mu[a], c * m.mu[a], 1e-10);
        EXPECT_NEAR(me.var[a], c * c * m.var[a], 1e-9);
    }
    EXPECT_NEAR(estimate_cov_w_tau(te, me), c * estimate_cov_w_tau(t, m), 1e-10);
}

TEST(Estimators, SampleVariance) {
    Eigen::VectorXd v(4);
    v << 1, 2, 3, 4;
    EXPECT_DOUBLE_EQ(sample_variance(v), 5.0 / 3);
}
