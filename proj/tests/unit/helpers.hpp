#pragma once

#include <gensens/gensens.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

inline gensens::UnitRecord study_unit(int s, int a, double y, std::map<std::string, double> x = {}) {
    gensens::UnitRecord u;
    u.study_id = s;
    u.treatment = a;
    u.outcome = y;
    u.covariates = std::move(x);
    return u;
}

inline gensens::UnitRecord target_unit(std::map<std::string, double> x = {}) {
    gensens::UnitRecord u;
    u.covariates = std::move(x);
    return u;
}

inline gensens::PooledDataset from_csv(const std::string& text, const gensens::Schema& schema = {}) {
    std::istringstream in(text);
    return gensens::read_csv(in, schema);
}

template <typename F>
gensens::ErrorCode error_code_of(F&& f) {
    try {
        f();
    } catch (const gensens::Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected a gensens::Error";
    return gensens::ErrorCode::Io;
}

/// Population laid out in exact proportions: every (profile, study, arm) cell
/// gets round(N * mass * P(S) * P(A)) rows with outcome equal to its mean.
struct Enumerated {
    gensens::PooledDataset data;
    std::vector<std::size_t> profile; // per row
};

inline Enumerated enumerate_population(const gensens::DiscretePopulation& pop, double total) {
    std::vector<int> study;
    std::vector<std::int8_t> treat;
    std::vector<double> y;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> prof;
    auto count = [&](double v) {
        const double r = std::round(v);
        EXPECT_NEAR(v, r, 1e-6) << "population does not lay out in whole units";
        return static_cast<int>(r);
    };
    const auto& ps = pop.profiles();
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const auto& p = ps[i];
        auto cov = p.v;
        cov.insert(cov.end(), p.x.begin(), p.x.end());
        auto push = [&](int s, int a, double out) {
            study.push_back(s);
            treat.push_back(static_cast<std::int8_t>(a));
            y.push_back(out);
            rows.push_back(cov);
            prof.push_back(i);
        };
        for (int k = count(total * p.mass * (1.0 - p.p_selected())); k > 0; --k)
            push(0, -1, std::numeric_limits<double>::quiet_NaN());
        for (std::size_t s = 0; s < p.selection.size(); ++s) {
            const double cell = total * p.mass * p.selection[s];
            for (int k = count(cell * p.assignment[s]); k > 0; --k) push(static_cast<int>(s) + 1, 1, p.y1);
            for (int k = count(cell * (1.0 - p.assignment[s])); k > 0; --k) push(static_cast<int>(s) + 1, 0, p.y0);
        }
    }
    std::vector<std::string> names = pop.v_names();
    names.insert(names.end(), pop.x_names().begin(), pop.x_names().end());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < names.size(); ++j)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
    std::vector<gensens::CovariateGroup> groups;
    for (std::size_t j = 0; j < names.size(); ++j) groups.push_back({names[j], {j}});
    return {gensens::PooledDataset(std::move(study), std::move(treat), std::move(y), std::move(x), names, groups,
                                   pop.v_names(), names),
            std::move(prof)};
}

/// Oracle weights laid over the study rows of an enumerated dataset.
inline gensens::WeightSet oracle_weight_set(const gensens::DiscretePopulation& pop,
                                            const gensens::PooledDataset& data,
                                            const std::vector<std::size_t>& profile, bool include_u = false) {
    const auto tw = gensens::true_weights(pop, include_u);
    const auto& rows = data.study_rows();
    gensens::WeightSet ws;
    const auto n = static_cast<Eigen::Index>(rows.size());
    ws.w.resize(n);
    ws.lambda.resize(n);
    ws.gamma.resize(n);
    ws.propensity = Eigen::VectorXd::Constant(n, 0.5);
    ws.generalization_fit.converged = true;
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto i = rows[static_cast<std::size_t>(k)];
        const auto& pw = tw[profile[i]];
        const auto s = static_cast<std::size_t>(data.study_id(i) - 1);
        const auto a = static_cast<std::size_t>(data.treatment(i));
        ws.w(k) = pw.w;
        ws.lambda(k) = pw.lambda[s][a];
        ws.gamma(k) = pw.gamma[s][a];
    }
    return ws;
}

inline gensens::WeightSet oracle_weight_set(const gensens::DiscretePopulation& pop, const Enumerated& e,
                                            bool include_u = false) {
    return oracle_weight_set(pop, e.data, e.profile, include_u);
}

inline gensens::DiscretePopulation bundled(const std::string& name) {
    return gensens::load_population(std::string(GENSENS_DATA_DIR) + "/populations/" + name + ".json");
}

/// Smallest population size at which every cell of a bundled population
/// holds a whole number of units.
inline double layout_size(const std::string& name) {
    static const std::map<std::string, double> sizes = {
        {"a5_violating", 1e5},          {"conditionally_randomized", 1e4},
        {"constant_observed_weights", 1e4}, {"four_profiles", 1e4},
        {"homogeneous_effect", 1e4},      {"multi_study_unequal_ratios", 1.8e6},
        {"u_independent_of_selection", 1e6}};
    return sizes.at(name);
}

} // namespace testutil
