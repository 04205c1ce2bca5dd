#pragma once

#include <gensens/core_data.hpp>
#include <gensens/entropy_balancing.hpp>
#include <gensens/error.hpp>
#include <gensens/logistic.hpp>

#include <Eigen/Dense>

#include <charconv>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace gensens {

enum class GeneralizationMethod { EntropyBalancing, Logistic };
enum class DeconfoundingMethod { LogisticPerStudy, Constant };

inline const char* to_string(GeneralizationMethod m) {
    return m == GeneralizationMethod::EntropyBalancing ? "entropy_balancing" : "logistic";
}
inline const char* to_string(DeconfoundingMethod m) {
    return m == DeconfoundingMethod::LogisticPerStudy ? "logistic_per_study" : "constant";
}

struct WeightOptions {
    GeneralizationMethod generalization = GeneralizationMethod::EntropyBalancing;
    DeconfoundingMethod deconfounding = DeconfoundingMethod::LogisticPerStudy;
    IrlsOptions irls;
    BalanceOptions balance;
    double propensity_epsilon = 0.01; // warn outside [eps, 1 - eps]; never clipped
};

/// The three weight families, one entry per study unit in
/// PooledDataset::study_rows() order.
struct WeightSet {
    Eigen::VectorXd w;          // generalization
    Eigen::VectorXd lambda;     // combination
    Eigen::VectorXd gamma;      // de-confounding
    Eigen::VectorXd propensity; // fitted P(A = 1 | X, S) used by gamma
    FitDiagnostics generalization_fit;
    std::map<int, FitDiagnostics> deconfounding_fits;
    std::string method;

    bool converged() const {
        if (!generalization_fit.converged) return false;
        for (const auto& [s, d] : deconfounding_fits)
            if (!d.converged) return false;
        return true;
    }

    std::vector<std::string> warnings() const {
        std::vector<std::string> out = generalization_fit.warnings;
        for (const auto& [s, d] : deconfounding_fits)
            for (const auto& w : d.warnings) out.push_back("study " + std::to_string(s) + ": " + w);
        return out;
    }
};

struct GeneralizationWeights {
    Eigen::VectorXd w;
    FitDiagnostics diagnostics;
};

struct DeconfoundingWeights {
    Eigen::VectorXd gamma;
    Eigen::VectorXd propensity;
    std::map<int, FitDiagnostics> fits;
};

namespace detail {

inline Eigen::MatrixXd gather(const PooledDataset& data, const std::vector<std::size_t>& rows,
                              const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    const auto& x = data.covariates();
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (std::size_t r = 0; r < rows.size(); ++r)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                x(static_cast<Eigen::Index>(rows[r]), static_cast<Eigen::Index>(cols[c]));
    return out;
}

inline void normalize_mean_one(Eigen::VectorXd& w) {
    if (w.size() > 0) w /= w.mean();
}

} // namespace detail

/// Generalization weights balancing the given covariate columns between the
/// pooled studies and the target.
inline GeneralizationWeights generalization_weights_on(const PooledDataset& data,
                                                       const std::vector<std::size_t>& columns,
                                                       const WeightOptions& options) {
    GeneralizationWeights out;
    const auto& study = data.study_rows();
    const auto n_study = static_cast<Eigen::Index>(study.size());
    if (columns.empty()) {
        out.w = Eigen::VectorXd::Ones(n_study);
        out.diagnostics.method = to_string(options.generalization);
        out.diagnostics.converged = true;
        return out;
    }

    if (options.generalization == GeneralizationMethod::EntropyBalancing) {
        const Eigen::MatrixXd source = detail::gather(data, study, columns);
        const Eigen::MatrixXd target = detail::gather(data, data.target_rows(), columns);
        const Eigen::VectorXd means = target.colwise().mean();
        auto res = entropy_balance(source, means, options.balance);
        out.w = std::move(res.weights);
        out.diagnostics = std::move(res.diagnostics);
        detail::normalize_mean_one(out.w);
        return out;
    }

    // Logistic: P(R = 1 | V) over all units.
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Eigen::MatrixXd x = detail::gather(data, all, columns);
    Eigen::VectorXd r(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) r(static_cast<Eigen::Index>(i)) = data.in_studies(i);
    auto fit = fit_logistic(x, r, options.irls);
    fit.diagnostics.method = "logistic";
    const double p_r1 = r.mean();
    const double odds = p_r1 / (1.0 - p_r1);
    out.w.resize(n_study);
    for (Eigen::Index k = 0; k < n_study; ++k) {
        const double p = fit.fitted(static_cast<Eigen::Index>(study[static_cast<std::size_t>(k)]));
        out.w(k) = odds * (1.0 - p) / p;
    }
    detail::normalize_mean_one(out.w);
    if (out.w.maxCoeff() > options.balance.max_weight_ratio)
        fit.diagnostics.warnings.push_back("extreme generalization weights (max " +
                                           std::to_string(out.w.maxCoeff()) + ")");
    out.diagnostics = std::move(fit.diagnostics);
    return out;
}

inline GeneralizationWeights estimate_generalization_weights(const PooledDataset& data,
                                                             const WeightOptions& options = {}) {
    return generalization_weights_on(data, data.modifier_columns(), options);
}

/// w^{-j}: the same estimator with modifier group `modifier` left out.
inline GeneralizationWeights leave_one_out_weights(const PooledDataset& data,
                                                   const std::string& modifier,
                                                   const WeightOptions& options = {}) {
    return generalization_weights_on(data, data.modifier_columns_without(modifier), options);
}

/// lambda_i = P(A_i | R = 1) / P(A_i | S_i, R = 1) from arm counts.
inline Eigen::VectorXd estimate_combination_weights(const PooledDataset& data) {
    const auto& arms = data.arm_counts();
    const double pooled_treated =
        static_cast<double>(arms.n_treated) / static_cast<double>(arms.total());
    const auto& rows = data.study_rows();
    Eigen::VectorXd lambda(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& s = arms.per_study.at(data.study_id(rows[k]));
        const double study_treated =
            static_cast<double>(s.treated) / static_cast<double>(s.treated + s.control);
        lambda(static_cast<Eigen::Index>(k)) =
            data.treatment(rows[k]) == 1 ? pooled_treated / study_treated
                                         : (1.0 - pooled_treated) / (1.0 - study_treated);
    }
    return lambda;
}

/// gamma_i = P(A_i | S_i) / P(A_i | X_i, S_i) with the denominator from a
/// per-study logistic fit of A on the adjustment covariates.
inline DeconfoundingWeights estimate_deconfounding_weights(const PooledDataset& data,
                                                           const WeightOptions& options = {}) {
    const auto& rows = data.study_rows();
    const auto n = static_cast<Eigen::Index>(rows.size());
    DeconfoundingWeights out;
    out.gamma = Eigen::VectorXd::Ones(n);
    out.propensity.resize(n);

    // Positions of each study's units within study_rows().
    std::map<int, std::vector<std::size_t>> positions;
    for (std::size_t k = 0; k < rows.size(); ++k) positions[data.study_id(rows[k])].push_back(k);

    const auto& arms = data.arm_counts();
    const auto adj_cols = data.adjuster_columns();
    if (options.deconfounding == DeconfoundingMethod::LogisticPerStudy && adj_cols.empty())
        throw Error(ErrorCode::Validation, "weights",
                    "logistic de-confounding needs at least one adjustment covariate");

    for (const auto& [s, pos] : positions) {
        const auto& a = arms.per_study.at(s);
        const double marginal =
            static_cast<double>(a.treated) / static_cast<double>(a.treated + a.control);
        FitDiagnostics diag;
        if (options.deconfounding == DeconfoundingMethod::Constant) {
            diag.method = "constant";
            diag.converged = true;
            for (auto k : pos) out.propensity(static_cast<Eigen::Index>(k)) = marginal;
            out.fits[s] = std::move(diag);
            continue;
        }
        std::vector<std::size_t> study_units;
        study_units.reserve(pos.size());
        for (auto k : pos) study_units.push_back(rows[k]);
        const Eigen::MatrixXd x = detail::gather(data, study_units, adj_cols);
        Eigen::VectorXd y(static_cast<Eigen::Index>(pos.size()));
        for (std::size_t r = 0; r < pos.size(); ++r)
            y(static_cast<Eigen::Index>(r)) = data.treatment(study_units[r]);
        LogisticFit fit;
        try {
            fit = fit_logistic(x, y, options.irls);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::Separation)
                throw Error(ErrorCode::Separation, "weights",
                            "propensity model for study " + std::to_string(s) + ": " + e.detail());
            throw;
        }
        diag = std::move(fit.diagnostics);
        diag.method = "logistic";
        bool extreme = false;
        for (std::size_t r = 0; r < pos.size(); ++r) {
            const double p = fit.fitted(static_cast<Eigen::Index>(r));
            const auto k = static_cast<Eigen::Index>(pos[r]);
            out.propensity(k) = p;
            extreme = extreme || p < options.propensity_epsilon || p > 1.0 - options.propensity_epsilon;
            out.gamma(k) = y(static_cast<Eigen::Index>(r)) == 1.0 ? marginal / p
                                                                  : (1.0 - marginal) / (1.0 - p);
        }
        if (extreme)
            diag.warnings.push_back("fitted propensities outside [" +
                                    std::to_string(options.propensity_epsilon) + ", " +
                                    std::to_string(1.0 - options.propensity_epsilon) + "]");
        out.fits[s] = std::move(diag);
    }
    return out;
}

inline WeightSet estimate_weights(const PooledDataset& data, const WeightOptions& options = {}) {
    WeightSet ws;
    auto gen = estimate_generalization_weights(data, options);
    ws.w = std::move(gen.w);
    ws.generalization_fit = std::move(gen.diagnostics);
    ws.lambda = estimate_combination_weights(data);
    auto dec = estimate_deconfounding_weights(data, options);
    ws.gamma = std::move(dec.gamma);
    ws.propensity = std::move(dec.propensity);
    ws.deconfounding_fits = std::move(dec.fits);
    ws.method = std::string(to_string(options.generalization)) + "+" + to_string(options.deconfounding);
    return ws;
}

/// Audit dump: unit_index,w,lambda,gamma (unit_index is the 0-based data row).
inline void write_weights_csv(std::ostream& out, const PooledDataset& data, const WeightSet& ws) {
    out << "unit_index,w,lambda,gamma\n";
    const auto& rows = data.study_rows();
    char buf[64];
    auto fmt = [&](double v) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
        return std::string(buf, p);
    };
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(k);
        out << rows[k] << ',' << fmt(ws.w(i)) << ',' << fmt(ws.lambda(i)) << ',' << fmt(ws.gamma(i))
            << '\n';
    }
}

} // namespace gensens
