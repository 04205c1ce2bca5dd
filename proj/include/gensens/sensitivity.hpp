#pragma once

#include <gensens/error.hpp>
#include <gensens/estimators.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace gensens {

struct SensitivityParams {
    double r2_eps = 0.0;     // in [0, 1]
    double rho = 0.0;        // in [-1, 1]
    double sigma2_tau = 0.0; // >= 0
};

enum class BiasBranch {
    Auto,    // pick by R^2 == 1
    Partial, // R^2 < 1, var_w is var(w)
    Limit    // R^2 == 1, var_w is var(w*)
};

/// Omitted-modifier bias of the weighted estimator as a function of the
/// sensitivity parameters. In the Limit branch `var_w` must be the variance of
/// the ideal weights.
inline double bias_from_params(const SensitivityParams& p, double var_w,
                               BiasBranch branch = BiasBranch::Auto) {
    if (!(var_w >= 0.0) || !(p.sigma2_tau >= 0.0))
        throw Error(ErrorCode::Domain, "sensitivity", "variances must be nonnegative");
    if (!(p.r2_eps >= 0.0 && p.r2_eps <= 1.0))
        throw Error(ErrorCode::Domain, "sensitivity", "R^2 must lie in [0, 1]");
    if (!(p.rho >= -1.0 && p.rho <= 1.0))
        throw Error(ErrorCode::Domain, "sensitivity", "rho must lie in [-1, 1]");
    if (branch == BiasBranch::Auto) branch = p.r2_eps == 1.0 ? BiasBranch::Limit : BiasBranch::Partial;
    if (branch == BiasBranch::Limit) return p.rho * std::sqrt(var_w * p.sigma2_tau);
    if (1.0 - p.r2_eps < 1e-12)
        throw Error(ErrorCode::Branch, "sensitivity",
                    "R^2 is numerically 1; use the limit branch with var(w*)");
    return p.rho * std::sqrt(p.r2_eps / (1.0 - p.r2_eps) * var_w * p.sigma2_tau);
}

inline double adjusted_estimate(double tau_hat, const SensitivityParams& p, double var_w,
                                BiasBranch branch = BiasBranch::Auto) {
    return tau_hat - bias_from_params(p, var_w, branch);
}

enum class SigmaMode { Sharp, Conservative };

inline const char* to_string(SigmaMode m) { return m == SigmaMode::Sharp ? "sharp" : "conservative"; }

/// Upper bound on var(tau) from the potential-outcome variances.
inline double sigma2_tau_bound(double var_y1, double var_y0, SigmaMode mode = SigmaMode::Conservative) {
    if (!(var_y1 >= 0.0) || !(var_y0 >= 0.0))
        throw Error(ErrorCode::Domain, "sensitivity", "potential-outcome variances must be nonnegative");
    if (mode == SigmaMode::Sharp) return var_y1 + var_y0 + 2.0 * std::sqrt(var_y1 * var_y0);
    return var_y1 + var_y0;
}

/// Symmetric bounds on rho implied by the observed cov(w, tau).
inline std::pair<double, double> rho_bounds(double cov_w_tau, double sigma2_tau_max, double var_w) {
    if (!(sigma2_tau_max > 0.0) || !(var_w > 0.0))
        throw Error(ErrorCode::Domain, "sensitivity", "sigma^2 and var(w) must be positive");
    const double ratio = cov_w_tau * cov_w_tau / (sigma2_tau_max * var_w);
    if (ratio > 1.0 + 1e-12)
        throw Error(ErrorCode::Inconsistency, "sensitivity",
                    "cov(w, tau)^2 exceeds sigma^2 * var(w) (ratio " + std::to_string(ratio) +
                        "); the sigma^2 bound is violated");
    const double b = std::sqrt(std::max(0.0, 1.0 - ratio));
    return {-b, b};
}

/// RV_q = (sqrt(a^2 + 4a) - a) / 2 with a = q^2 tau^2 / (sigma^2 var_w).
inline double robustness_value(double tau_hat, double sigma2_tau_max, double var_w, double q) {
    if (!(q >= 0.0)) throw Error(ErrorCode::Domain, "sensitivity", "q must be nonnegative");
    const double den = sigma2_tau_max * var_w;
    if (!(den > 0.0))
        throw Error(ErrorCode::Domain, "sensitivity", "sigma^2 * var(w) must be positive");
    const double a = q * q * tau_hat * tau_hat / den;
    // Rationalized form avoids cancellation when a is large.
    return a == 0.0 ? 0.0 : 2.0 * a / (std::sqrt(a * a + 4.0 * a) + a);
}

struct BenchmarkRow {
    std::string modifier;
    double r2_minus_j = 0.0;
    double rho_minus_j = 0.0;
    double bias_est = 0.0;
    double mrems = 0.0;
    double mrems_alpha = 0.0;
    double tau_minus_j = 0.0;
    bool informative = true; // false when w^{-j} == w
};

/// One benchmarking row from the full and leave-one-out weights (study units).
inline BenchmarkRow benchmark_row(const std::string& modifier, double tau_hat, double tau_minus_j,
                                  const Eigen::VectorXd& w, const Eigen::VectorXd& w_minus_j,
                                  double sigma2_tau_max, double threshold) {
    if (w.size() != w_minus_j.size())
        throw Error(ErrorCode::Alignment, "sensitivity", "leave-one-out weights misaligned");
    BenchmarkRow row;
    row.modifier = modifier;
    row.tau_minus_j = tau_minus_j;
    const double var_w = sample_variance(w);
    const double var_eps = sample_variance(w_minus_j - w);
    const double inf = std::numeric_limits<double>::infinity();
    if (!(var_eps > 0.0) || !(var_w > 0.0)) {
        row.informative = false;
        row.mrems = tau_hat == 0.0 ? 0.0 : std::copysign(inf, tau_hat);
        row.mrems_alpha = threshold == 0.0 ? 0.0 : std::copysign(inf, threshold);
        return row;
    }
    row.r2_minus_j = var_eps / var_w;
    row.rho_minus_j = (tau_minus_j - tau_hat) / std::sqrt(sigma2_tau_max * var_eps);
    row.bias_est =
        row.rho_minus_j * std::sqrt(sigma2_tau_max * row.r2_minus_j / (1.0 + row.r2_minus_j));
    row.mrems = tau_hat / row.bias_est;
    row.mrems_alpha = threshold / row.bias_est;
    return row;
}

/// Rows for every observed modifier group, re-estimating w without it.
inline std::vector<BenchmarkRow> benchmark_modifiers(const PooledDataset& data, const WeightSet& weights,
                                                     double tau_hat, double sigma2_tau_max,
                                                     double threshold,
                                                     const WeightOptions& options = {}) {
    if (data.modifier_names().empty())
        throw Error(ErrorCode::Validation, "sensitivity", "benchmarking needs at least one modifier");
    std::vector<BenchmarkRow> rows;
    for (const auto& name : data.modifier_names()) {
        const auto loo = leave_one_out_weights(data, name, options);
        if (!loo.diagnostics.converged)
            throw Error(ErrorCode::Convergence, "sensitivity",
                        "weights without modifier '" + name + "' did not converge");
        const double tau_j = estimate_pate_leave_one_out(data, weights, loo.w).tau_hat;
        rows.push_back(benchmark_row(name, tau_hat, tau_j, weights.w, loo.w, sigma2_tau_max, threshold));
    }
    return rows;
}

struct SensitivitySummary {
    double sigma2_tau_max = 0.0;
    std::pair<double, double> rho_bounds{-1.0, 1.0};
    double var_w = 0.0;
    std::map<double, double> rv; // q -> RV_q
    double rv_alpha = 0.0;
};

/// Steps 1-2 and the robustness values; `threshold` is the Minimal Bias
/// Threshold (0 when unavailable).
inline SensitivitySummary summarize_sensitivity(double tau_hat, double cov_w_tau, double sigma2_tau_max,
                                                double var_w, const std::vector<double>& qs,
                                                double threshold) {
    SensitivitySummary s;
    s.sigma2_tau_max = sigma2_tau_max;
    s.var_w = var_w;
    s.rho_bounds = rho_bounds(cov_w_tau, sigma2_tau_max, var_w);
    for (double q : qs) s.rv[q] = robustness_value(tau_hat, sigma2_tau_max, var_w, q);
    s.rv_alpha = tau_hat == 0.0 ? 0.0
                                : robustness_value(tau_hat, sigma2_tau_max, var_w,
                                                   std::abs(threshold / tau_hat));
    return s;
}

} // namespace gensens
