#pragma once

#include <gensens/core_data.hpp>
#include <gensens/error.hpp>
#include <gensens/weights.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace gensens {

struct EstimateResult {
    double tau_hat = 0.0;
    ArmCounts n_used;
    std::string weight_ref;
};

/// Hajek inverse-propensity moments of the potential outcomes, indexed by arm.
struct PotentialOutcomeMoments {
    std::array<double, 2> mu{};  // mean
    std::array<double, 2> nu{};  // second moment
    std::array<double, 2> var{}; // centered weighted variance (>= 0)
};

/// tau_W = (1/N1) sum w lambda gamma A Y - (1/N0) sum w lambda gamma (1 - A) Y,
/// with raw arm counts N_a (no Hajek renormalization).
inline EstimateResult estimate_pate(const PooledDataset& data, const Eigen::VectorXd& w,
                                    const Eigen::VectorXd& lambda, const Eigen::VectorXd& gamma) {
    const auto& rows = data.study_rows();
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (w.size() != n || lambda.size() != n || gamma.size() != n)
        throw Error(ErrorCode::Alignment, "estimators",
                    "weight vectors have length " + std::to_string(w.size()) + "/" +
                        std::to_string(lambda.size()) + "/" + std::to_string(gamma.size()) +
                        " but the data hold " + std::to_string(n) + " study units");
    double treated = 0.0, control = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        const std::size_t i = rows[static_cast<std::size_t>(k)];
        const double v = w(k) * lambda(k) * gamma(k) * data.outcome(i);
        if (data.treatment(i) == 1)
            treated += v;
        else
            control += v;
    }
    const auto& arms = data.arm_counts();
    EstimateResult r;
    r.tau_hat = treated / static_cast<double>(arms.n_treated) -
                control / static_cast<double>(arms.n_control);
    r.n_used = arms;
    return r;
}

/// Refuses unconverged weights unless `allow_unconverged` is set.
inline EstimateResult estimate_pate(const PooledDataset& data, const WeightSet& weights,
                                    bool allow_unconverged = false) {
    if (!weights.converged() && !allow_unconverged)
        throw Error(ErrorCode::Convergence, "estimators",
                    "weights did not converge; pass the override to use them anyway");
    auto r = estimate_pate(data, weights.w, weights.lambda, weights.gamma);
    r.weight_ref = weights.method;
    return r;
}

struct SingleStudyEstimate {
    EstimateResult estimate;
    WeightSet weights;
};

/// Generalizes from study `s` alone: weights are re-estimated on the target
/// plus study s, so lambda is identically 1.
inline SingleStudyEstimate estimate_pate_single_study(const PooledDataset& data, int s,
                                                      const WeightOptions& options = {},
                                                      bool allow_unconverged = false) {
    const PooledDataset sub = data.restrict_to_study(s);
    SingleStudyEstimate out;
    out.weights = estimate_weights(sub, options);
    if (!out.weights.generalization_fit.converged && !allow_unconverged)
        throw Error(ErrorCode::Overlap, "estimators",
                    "study " + std::to_string(s) +
                        " cannot be balanced to the target on the observed modifiers");
    out.estimate = estimate_pate(sub, out.weights, allow_unconverged);
    out.estimate.weight_ref = "study " + std::to_string(s) + ":" + out.weights.method;
    return out;
}

/// tau_W^{-j}: the full lambda and gamma with w replaced by w^{-j}.
inline EstimateResult estimate_pate_leave_one_out(const PooledDataset& data,
                                                  const WeightSet& weights,
                                                  const Eigen::VectorXd& w_minus_j) {
    auto r = estimate_pate(data, w_minus_j, weights.lambda, weights.gamma);
    r.weight_ref = weights.method + " (leave-one-out)";
    return r;
}

/// Hajek moments given fitted P(A = 1 | X, S) per study unit.
inline PotentialOutcomeMoments hajek_moments(const PooledDataset& data,
                                             const Eigen::VectorXd& propensity) {
    const auto& rows = data.study_rows();
    if (propensity.size() != static_cast<Eigen::Index>(rows.size()))
        throw Error(ErrorCode::Alignment, "estimators",
                    "propensity vector does not match the study units");
    PotentialOutcomeMoments m;
    std::array<double, 2> mass{}, s1{}, s2{};
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double p1 = propensity(static_cast<Eigen::Index>(k));
        if (!(p1 > 0.0 && p1 < 1.0))
            throw Error(ErrorCode::Domain, "estimators", "propensities must lie in (0, 1)");
        const int a = data.treatment(rows[k]);
        const double inv = 1.0 / (a == 1 ? p1 : 1.0 - p1);
        const double y = data.outcome(rows[k]);
        mass[a] += inv;
        s1[a] += inv * y;
        s2[a] += inv * y * y;
    }
    for (int a = 0; a < 2; ++a) {
        if (!(mass[a] > 0.0))
            throw Error(ErrorCode::DegenerateArm, "estimators",
                        std::string(a == 1 ? "treated" : "control") +
                            " arm has no inverse-propensity mass");
        m.mu[a] = s1[a] / mass[a];
        m.nu[a] = s2[a] / mass[a];
    }
    std::array<double, 2> centered{};
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double p1 = propensity(static_cast<Eigen::Index>(k));
        const int a = data.treatment(rows[k]);
        const double inv = 1.0 / (a == 1 ? p1 : 1.0 - p1);
        const double d = data.outcome(rows[k]) - m.mu[a];
        centered[a] += inv * d * d;
    }
    for (int a = 0; a < 2; ++a) m.var[a] = centered[a] / mass[a];
    return m;
}

struct ArmVariance {
    std::size_t n = 0;
    double variance = 0.0;
};

/// sum (n_i - 1) var_i / sum (n_i - 1).
inline double pooled_trial_variance(std::span<const ArmVariance> studies) {
    double num = 0.0, den = 0.0;
    for (const auto& s : studies) {
        if (s.n < 2)
            throw Error(ErrorCode::InsufficientData, "estimators",
                        "pooled variance needs at least 2 units per study arm");
        num += static_cast<double>(s.n - 1) * s.variance;
        den += static_cast<double>(s.n - 1);
    }
    if (den == 0.0)
        throw Error(ErrorCode::InsufficientData, "estimators", "no studies to pool");
    return num / den;
}

/// Pooled within-study sample variances of Y in each arm (randomized studies).
inline std::array<double, 2> pooled_arm_variances(const PooledDataset& data) {
    std::array<double, 2> out{};
    for (int a = 0; a < 2; ++a) {
        std::vector<ArmVariance> parts;
        for (int s : data.study_ids()) {
            double sum = 0.0, sq = 0.0;
            std::size_t n = 0;
            for (auto i : data.study_rows())
                if (data.study_id(i) == s && data.treatment(i) == a) {
                    sum += data.outcome(i);
                    ++n;
                }
            const double mean = n ? sum / static_cast<double>(n) : 0.0;
            for (auto i : data.study_rows())
                if (data.study_id(i) == s && data.treatment(i) == a)
                    sq += (data.outcome(i) - mean) * (data.outcome(i) - mean);
            parts.push_back({n, n > 1 ? sq / static_cast<double>(n - 1) : 0.0});
        }
        out[a] = pooled_trial_variance(parts);
    }
    return out;
}

/// cov_R(w, tau) estimate: tau_W - (mu_1 - mu_0) with Hajek arm means.
inline double estimate_cov_w_tau(double tau_hat, const PotentialOutcomeMoments& moments) {
    return tau_hat - (moments.mu[1] - moments.mu[0]);
}

/// Sample variance (n - 1) of a weight vector.
inline double sample_variance(const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
}

} // namespace gensens
