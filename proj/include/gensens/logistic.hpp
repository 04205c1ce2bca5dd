#pragma once

#include <gensens/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace gensens {

struct FitDiagnostics {
    std::string method;
    bool converged = false;
    int iterations = 0;
    double gradient_norm = 0.0; // max absolute score / gradient at exit
    bool ridge_used = false;
    std::vector<std::string> warnings; // near-separation, extreme weights, ...
};

struct IrlsOptions {
    int max_iterations = 100;
    double tolerance = 1e-8;       // on the max absolute score
    double coefficient_cap = 30.0; // standardized scale; beyond this we call it separation
    double ridge = 0.0;            // L2 penalty on slopes (not the intercept)
    bool ridge_fallback = false;   // refit with `fallback_penalty` instead of throwing
    double fallback_penalty = 1e-4;
};

struct LogisticFit {
    Eigen::VectorXd coefficients; // intercept first, original covariate scale
    Eigen::VectorXd fitted;       // P(y = 1 | x) per row
    FitDiagnostics diagnostics;
};

inline double expit(double eta) {
    if (eta >= 0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

namespace detail {

struct Standardized {
    Eigen::MatrixXd design; // intercept column + standardized active columns
    Eigen::VectorXd center, scale;
    std::vector<Eigen::Index> active; // original columns with nonzero spread
};

inline Standardized standardize(const Eigen::MatrixXd& x) {
    Standardized s;
    const Eigen::Index n = x.rows();
    s.center = Eigen::VectorXd::Zero(x.cols());
    s.scale = Eigen::VectorXd::Ones(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double mean = x.col(j).mean();
        const double sd = std::sqrt((x.col(j).array() - mean).square().sum() / static_cast<double>(n));
        s.center(j) = mean;
        if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
            s.scale(j) = sd;
            s.active.push_back(j);
        }
    }
    s.design.resize(n, static_cast<Eigen::Index>(s.active.size()) + 1);
    s.design.col(0).setOnes();
    for (std::size_t k = 0; k < s.active.size(); ++k) {
        const auto j = s.active[k];
        s.design.col(static_cast<Eigen::Index>(k) + 1) =
            (x.col(j).array() - s.center(j)) / s.scale(j);
    }
    return s;
}

inline double penalized_loglik(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& beta, double ridge) {
    const Eigen::VectorXd eta = z * beta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        const double e = eta(i);
        // log(1 + exp(e)) computed without overflow
        const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
        ll += y(i) * e - softplus;
    }
    return ll - 0.5 * ridge * beta.tail(beta.size() - 1).squaredNorm();
}

} // namespace detail

/// Maximum-likelihood logistic regression of y (0/1) on [1, x] by iteratively
/// reweighted least squares. Columns are standardized internally; constant
/// columns get a zero coefficient. Throws ErrorCode::Separation when a
/// standardized coefficient exceeds the cap, unless ridge_fallback is set.
inline LogisticFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                const IrlsOptions& options = {}) {
    if (x.rows() != y.size())
        throw Error(ErrorCode::Alignment, "weights", "design and response lengths differ");
    const auto st = detail::standardize(x);
    const Eigen::MatrixXd& z = st.design;
    const Eigen::Index p = z.cols();

    auto run = [&](double ridge, FitDiagnostics& diag) -> Eigen::VectorXd {
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
        const double ybar = y.mean();
        if (ybar > 0.0 && ybar < 1.0) beta(0) = std::log(ybar / (1.0 - ybar));
        Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p, ridge);
        penalty(0) = 0.0;

        double ll = detail::penalized_loglik(z, y, beta, ridge);
        for (int it = 0; it <= options.max_iterations; ++it) {
            const Eigen::VectorXd eta = z * beta;
            Eigen::VectorXd prob(eta.size()), wt(eta.size());
            for (Eigen::Index i = 0; i < eta.size(); ++i) {
                prob(i) = expit(eta(i));
                wt(i) = prob(i) * (1.0 - prob(i));
            }
            const Eigen::VectorXd score =
                z.transpose() * (y - prob) - penalty.cwiseProduct(beta);
            diag.iterations = it;
            diag.gradient_norm = score.cwiseAbs().maxCoeff();
            if (diag.gradient_norm < options.tolerance) {
                diag.converged = true;
                break;
            }
            if (it == options.max_iterations) break;

            Eigen::MatrixXd info = z.transpose() * wt.asDiagonal() * z;
            info.diagonal() += penalty;
            const Eigen::VectorXd step = info.ldlt().solve(score);
            // Step halving keeps the likelihood monotone near separation.
            double t = 1.0;
            Eigen::VectorXd next = beta + step;
            double ll_next = detail::penalized_loglik(z, y, next, ridge);
            for (int h = 0; h < 30 && !(ll_next >= ll - 1e-12 * std::abs(ll)); ++h) {
                t *= 0.5;
                next = beta + t * step;
                ll_next = detail::penalized_loglik(z, y, next, ridge);
            }
            beta = next;
            ll = ll_next;
            if (ridge == 0.0 && beta.tail(p - 1).cwiseAbs().maxCoeff() > options.coefficient_cap)
                throw Error(ErrorCode::Separation, "weights",
                            "logistic fit diverging (|coefficient| > " +
                                std::to_string(options.coefficient_cap) +
                                "); consider the ridge fallback");
        }
        return beta;
    };

    LogisticFit fit;
    fit.diagnostics.method = "irls";
    Eigen::VectorXd beta;
    try {
        beta = run(options.ridge, fit.diagnostics);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::Separation || !options.ridge_fallback) throw;
        fit.diagnostics = FitDiagnostics{};
        fit.diagnostics.method = "irls";
        fit.diagnostics.ridge_used = true;
        fit.diagnostics.warnings.push_back("separation detected; ridge fallback applied");
        beta = run(options.fallback_penalty, fit.diagnostics);
    }

    // Back to the original covariate scale.
    fit.coefficients = Eigen::VectorXd::Zero(x.cols() + 1);
    double intercept = beta(0);
    for (std::size_t k = 0; k < st.active.size(); ++k) {
        const auto j = st.active[k];
        const double b = beta(static_cast<Eigen::Index>(k) + 1) / st.scale(j);
        fit.coefficients(j + 1) = b;
        intercept -= b * st.center(j);
    }
    fit.coefficients(0) = intercept;
    const Eigen::VectorXd eta = z * beta;
    fit.fitted.resize(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) fit.fitted(i) = expit(eta(i));
    return fit;
}

} // namespace gensens
