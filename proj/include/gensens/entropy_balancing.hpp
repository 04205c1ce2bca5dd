#pragma once

#include <gensens/logistic.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <string>

namespace gensens {

struct BalanceOptions {
    int max_iterations = 200;
    double tolerance = 1e-10; // max |weighted mean - target mean|, per unit of column spread
    double max_weight_ratio = 50.0; // warn when max(w) exceeds this (mean is 1)
};

struct BalanceResult {
    Eigen::VectorXd weights; // mean 1 over source rows
    Eigen::VectorXd theta;   // dual coefficients on the centered covariates
    FitDiagnostics diagnostics;
};

/// First-moment entropy balancing: w_i proportional to exp(theta' x_i), chosen
/// so the w-weighted column means of `source` equal `target_means`.
///
/// Solves the convex dual min_theta log mean_i exp(theta'(x_i - m)) by Newton
/// with backtracking. Non-convergence (target outside the convex hull of the
/// source) is reported through diagnostics.converged rather than thrown.
inline BalanceResult entropy_balance(const Eigen::MatrixXd& source,
                                     const Eigen::VectorXd& target_means,
                                     const BalanceOptions& options = {}) {
    const Eigen::Index n = source.rows();
    const Eigen::Index p = source.cols();
    BalanceResult res;
    res.diagnostics.method = "entropy_balancing";
    res.weights = Eigen::VectorXd::Ones(n);
    res.theta = Eigen::VectorXd::Zero(p);
    if (n == 0) {
        res.diagnostics.warnings.push_back("empty source sample");
        return res;
    }
    if (p == 0) {
        res.diagnostics.converged = true;
        return res;
    }

    // Centered at the target and scaled by the source spread so one tolerance
    // fits every column.
    Eigen::VectorXd scale(p);
    Eigen::MatrixXd d(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double mean = source.col(j).mean();
        const double sd = std::sqrt((source.col(j).array() - mean).square().mean());
        scale(j) = sd > 0.0 ? sd : 1.0;
        d.col(j) = (source.col(j).array() - target_means(j)) / scale(j);
    }

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd q(n);
    auto objective = [&](const Eigen::VectorXd& th, Eigen::VectorXd& probs) {
        const Eigen::VectorXd eta = d * th;
        const double mx = eta.maxCoeff();
        probs = (eta.array() - mx).exp();
        const double total = probs.sum();
        probs /= total;
        return mx + std::log(total / static_cast<double>(n));
    };

    double f = objective(theta, q);
    auto& diag = res.diagnostics;
    for (int it = 0; it <= options.max_iterations; ++it) {
        const Eigen::VectorXd grad = d.transpose() * q;
        diag.iterations = it;
        diag.gradient_norm = grad.cwiseAbs().maxCoeff();
        if (diag.gradient_norm < options.tolerance) {
            diag.converged = true;
            break;
        }
        if (it == options.max_iterations) break;

        const Eigen::MatrixXd centered = d.rowwise() - grad.transpose();
        Eigen::MatrixXd hess = centered.transpose() * q.asDiagonal() * centered;
        hess.diagonal().array() += 1e-14;
        const Eigen::VectorXd step = -hess.ldlt().solve(grad);
        const double slope = grad.dot(step);

        double t = 1.0;
        Eigen::VectorXd q_next(n);
        Eigen::VectorXd next = theta + step;
        double f_next = objective(next, q_next);
        // Near the optimum the decrease in f drops below rounding, so a full
        // step that halves the gradient is accepted on that ground alone.
        const bool gradient_ok =
            std::isfinite(f_next) &&
            (d.transpose() * q_next).cwiseAbs().maxCoeff() < 0.5 * diag.gradient_norm;
        int halvings = 0;
        while (!gradient_ok && !(f_next <= f + 1e-4 * t * slope) && halvings < 60) {
            t *= 0.5;
            next = theta + t * step;
            f_next = objective(next, q_next);
            ++halvings;
        }
        if (halvings == 60 || !std::isfinite(f_next)) {
            // No further decrease is representable; accept if already balanced
            // to within rounding of the data.
            diag.converged = diag.gradient_norm < 1e3 * options.tolerance;
            if (!diag.converged) diag.warnings.push_back("line search stalled");
            break;
        }
        theta = next;
        q = q_next;
        f = f_next;
    }

    res.theta = theta.cwiseQuotient(scale);
    res.weights = q * static_cast<double>(n);
    if (!diag.converged)
        diag.warnings.push_back("entropy balancing did not converge; target means may lie "
                                "outside the convex hull of the study sample");
    if (res.weights.maxCoeff() > options.max_weight_ratio)
        diag.warnings.push_back("extreme generalization weights (max " +
                                std::to_string(res.weights.maxCoeff()) + ")");
    return res;
}

} // namespace gensens
