#pragma once

#include <gensens/error.hpp>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace gensens {

struct WaldInput {
    std::vector<double> estimates;
    std::vector<double> sds;
};

struct WaldResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

/// (k-1) x k contrasts of the first study against each other one.
inline Eigen::MatrixXd contrast_matrix(int k) {
    if (k < 2) throw Error(ErrorCode::Domain, "testing", "at least two studies are required");
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k - 1, k);
    for (int i = 0; i < k - 1; ++i) {
        c(i, 0) = 1.0;
        c(i, i + 1) = -1.0;
    }
    return c;
}

/// Upper tail of the chi-square distribution.
inline double chi2_sf(double x, int df) {
    if (!(x >= 0.0)) throw Error(ErrorCode::Domain, "testing", "chi-square argument must be >= 0");
    if (df < 1) throw Error(ErrorCode::Domain, "testing", "degrees of freedom must be positive");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

/// Wald statistic for equality of independent per-study estimates.
inline WaldResult wald_test(const WaldInput& in) {
    const auto k = static_cast<int>(in.estimates.size());
    if (k != static_cast<int>(in.sds.size()))
        throw Error(ErrorCode::Validation, "testing", "estimates and sds differ in length");
    const Eigen::MatrixXd c = contrast_matrix(k);
    Eigen::VectorXd tau(k), var(k);
    for (int i = 0; i < k; ++i) {
        if (!std::isfinite(in.estimates[static_cast<std::size_t>(i)]))
            throw Error(ErrorCode::Domain, "testing", "estimates must be finite");
        const double sd = in.sds[static_cast<std::size_t>(i)];
        if (!(sd >= 0.0) || !std::isfinite(sd))
            throw Error(ErrorCode::Domain, "testing", "standard deviations must be finite and >= 0");
        tau(i) = in.estimates[static_cast<std::size_t>(i)];
        var(i) = sd * sd;
    }
    const Eigen::VectorXd d = c * tau;
    const Eigen::MatrixXd m = c * var.asDiagonal() * c.transpose();

    WaldResult r;
    r.df = k - 1;
    if (d.cwiseAbs().maxCoeff() == 0.0 && m.isZero(0.0)) {
        throw Error(ErrorCode::Singular, "testing",
                    "contrast covariance is singular (zero standard deviations)");
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    const Eigen::VectorXd diag = ldlt.vectorD().cwiseAbs();
    const double dmax = diag.maxCoeff(), dmin = diag.minCoeff();
    if (ldlt.info() != Eigen::Success || !(dmax > 0.0) || dmin <= dmax * 1e-12 || !ldlt.isPositive())
        throw Error(ErrorCode::Singular, "testing",
                    "contrast covariance is singular or ill-conditioned (condition > 1e12)");
    r.statistic = std::max(0.0, d.dot(ldlt.solve(d)));
    r.p_value = chi2_sf(r.statistic, r.df);
    return r;
}

} // namespace gensens
