#pragma once

#include <gensens/bootstrap.hpp>
#include <gensens/error.hpp>
#include <gensens/sensitivity.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace gensens {

struct ContourPoint {
    double r2 = 0.0;
    double rho = 0.0;
};

struct BorderCell {
    std::size_t r2_index = 0, rho_index = 0;
    double r2 = 0.0, rho = 0.0;
    double bias = 0.0;
    PercentileCI ci;
};

struct ContourGrid {
    std::vector<double> r2_axis, rho_axis;
    Eigen::MatrixXd bias_surface;     // [r2][rho]
    Eigen::MatrixXd adjusted_surface; // tau_hat - bias
    std::vector<ContourPoint> kill_curve;
    std::vector<BorderCell> significance_border;
    std::vector<std::vector<PercentileCI>> ci; // empty without a bootstrap
    double tau_hat = 0.0;
};

namespace detail {

/// Root of f on [a, b] given a sign change, to |b - a| < tol.
template <typename F>
double bisect(F&& f, double a, double b, double tol = 1e-13) {
    double fa = f(a);
    for (int it = 0; it < 200 && std::abs(b - a) > tol; ++it) {
        const double m = 0.5 * (a + b);
        const double fm = f(m);
        if (fm == 0.0) return m;
        if ((fm < 0.0) == (fa < 0.0)) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    return 0.5 * (a + b);
}

} // namespace detail

/// Bias and adjusted-estimate surfaces, the refined kill curve, and (given
/// per-cell CIs) the significance border.
inline ContourGrid build_contour(double tau_hat, double sigma2_tau_max, double var_w,
                                 const GridAxes& axes,
                                 std::vector<std::vector<PercentileCI>> ci = {}) {
    ContourGrid g;
    g.r2_axis = axes.r2;
    g.rho_axis = axes.rho;
    g.tau_hat = tau_hat;
    const auto nr = static_cast<Eigen::Index>(axes.r2.size());
    const auto np = static_cast<Eigen::Index>(axes.rho.size());
    g.bias_surface.resize(nr, np);
    g.adjusted_surface.resize(nr, np);
    for (Eigen::Index i = 0; i < nr; ++i)
        for (Eigen::Index j = 0; j < np; ++j) {
            const SensitivityParams p{axes.r2[static_cast<std::size_t>(i)],
                                      axes.rho[static_cast<std::size_t>(j)], sigma2_tau_max};
            g.bias_surface(i, j) = bias_from_params(p, var_w);
            g.adjusted_surface(i, j) = tau_hat - g.bias_surface(i, j);
        }

    // Kill curve: sign changes of the adjusted estimate along rho, refined.
    for (Eigen::Index i = 0; i < nr; ++i) {
        const double r2 = axes.r2[static_cast<std::size_t>(i)];
        auto f = [&](double rho) {
            return adjusted_estimate(tau_hat, {r2, rho, sigma2_tau_max}, var_w);
        };
        for (Eigen::Index j = 0; j < np; ++j) {
            const double a = g.adjusted_surface(i, j);
            if (a == 0.0) {
                g.kill_curve.push_back({r2, axes.rho[static_cast<std::size_t>(j)]});
                continue;
            }
            if (j + 1 < np) {
                const double b = g.adjusted_surface(i, j + 1);
                if (b != 0.0 && (a < 0.0) != (b < 0.0))
                    g.kill_curve.push_back(
                        {r2, detail::bisect(f, axes.rho[static_cast<std::size_t>(j)],
                                            axes.rho[static_cast<std::size_t>(j + 1)])});
            }
        }
    }

    if (!ci.empty()) {
        if (ci.size() != axes.r2.size() || ci.front().size() != axes.rho.size())
            throw Error(ErrorCode::Alignment, "sensitivity", "CI grid does not match the axes");
        // Walk from rho = 0 toward sign(tau_hat): the first covering cell is the border.
        std::size_t zero = 0;
        for (std::size_t j = 1; j < axes.rho.size(); ++j)
            if (std::abs(axes.rho[j]) < std::abs(axes.rho[zero])) zero = j;
        const int dir = tau_hat >= 0.0 ? 1 : -1;
        for (std::size_t i = 0; i < axes.r2.size(); ++i) {
            for (std::ptrdiff_t j = static_cast<std::ptrdiff_t>(zero);
                 j >= 0 && j < static_cast<std::ptrdiff_t>(axes.rho.size()); j += dir) {
                const auto ju = static_cast<std::size_t>(j);
                if (ci[i][ju].covers(0.0)) {
                    g.significance_border.push_back(
                        {i, ju, axes.r2[i], axes.rho[ju],
                         g.bias_surface(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ju)),
                         ci[i][ju]});
                    break;
                }
            }
        }
        g.ci = std::move(ci);
    }
    return g;
}

struct ThresholdResult {
    double threshold = 0.0; // signed like tau_hat
    bool flagged = false;   // no border, or unadjusted CI already covers 0
    std::string status;
};

/// Smallest-magnitude bias over the border cells, carrying its sign.
inline ThresholdResult minimal_bias_threshold(const ContourGrid& g, const PercentileCI& unadjusted) {
    ThresholdResult r;
    if (unadjusted.covers(0.0)) {
        r.flagged = true;
        r.status = "unadjusted interval already covers zero";
        return r;
    }
    if (g.significance_border.empty()) {
        r.flagged = true;
        r.status = "no significance border within the grid";
        return r;
    }
    const BorderCell* best = &g.significance_border.front();
    for (const auto& c : g.significance_border)
        if (std::abs(c.bias) < std::abs(best->bias)) best = &c;
    r.threshold = best->bias;
    r.status = "ok";
    return r;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

} // namespace detail

/// r2,rho,bias,adjusted,covers_zero,ci_lower,ci_upper (CI columns empty
/// without a bootstrap).
inline void write_contour_csv(std::ostream& out, const ContourGrid& g) {
    out << "r2,rho,bias,adjusted,covers_zero,ci_lower,ci_upper\n";
    for (std::size_t i = 0; i < g.r2_axis.size(); ++i)
        for (std::size_t j = 0; j < g.rho_axis.size(); ++j) {
            const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
            out << detail::fmt(g.r2_axis[i]) << ',' << detail::fmt(g.rho_axis[j]) << ','
                << detail::fmt(g.bias_surface(ii, jj)) << ',' << detail::fmt(g.adjusted_surface(ii, jj))
                << ',';
            if (g.ci.empty()) {
                out << ",,\n";
            } else {
                const auto& c = g.ci[i][j];
                out << (c.covers(0.0) ? 1 : 0) << ',' << detail::fmt(c.lower) << ','
                    << detail::fmt(c.upper) << '\n';
            }
        }
}

/// Standalone SVG: R^2 on x, rho on y, kill curve and significance border.
inline void write_contour_svg(std::ostream& out, const ContourGrid& g) {
    const double W = 640, H = 480, L = 70, R = 20, T = 40, B = 60;
    const double x0 = g.r2_axis.empty() ? 0.0 : g.r2_axis.front();
    const double x1 = g.r2_axis.empty() ? 1.0 : std::max(g.r2_axis.back(), x0 + 1e-9);
    const double y0 = g.rho_axis.empty() ? -1.0 : g.rho_axis.front();
    const double y1 = g.rho_axis.empty() ? 1.0 : std::max(g.rho_axis.back(), y0 + 1e-9);
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    using detail::fmt;

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
        << "Bias contour (estimate " << fmt(g.tau_hat) << ")</text>\n";
    // Axes and ticks.
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        out << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << H - B + 18
            << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(std::round(xv * 100) / 100)
            << "</text>\n";
        out << "<text x=\"" << L - 8 << "\" y=\"" << fmt(py(yv) + 4)
            << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(std::round(yv * 100) / 100)
            << "</text>\n";
    }
    out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 18
        << "\" text-anchor=\"middle\" font-size=\"13\">R² (residual imbalance)</text>\n";
    out << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
        << "transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">ρ (correlation with effect)</text>\n";

    auto polyline = [&](const std::vector<ContourPoint>& pts, const char* colour, const char* dash) {
        if (pts.empty()) return;
        out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\"";
        if (dash) out << " stroke-dasharray=\"" << dash << "\"";
        out << " points=\"";
        for (const auto& p : pts) out << fmt(px(p.r2)) << ',' << fmt(py(p.rho)) << ' ';
        out << "\"/>\n";
    };
    polyline(g.kill_curve, "firebrick", nullptr);
    std::vector<ContourPoint> border;
    for (const auto& c : g.significance_border) border.push_back({c.r2, c.rho});
    polyline(border, "steelblue", "6 4");

    out << "<line x1=\"" << W - 190 << "\" y1=\"" << T + 10 << "\" x2=\"" << W - 165 << "\" y2=\""
        << T + 10 << "\" stroke=\"firebrick\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << W - 160 << "\" y=\"" << T + 14 << "\" font-size=\"11\">estimate = 0</text>\n";
    out << "<line x1=\"" << W - 190 << "\" y1=\"" << T + 28 << "\" x2=\"" << W - 165 << "\" y2=\""
        << T + 28 << "\" stroke=\"steelblue\" stroke-width=\"2\" stroke-dasharray=\"6 4\"/>\n";
    out << "<text x=\"" << W - 160 << "\" y=\"" << T + 32
        << "\" font-size=\"11\">interval covers 0</text>\n";
    out << "</svg>\n";
}

} // namespace gensens
