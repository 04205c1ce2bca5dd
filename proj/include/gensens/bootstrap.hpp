#pragma once

#include <gensens/core_data.hpp>
#include <gensens/error.hpp>
#include <gensens/estimators.hpp>
#include <gensens/parallel.hpp>
#include <gensens/rng.hpp>
#include <gensens/sensitivity.hpp>
#include <gensens/weights.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <utility>
#include <vector>

namespace gensens {

struct BootstrapPlan {
    int replicates = 1000;
    std::uint64_t seed = 0;
    bool resample_target = false;
    unsigned threads = 1;
    double max_drop_fraction = 0.05;
    bool fail_on_unreliable = true; // throw, or only clear `reliable`
};

/// What each replicate recomputes. `study` > 0 generalizes from that study
/// alone; 0 uses the pooled estimator.
struct EstimatorSpec {
    WeightOptions weights;
    int study = 0;
};

struct PercentileCI {
    double alpha = 0.05;
    double lower = 0.0;
    double upper = 0.0;

    bool covers(double v) const { return lower <= v && v <= upper; }
};

struct BootstrapResult {
    std::vector<double> tau;   // per replicate; NaN when dropped
    std::vector<double> var_w; // sample variance of the replicate's w
    std::size_t dropped = 0;
    PercentileCI ci;
    double sd = 0.0;
    bool reliable = true;

    std::vector<std::size_t> kept() const {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < tau.size(); ++b)
            if (!std::isnan(tau[b])) out.push_back(b);
        return out;
    }
};

/// Type 7 sample quantile (linear interpolation between order statistics).
/// `sorted` must be ascending and nonempty.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw Error(ErrorCode::InsufficientData, "bootstrap", "no values");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline PercentileCI percentile_ci(std::vector<double> values, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw Error(ErrorCode::Domain, "bootstrap", "alpha must lie in (0, 1)");
    std::sort(values.begin(), values.end());
    return {alpha, quantile_sorted(values, alpha / 2.0), quantile_sorted(values, 1.0 - alpha / 2.0)};
}

/// Row indices of replicate `rep`: each study x arm stratum resampled to its own
/// size, the target kept as is unless the plan resamples it too.
inline std::vector<std::size_t> bootstrap_rows(const PooledDataset& data, const BootstrapPlan& plan,
                                               std::uint64_t rep) {
    std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < data.size(); ++i)
        strata[{data.study_id(i), data.in_studies(i) ? data.treatment(i) : -1}].push_back(i);
    KeyedRng rng(plan.seed, rep);
    std::vector<std::size_t> rows;
    rows.reserve(data.size());
    for (const auto& [key, members] : strata) {
        if (key.first == 0 && !plan.resample_target) {
            rows.insert(rows.end(), members.begin(), members.end());
            continue;
        }
        for (std::size_t k = 0; k < members.size(); ++k) rows.push_back(members[rng.index(members.size())]);
    }
    return rows;
}

struct PointStatistic {
    double tau = 0.0;
    double var_w = 0.0;
};

/// Estimate and var(w) with weights re-estimated on `data`. Throws on
/// non-convergence.
inline PointStatistic compute_statistic(const PooledDataset& data, const EstimatorSpec& spec) {
    if (spec.study > 0) {
        const auto r = estimate_pate_single_study(data, spec.study, spec.weights);
        return {r.estimate.tau_hat, sample_variance(r.weights.w)};
    }
    const auto ws = estimate_weights(data, spec.weights);
    const auto r = estimate_pate(data, ws);
    return {r.tau_hat, sample_variance(ws.w)};
}

inline BootstrapResult bootstrap_estimate(const PooledDataset& data, const BootstrapPlan& plan,
                                          const EstimatorSpec& spec, double alpha = 0.05) {
    if (plan.replicates < 1)
        throw Error(ErrorCode::Domain, "bootstrap", "at least one replicate is required");
    // Single-study specs only ever touch the target and study s.
    const PooledDataset base = spec.study > 0 ? data.restrict_to_study(spec.study) : data;
    const auto B = static_cast<std::size_t>(plan.replicates);
    BootstrapResult res;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    res.tau.assign(B, nan);
    res.var_w.assign(B, nan);

    parallel_for(B, plan.threads, [&](std::size_t b) {
        const PooledDataset replicate = base.subset(bootstrap_rows(base, plan, b));
        try {
            const auto st = compute_statistic(replicate, spec);
            if (std::isfinite(st.tau)) {
                res.tau[b] = st.tau;
                res.var_w[b] = st.var_w;
            }
        } catch (const Error& e) {
            switch (e.code()) {
            case ErrorCode::Convergence:
            case ErrorCode::Overlap:
            case ErrorCode::Separation:
            case ErrorCode::Positivity:
                break; // dropped
            default:
                throw;
            }
        }
    });

    std::vector<double> kept;
    for (double t : res.tau)
        if (!std::isnan(t)) kept.push_back(t);
    res.dropped = B - kept.size();
    res.reliable = static_cast<double>(res.dropped) <= plan.max_drop_fraction * static_cast<double>(B);
    if (!res.reliable && plan.fail_on_unreliable)
        throw Error(ErrorCode::Reliability, "bootstrap",
                    std::to_string(res.dropped) + " of " + std::to_string(B) +
                        " replicates failed to converge");
    if (kept.empty()) {
        res.ci = {alpha, nan, nan};
        res.sd = nan;
        return res;
    }
    double mean = 0.0;
    for (double t : kept) mean += t;
    mean /= static_cast<double>(kept.size());
    double ss = 0.0;
    for (double t : kept) ss += (t - mean) * (t - mean);
    res.sd = kept.size() > 1 ? std::sqrt(ss / static_cast<double>(kept.size() - 1)) : 0.0;
    res.ci = percentile_ci(std::move(kept), alpha);
    return res;
}

/// Axes of the sensitivity grid.
struct GridAxes {
    std::vector<double> r2;
    std::vector<double> rho;

    /// R^2 in [0, 0.99] and rho in [-0.99, 0.99], both step 0.01.
    static GridAxes standard() {
        GridAxes g;
        for (int i = 0; i <= 99; ++i) g.r2.push_back(i / 100.0);
        for (int i = -99; i <= 99; ++i) g.rho.push_back(i / 100.0);
        return g;
    }
};

/// Percentile CIs of the replicate-wise adjusted estimates, indexed [r2][rho].
/// sigma^2 is fixed; var(w) is each replicate's own.
inline std::vector<std::vector<PercentileCI>> adjusted_ci_grid(const BootstrapResult& boot,
                                                                double sigma2_tau_max,
                                                                const GridAxes& axes, double alpha,
                                                                unsigned threads = 1) {
    const auto kept = boot.kept();
    if (kept.empty())
        throw Error(ErrorCode::InsufficientData, "bootstrap", "no usable replicates");
    std::vector<std::vector<PercentileCI>> out(axes.r2.size(), std::vector<PercentileCI>(axes.rho.size()));
    parallel_for(axes.r2.size(), threads, [&](std::size_t i) {
        std::vector<double> adj(kept.size());
        for (std::size_t j = 0; j < axes.rho.size(); ++j) {
            const SensitivityParams p{axes.r2[i], axes.rho[j], sigma2_tau_max};
            for (std::size_t k = 0; k < kept.size(); ++k)
                adj[k] = adjusted_estimate(boot.tau[kept[k]], p, boot.var_w[kept[k]]);
            out[i][j] = percentile_ci(adj, alpha);
        }
    });
    return out;
}

inline void write_replicates_csv(std::ostream& out, const BootstrapResult& boot) {
    out << "replicate,tau,var_w\n";
    out.precision(17);
    for (std::size_t b = 0; b < boot.tau.size(); ++b)
        out << b << ',' << boot.tau[b] << ',' << boot.var_w[b] << '\n';
}

} // namespace gensens
