#pragma once

#include <gensens/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gensens {

/// One row of the pooled data. Target units (study_id == 0) carry covariates
/// only; study units carry treatment and outcome as well.
struct UnitRecord {
    int study_id = 0;
    std::optional<int> treatment;
    std::optional<double> outcome;
    std::map<std::string, double> covariates;

    bool in_studies() const { return study_id != 0; }
};

/// A source covariate and the encoded matrix columns it owns. Numeric
/// covariates own one column; a categorical one owns its indicator columns.
struct CovariateGroup {
    std::string name;
    std::vector<std::size_t> columns;
};

struct StudyArms {
    std::size_t treated = 0;
    std::size_t control = 0;
};

struct ArmCounts {
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
    std::map<int, StudyArms> per_study;

    std::size_t total() const { return n_treated + n_control; }
};

/// Immutable pooled sample of a target (study 0) and m >= 1 studies.
///
/// Covariates are stored encoded, one matrix column per numeric covariate or
/// categorical indicator. Modifier (V) and adjustment (X) roles are assigned
/// to covariate groups, so dropping a categorical modifier drops all of its
/// indicators together.
class PooledDataset {
public:
    PooledDataset(std::vector<int> study, std::vector<std::int8_t> treatment,
                  std::vector<double> outcome, Eigen::MatrixXd covariates,
                  std::vector<std::string> covariate_names,
                  std::vector<CovariateGroup> groups, std::vector<std::string> modifiers,
                  std::vector<std::string> adjusters)
        : study_(std::move(study)), treatment_(std::move(treatment)),
          outcome_(std::move(outcome)), covariates_(std::move(covariates)),
          covariate_names_(std::move(covariate_names)), groups_(std::move(groups)),
          modifiers_(std::move(modifiers)), adjusters_(std::move(adjusters)) {
        validate();
    }

    /// Builds a dataset where each covariate name is its own group.
    static PooledDataset from_units(const std::vector<UnitRecord>& units,
                                    std::vector<std::string> modifiers,
                                    std::vector<std::string> adjusters) {
        std::set<std::string> names;
        for (const auto& u : units)
            for (const auto& [k, v] : u.covariates) names.insert(k);
        std::vector<std::string> cols(names.begin(), names.end());
        std::vector<CovariateGroup> groups;
        for (std::size_t j = 0; j < cols.size(); ++j) groups.push_back({cols[j], {j}});

        const std::size_t n = units.size();
        std::vector<int> study(n);
        std::vector<std::int8_t> treatment(n, -1);
        std::vector<double> outcome(n, std::numeric_limits<double>::quiet_NaN());
        Eigen::MatrixXd x(n, cols.size());
        for (std::size_t i = 0; i < n; ++i) {
            const auto& u = units[i];
            study[i] = u.study_id;
            if (u.treatment) treatment[i] = static_cast<std::int8_t>(*u.treatment);
            if (u.outcome) outcome[i] = *u.outcome;
            for (std::size_t j = 0; j < cols.size(); ++j) {
                auto it = u.covariates.find(cols[j]);
                if (it == u.covariates.end())
                    throw Error(ErrorCode::Validation, "core_data",
                                "row " + std::to_string(i + 1) + " is missing covariate '" +
                                    cols[j] + "'");
                x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = it->second;
            }
        }
        return PooledDataset(std::move(study), std::move(treatment), std::move(outcome),
                             std::move(x), std::move(cols), std::move(groups),
                             std::move(modifiers), std::move(adjusters));
    }

    std::size_t size() const { return study_.size(); }
    std::size_t covariate_count() const { return covariate_names_.size(); }

    int study_id(std::size_t i) const { return study_[i]; }
    bool in_studies(std::size_t i) const { return study_[i] != 0; }
    /// Treatment of a study unit (0/1); -1 for target units.
    int treatment(std::size_t i) const { return treatment_[i]; }
    /// Outcome of a study unit; NaN for target units.
    double outcome(std::size_t i) const { return outcome_[i]; }

    const Eigen::MatrixXd& covariates() const { return covariates_; }
    const std::vector<std::string>& covariate_names() const { return covariate_names_; }
    const std::vector<CovariateGroup>& groups() const { return groups_; }
    const std::vector<std::string>& modifier_names() const { return modifiers_; }
    const std::vector<std::string>& adjustment_names() const { return adjusters_; }

    const std::vector<std::size_t>& study_rows() const { return study_rows_; }
    const std::vector<std::size_t>& target_rows() const { return target_rows_; }
    /// Study labels s >= 1 in increasing order.
    const std::vector<int>& study_ids() const { return study_ids_; }
    /// n_s for every label including the target (0).
    const std::map<int, std::size_t>& study_sizes() const { return study_sizes_; }
    const ArmCounts& arm_counts() const { return arms_; }

    UnitRecord unit(std::size_t i) const {
        UnitRecord u;
        u.study_id = study_[i];
        if (treatment_[i] >= 0) u.treatment = treatment_[i];
        if (in_studies(i)) u.outcome = outcome_[i];
        for (std::size_t j = 0; j < covariate_names_.size(); ++j)
            u.covariates[covariate_names_[j]] =
                covariates_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        return u;
    }

    const CovariateGroup& group(const std::string& name) const {
        for (const auto& g : groups_)
            if (g.name == name) return g;
        throw Error(ErrorCode::Name, "core_data", "unknown covariate '" + name + "'");
    }

    std::vector<std::size_t> columns_of(const std::vector<std::string>& group_names) const {
        std::vector<std::size_t> cols;
        for (const auto& name : group_names) {
            const auto& g = group(name);
            cols.insert(cols.end(), g.columns.begin(), g.columns.end());
        }
        return cols;
    }

    std::vector<std::size_t> modifier_columns() const { return columns_of(modifiers_); }
    std::vector<std::size_t> adjuster_columns() const { return columns_of(adjusters_); }

    /// Modifier columns with group `dropped` removed.
    std::vector<std::size_t> modifier_columns_without(const std::string& dropped) const {
        if (std::find(modifiers_.begin(), modifiers_.end(), dropped) == modifiers_.end())
            throw Error(ErrorCode::Name, "weights",
                        "'" + dropped + "' is not an observed effect modifier");
        std::vector<std::string> kept;
        for (const auto& m : modifiers_)
            if (m != dropped) kept.push_back(m);
        return columns_of(kept);
    }

    /// Rows gathered in the given order (duplicates allowed).
    PooledDataset subset(const std::vector<std::size_t>& rows) const {
        std::vector<int> study(rows.size());
        std::vector<std::int8_t> treatment(rows.size());
        std::vector<double> outcome(rows.size());
        Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), covariates_.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const std::size_t i = rows[r];
            study[r] = study_[i];
            treatment[r] = treatment_[i];
            outcome[r] = outcome_[i];
            x.row(static_cast<Eigen::Index>(r)) = covariates_.row(static_cast<Eigen::Index>(i));
        }
        return PooledDataset(std::move(study), std::move(treatment), std::move(outcome),
                             std::move(x), covariate_names_, groups_, modifiers_, adjusters_);
    }

    /// Target sample plus the units of study `s` only.
    PooledDataset restrict_to_study(int s) const {
        if (study_sizes_.find(s) == study_sizes_.end() || s == 0)
            throw Error(ErrorCode::Validation, "core_data",
                        "study " + std::to_string(s) + " is not present");
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < size(); ++i)
            if (study_[i] == 0 || study_[i] == s) rows.push_back(i);
        return subset(rows);
    }

    PooledDataset with_roles(std::vector<std::string> modifiers,
                             std::vector<std::string> adjusters) const {
        return PooledDataset(study_, treatment_, outcome_, covariates_, covariate_names_,
                             groups_, std::move(modifiers), std::move(adjusters));
    }

private:
    void validate() {
        const std::size_t n = study_.size();
        if (treatment_.size() != n || outcome_.size() != n ||
            static_cast<std::size_t>(covariates_.rows()) != n ||
            static_cast<std::size_t>(covariates_.cols()) != covariate_names_.size())
            throw Error(ErrorCode::Validation, "core_data", "column lengths disagree");

        std::set<std::string> group_names;
        for (const auto& g : groups_) {
            group_names.insert(g.name);
            for (auto c : g.columns)
                if (c >= covariate_names_.size())
                    throw Error(ErrorCode::Validation, "core_data",
                                "group '" + g.name + "' references a missing column");
        }
        for (const auto& a : adjusters_)
            if (!group_names.count(a))
                throw Error(ErrorCode::Schema, "core_data", "unknown adjuster '" + a + "'");
        for (const auto& m : modifiers_) {
            if (!group_names.count(m))
                throw Error(ErrorCode::Schema, "core_data", "unknown modifier '" + m + "'");
            if (std::find(adjusters_.begin(), adjusters_.end(), m) == adjusters_.end())
                throw Error(ErrorCode::Validation, "core_data",
                            "modifier '" + m + "' must also be an adjustment covariate");
        }

        for (std::size_t i = 0; i < n; ++i) {
            const int s = study_[i];
            if (s < 0)
                throw Error(ErrorCode::Validation, "core_data",
                            "row " + std::to_string(i + 1) + " has a negative study label");
            if (s == 0) {
                if (treatment_[i] >= 0 || !std::isnan(outcome_[i]))
                    throw Error(ErrorCode::Validation, "core_data",
                                "target row " + std::to_string(i + 1) +
                                    " must not carry treatment or outcome");
                target_rows_.push_back(i);
            } else {
                if (treatment_[i] != 0 && treatment_[i] != 1)
                    throw Error(ErrorCode::Validation, "core_data",
                                "study row " + std::to_string(i + 1) +
                                    " needs a 0/1 treatment");
                if (!std::isfinite(outcome_[i]))
                    throw Error(ErrorCode::Validation, "core_data",
                                "study row " + std::to_string(i + 1) + " needs an outcome");
                study_rows_.push_back(i);
                auto& arms = arms_.per_study[s];
                if (treatment_[i] == 1) {
                    ++arms.treated;
                    ++arms_.n_treated;
                } else {
                    ++arms.control;
                    ++arms_.n_control;
                }
            }
            ++study_sizes_[s];
            for (Eigen::Index j = 0; j < covariates_.cols(); ++j)
                if (!std::isfinite(covariates_(static_cast<Eigen::Index>(i), j)))
                    throw Error(ErrorCode::Validation, "core_data",
                                "row " + std::to_string(i + 1) + " has a missing value for '" +
                                    covariate_names_[static_cast<std::size_t>(j)] + "'");
        }
        if (target_rows_.empty())
            throw Error(ErrorCode::Validation, "core_data", "target sample (study 0) is empty");
        if (study_rows_.empty())
            throw Error(ErrorCode::Validation, "core_data", "at least one study is required");
        for (const auto& [s, arms] : arms_.per_study) {
            study_ids_.push_back(s);
            if (arms.treated == 0 || arms.control == 0)
                throw Error(ErrorCode::Positivity, "core_data",
                            "study " + std::to_string(s) + " has an empty " +
                                (arms.treated == 0 ? "treated" : "control") + " arm");
        }
    }

    std::vector<int> study_;
    std::vector<std::int8_t> treatment_;
    std::vector<double> outcome_;
    Eigen::MatrixXd covariates_;
    std::vector<std::string> covariate_names_;
    std::vector<CovariateGroup> groups_;
    std::vector<std::string> modifiers_;
    std::vector<std::string> adjusters_;

    std::vector<std::size_t> study_rows_;
    std::vector<std::size_t> target_rows_;
    std::vector<int> study_ids_;
    std::map<int, std::size_t> study_sizes_;
    ArmCounts arms_;
};

struct SmdEntry {
    int study = 0;
    std::string covariate;
    double smd = 0.0; // +-inf when the pooled SD is zero but the means differ
};

/// Standardized mean difference of every encoded covariate between each study
/// and the target: (mean_s - mean_0) / sqrt((var_s + var_0) / 2), with
/// sample (n - 1) variances.
inline std::vector<SmdEntry> summarize_smd(const PooledDataset& data) {
    const auto& x = data.covariates();
    auto moments = [&](int s, Eigen::Index j) {
        double sum = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.study_id(i) == s) {
                sum += x(static_cast<Eigen::Index>(i), j);
                ++n;
            }
        const double mean = sum / static_cast<double>(n);
        for (std::size_t i = 0; i < data.size(); ++i)
            if (data.study_id(i) == s) {
                const double d = x(static_cast<Eigen::Index>(i), j) - mean;
                sq += d * d;
            }
        const double var = n > 1 ? sq / static_cast<double>(n - 1) : 0.0;
        return std::pair{mean, var};
    };

    std::vector<SmdEntry> out;
    for (int s : data.study_ids()) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            const auto [m0, v0] = moments(0, j);
            const auto [ms, vs] = moments(s, j);
            const double sd = std::sqrt((vs + v0) / 2.0);
            double smd;
            if (sd > 0.0) {
                smd = (ms - m0) / sd;
            } else if (ms == m0) {
                smd = 0.0;
            } else {
                smd = ms > m0 ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
            }
            out.push_back({s, data.covariate_names()[static_cast<std::size_t>(j)], smd});
        }
    }
    return out;
}

/// Largest |SMD| of study s over all covariates.
inline double max_abs_smd(const std::vector<SmdEntry>& table, int s) {
    double m = 0.0;
    for (const auto& e : table)
        if (e.study == s) m = std::max(m, std::abs(e.smd));
    return m;
}

} // namespace gensens
