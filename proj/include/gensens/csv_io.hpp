#pragma once

#include <gensens/core_data.hpp>
#include <gensens/error.hpp>

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace gensens {

/// Column roles for a pooled CSV.
struct Schema {
    std::string study_column = "study";
    std::string treatment_column = "treatment";
    std::string outcome_column = "outcome";
    /// Covariate columns to read; empty means every remaining column.
    std::vector<std::string> covariates;
    /// Columns forced to categorical. Non-numeric columns are categorical anyway.
    std::vector<std::string> categorical;
    /// Named groups of already-encoded indicator columns (as written by write_csv).
    std::map<std::string, std::vector<std::string>> groups;
    std::vector<std::string> modifiers;
    std::vector<std::string> adjusters;
};

inline void to_json(nlohmann::json& j, const Schema& s) {
    j = nlohmann::json{{"study", s.study_column},     {"treatment", s.treatment_column},
                       {"outcome", s.outcome_column}, {"modifiers", s.modifiers},
                       {"adjusters", s.adjusters}};
    if (!s.covariates.empty()) j["covariates"] = s.covariates;
    if (!s.categorical.empty()) j["categorical"] = s.categorical;
    if (!s.groups.empty()) j["groups"] = s.groups;
}

inline void from_json(const nlohmann::json& j, Schema& s) {
    s = Schema{};
    s.study_column = j.value("study", s.study_column);
    s.treatment_column = j.value("treatment", s.treatment_column);
    s.outcome_column = j.value("outcome", s.outcome_column);
    s.covariates = j.value("covariates", std::vector<std::string>{});
    s.categorical = j.value("categorical", std::vector<std::string>{});
    s.groups = j.value("groups", std::map<std::string, std::vector<std::string>>{});
    s.modifiers = j.value("modifiers", std::vector<std::string>{});
    s.adjusters = j.value("adjusters", std::vector<std::string>{});
}

inline Schema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "core_data", "cannot open schema '" + path + "'");
    try {
        return nlohmann::json::parse(in).get<Schema>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::Schema, "core_data", std::string("bad schema JSON: ") + e.what());
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

/// Shortest decimal text that parses back to exactly the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, p);
}

inline std::string quote_if_needed(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

} // namespace detail

/// Parses a pooled CSV from a stream. Categorical covariates are expanded to
/// reference-coded indicators named `col=level`, levels in lexicographic
/// order with the first dropped.
inline PooledDataset read_csv(std::istream& in, const Schema& schema) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::Schema, "core_data", "empty CSV");
    const auto header = detail::split_csv_line(line);
    std::map<std::string, std::size_t> index;
    for (std::size_t j = 0; j < header.size(); ++j)
        index[std::string(detail::trim(header[j]))] = j;

    auto column = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end())
            throw Error(ErrorCode::Schema, "core_data", "missing column '" + name + "'");
        return it->second;
    };
    const std::size_t study_col = column(schema.study_column);
    const std::size_t treat_col = column(schema.treatment_column);
    const std::size_t out_col = column(schema.outcome_column);

    std::vector<std::string> cov_names = schema.covariates;
    if (cov_names.empty()) {
        for (const auto& h : header) {
            std::string name(detail::trim(h));
            if (name != schema.study_column && name != schema.treatment_column &&
                name != schema.outcome_column)
                cov_names.push_back(name);
        }
    }
    std::vector<std::size_t> cov_cols;
    for (const auto& c : cov_names) cov_cols.push_back(column(c));

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != header.size())
            throw Error(ErrorCode::Validation, "core_data",
                        "row " + std::to_string(rows.size() + 1) + " has " +
                            std::to_string(f.size()) + " fields, expected " +
                            std::to_string(header.size()));
        rows.push_back(std::move(f));
    }

    const std::size_t n = rows.size();
    std::vector<int> study(n);
    std::vector<std::int8_t> treatment(n, -1);
    std::vector<double> outcome(n, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string row_label = "row " + std::to_string(i + 1);
        auto s = detail::parse_double(rows[i][study_col]);
        if (!s || *s != std::floor(*s))
            throw Error(ErrorCode::Validation, "core_data", row_label + " has a bad study label");
        study[i] = static_cast<int>(*s);
        auto a = detail::trim(rows[i][treat_col]);
        auto y = detail::trim(rows[i][out_col]);
        if (study[i] == 0) {
            if (!a.empty() || !y.empty())
                throw Error(ErrorCode::Validation, "core_data",
                            row_label + " is a target row but has treatment or outcome");
            continue;
        }
        auto av = detail::parse_double(a);
        if (!av || (*av != 0.0 && *av != 1.0))
            throw Error(ErrorCode::Validation, "core_data",
                        row_label + " needs a 0/1 treatment");
        treatment[i] = static_cast<std::int8_t>(*av);
        auto yv = detail::parse_double(y);
        if (!yv) throw Error(ErrorCode::Validation, "core_data", row_label + " needs an outcome");
        outcome[i] = *yv;
    }

    // Decide numeric vs categorical per covariate.
    std::set<std::string> forced(schema.categorical.begin(), schema.categorical.end());
    std::vector<std::string> encoded_names;
    std::vector<std::vector<double>> encoded_cols;
    std::map<std::string, std::vector<std::size_t>> source_columns;
    for (std::size_t c = 0; c < cov_names.size(); ++c) {
        const std::string& name = cov_names[c];
        const std::size_t col = cov_cols[c];
        for (std::size_t i = 0; i < n; ++i)
            if (detail::trim(rows[i][col]).empty())
                throw Error(ErrorCode::Validation, "core_data",
                            "row " + std::to_string(i + 1) + " has a missing value for '" +
                                name + "'");
        bool categorical = forced.count(name) > 0;
        if (!categorical)
            for (std::size_t i = 0; i < n && !categorical; ++i)
                categorical = !detail::parse_double(rows[i][col]).has_value();
        if (!categorical) {
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i) v[i] = *detail::parse_double(rows[i][col]);
            source_columns[name].push_back(encoded_names.size());
            encoded_names.push_back(name);
            encoded_cols.push_back(std::move(v));
            continue;
        }
        std::set<std::string> levels;
        for (std::size_t i = 0; i < n; ++i) levels.insert(std::string(detail::trim(rows[i][col])));
        auto it = levels.begin();
        if (it != levels.end()) ++it;
        source_columns[name]; // a single-level factor owns no columns
        for (; it != levels.end(); ++it) {
            std::vector<double> v(n);
            for (std::size_t i = 0; i < n; ++i)
                v[i] = detail::trim(rows[i][col]) == *it ? 1.0 : 0.0;
            source_columns[name].push_back(encoded_names.size());
            encoded_names.push_back(name + "=" + *it);
            encoded_cols.push_back(std::move(v));
        }
    }

    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(encoded_cols.size()));
    for (std::size_t j = 0; j < encoded_cols.size(); ++j)
        for (std::size_t i = 0; i < n; ++i)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = encoded_cols[j][i];

    // Groups: declared indicator groups first, then every remaining source column.
    std::vector<CovariateGroup> groups;
    std::set<std::string> grouped;
    for (const auto& [gname, members] : schema.groups) {
        CovariateGroup g{gname, {}};
        for (const auto& m : members) {
            auto it = source_columns.find(m);
            if (it == source_columns.end())
                throw Error(ErrorCode::Schema, "core_data",
                            "group '" + gname + "' references unknown column '" + m + "'");
            g.columns.insert(g.columns.end(), it->second.begin(), it->second.end());
            grouped.insert(m);
        }
        groups.push_back(std::move(g));
    }
    for (const auto& name : cov_names)
        if (!grouped.count(name)) groups.push_back({name, source_columns[name]});

    return PooledDataset(std::move(study), std::move(treatment), std::move(outcome), std::move(x),
                         std::move(encoded_names), std::move(groups), schema.modifiers,
                         schema.adjusters);
}

inline PooledDataset load_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "core_data", "cannot open '" + path + "'");
    return read_csv(in, schema);
}

/// Writes encoded columns: study,treatment,outcome,<covariates...>.
inline void write_csv(std::ostream& out, const PooledDataset& data) {
    out << "study,treatment,outcome";
    for (const auto& c : data.covariate_names()) out << ',' << detail::quote_if_needed(c);
    out << '\n';
    const auto& x = data.covariates();
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data.study_id(i) << ',';
        if (data.in_studies(i))
            out << data.treatment(i) << ',' << detail::format_double(data.outcome(i));
        else
            out << ',';
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            out << ',' << detail::format_double(x(static_cast<Eigen::Index>(i), j));
        out << '\n';
    }
}

/// Schema that reloads what write_csv produced with identical groups and roles.
inline Schema schema_for(const PooledDataset& data) {
    Schema s;
    s.modifiers = data.modifier_names();
    s.adjusters = data.adjustment_names();
    for (const auto& g : data.groups()) {
        const bool identity = g.columns.size() == 1 && data.covariate_names()[g.columns[0]] == g.name;
        if (identity) continue;
        auto& members = s.groups[g.name];
        for (auto c : g.columns) members.push_back(data.covariate_names()[c]);
    }
    return s;
}

} // namespace gensens
