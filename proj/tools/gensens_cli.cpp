// gensens: generalization estimates, sensitivity analysis and power studies
// from the command line. Run `gensens --help` for the subcommands.

#include <gensens/gensens.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef GENSENS_DATA_DIR
#define GENSENS_DATA_DIR "data"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gensens;

namespace {

struct Common {
    std::string data, schema, out = ".";
    std::optional<std::uint64_t> seed;
    int boot = 1000;
    double alpha = 0.05;
    unsigned threads = default_threads();
};

struct Methods {
    std::string generalization = "eb";
    std::string deconfounding = "logistic";
    bool ridge_fallback = false;
    bool resample_target = false;
    bool randomized = false; // pooled within-study variances instead of Hajek
    std::string sigma_mode = "conservative";
};

struct Status {
    std::vector<std::string> warnings;
    bool flagged = false;
    int exit_code() const { return flagged || !warnings.empty() ? 2 : 0; }
};

std::uint64_t resolve_seed(Common& c) {
    if (!c.seed) {
        std::random_device rd;
        c.seed = (static_cast<std::uint64_t>(rd()) << 32) | rd();
        std::cerr << "seed: " << *c.seed << '\n';
    }
    return *c.seed;
}

WeightOptions weight_options(const Methods& m) {
    WeightOptions o;
    if (m.generalization == "eb")
        o.generalization = GeneralizationMethod::EntropyBalancing;
    else if (m.generalization == "logistic")
        o.generalization = GeneralizationMethod::Logistic;
    else
        throw Error(ErrorCode::Schema, "cli", "unknown generalization method '" + m.generalization + "'");
    if (m.deconfounding == "logistic")
        o.deconfounding = DeconfoundingMethod::LogisticPerStudy;
    else if (m.deconfounding == "constant")
        o.deconfounding = DeconfoundingMethod::Constant;
    else
        throw Error(ErrorCode::Schema, "cli", "unknown de-confounding method '" + m.deconfounding + "'");
    o.irls.ridge_fallback = m.ridge_fallback;
    return o;
}

SigmaMode sigma_mode(const Methods& m) {
    if (m.sigma_mode == "conservative") return SigmaMode::Conservative;
    if (m.sigma_mode == "sharp") return SigmaMode::Sharp;
    throw Error(ErrorCode::Schema, "cli", "unknown sigma mode '" + m.sigma_mode + "'");
}

PooledDataset load_data(const Common& c) {
    if (c.data.empty()) throw Error(ErrorCode::Schema, "cli", "--data is required");
    Schema schema;
    if (!c.schema.empty()) schema = load_schema(c.schema);
    PooledDataset data = load_csv(c.data, schema);
    if (schema.modifiers.empty() || schema.adjusters.empty()) {
        std::vector<std::string> all;
        for (const auto& g : data.groups()) all.push_back(g.name);
        data = data.with_roles(schema.modifiers.empty() ? all : schema.modifiers,
                               schema.adjusters.empty() ? all : schema.adjusters);
    }
    return data;
}

json config_json(const std::string& command, const Common& c, const Methods* m, json extra = json::object()) {
    json j = {{"command", command}, {"alpha", c.alpha}, {"boot", c.boot}};
    if (!c.data.empty()) j["data"] = c.data;
    if (!c.schema.empty()) j["schema"] = c.schema;
    if (c.seed) j["seed"] = *c.seed;
    if (m) {
        j["generalization"] = m->generalization;
        j["deconfounding"] = m->deconfounding;
        j["ridge_fallback"] = m->ridge_fallback;
        j["resample_target"] = m->resample_target;
        j["randomized"] = m->randomized;
        j["sigma_mode"] = m->sigma_mode;
    }
    for (auto& [k, v] : extra.items()) j[k] = v;
    return j;
}

void write_file(const Common& c, const std::string& name, const std::string& body) {
    fs::create_directories(c.out);
    const fs::path p = fs::path(c.out) / name;
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorCode::Io, "cli", "cannot write " + p.string());
    f << body;
}

void write_json(const Common& c, const std::string& name, json report, const json& config, const Status& st) {
    report["version"] = GENSENS_VERSION;
    report["config"] = config;
    report["warnings"] = st.warnings;
    write_file(c, name, report.dump(2) + "\n");
}

json ci_json(const PercentileCI& ci) { return {{"alpha", ci.alpha}, {"lower", ci.lower}, {"upper", ci.upper}}; }

/// Shared pipeline: weights, point estimate, moments and the bootstrap.
struct Analysis {
    WeightSet weights;
    EstimateResult estimate;
    PotentialOutcomeMoments moments;
    std::array<double, 2> arm_var{};
    double cov_w_tau = 0.0;
    double var_w = 0.0;
    double sigma2 = 0.0;
    BootstrapResult boot;
};

Analysis analyze(const PooledDataset& data, const Common& c, const Methods& m, Status& st, bool with_boot = true) {
    Analysis a;
    const auto opts = weight_options(m);
    a.weights = estimate_weights(data, opts);
    for (const auto& w : a.weights.warnings()) st.warnings.push_back("weights: " + w);
    a.estimate = estimate_pate(data, a.weights);
    a.moments = hajek_moments(data, a.weights.propensity);
    a.arm_var = m.randomized ? pooled_arm_variances(data)
                             : std::array<double, 2>{a.moments.var[0], a.moments.var[1]};
    a.cov_w_tau = estimate_cov_w_tau(a.estimate.tau_hat, a.moments);
    a.var_w = sample_variance(a.weights.w);
    a.sigma2 = sigma2_tau_bound(a.arm_var[1], a.arm_var[0], sigma_mode(m));
    if (with_boot && c.boot > 0) {
        BootstrapPlan plan;
        plan.replicates = c.boot;
        plan.seed = *c.seed;
        plan.resample_target = m.resample_target;
        plan.threads = c.threads;
        plan.fail_on_unreliable = false;
        a.boot = bootstrap_estimate(data, plan, {opts, 0}, c.alpha);
        if (!a.boot.reliable) {
            st.flagged = true;
            st.warnings.push_back("bootstrap: " + std::to_string(a.boot.dropped) + " of " +
                                  std::to_string(c.boot) + " replicates dropped");
        }
    }
    return a;
}

json estimate_json(const PooledDataset& data, const Analysis& a) {
    json j = {{"tau_hat", a.estimate.tau_hat},
              {"mu1", a.moments.mu[1]},
              {"mu0", a.moments.mu[0]},
              {"var_y1", a.arm_var[1]},
              {"var_y0", a.arm_var[0]},
              {"cov_w_tau", a.cov_w_tau},
              {"n1", a.estimate.n_used.n_treated},
              {"n0", a.estimate.n_used.n_control},
              {"var_w", a.var_w},
              {"weights", {{"method", a.weights.method}, {"converged", a.weights.converged()}}},
              {"studies", data.study_ids()}};
    if (!a.boot.tau.empty())
        j["bootstrap"] = {{"replicates", a.boot.tau.size()},
                          {"dropped", a.boot.dropped},
                          {"reliable", a.boot.reliable},
                          {"sd", a.boot.sd},
                          {"ci", ci_json(a.boot.ci)}};
    return j;
}

std::string replicates_csv(const BootstrapResult& b) {
    std::ostringstream s;
    write_replicates_csv(s, b);
    return s.str();
}

// --- estimate ---------------------------------------------------------------

int cmd_estimate(Common c, const Methods& m, int single_study, bool dump_weights, bool dump_replicates) {
    resolve_seed(c);
    const PooledDataset data = load_data(c);
    Status st;
    json report;
    const json cfg = config_json("estimate", c, &m, {{"single_study", single_study}});
    if (single_study > 0) {
        const auto opts = weight_options(m);
        const auto r = estimate_pate_single_study(data, single_study, opts);
        for (const auto& w : r.weights.warnings()) st.warnings.push_back("weights: " + w);
        report = {{"tau_hat", r.estimate.tau_hat},
                  {"study", single_study},
                  {"n1", r.estimate.n_used.n_treated},
                  {"n0", r.estimate.n_used.n_control},
                  {"weights", {{"method", r.weights.method}, {"converged", r.weights.converged()}}}};
        if (c.boot > 0) {
            BootstrapPlan plan;
            plan.replicates = c.boot;
            plan.seed = *c.seed;
            plan.resample_target = m.resample_target;
            plan.threads = c.threads;
            plan.fail_on_unreliable = false;
            const auto b = bootstrap_estimate(data, plan, {opts, single_study}, c.alpha);
            if (!b.reliable) st.flagged = true;
            report["bootstrap"] = {{"replicates", b.tau.size()}, {"dropped", b.dropped},
                                   {"reliable", b.reliable},     {"sd", b.sd},
                                   {"ci", ci_json(b.ci)}};
            if (dump_replicates) write_file(c, "replicates.csv", replicates_csv(b));
        }
        if (dump_weights) {
            std::ostringstream s;
            write_weights_csv(s, data.restrict_to_study(single_study), r.weights);
            write_file(c, "weights.csv", s.str());
        }
    } else {
        const Analysis a = analyze(data, c, m, st);
        report = estimate_json(data, a);
        if (dump_weights) {
            std::ostringstream s;
            write_weights_csv(s, data, a.weights);
            write_file(c, "weights.csv", s.str());
        }
        if (dump_replicates && !a.boot.tau.empty()) write_file(c, "replicates.csv", replicates_csv(a.boot));
    }
    write_json(c, "estimate.json", report, cfg, st);
    std::cout << "tau_hat " << report["tau_hat"].get<double>() << '\n';
    return st.exit_code();
}

// --- sensitivity / contour / benchmark ----------------------------------------

GridAxes make_axes(double r2_max, double rho_max, double step) {
    if (!(step > 0.0) || !(r2_max < 1.0) || !(rho_max <= 1.0))
        throw Error(ErrorCode::Domain, "cli", "grid needs step > 0, R^2 max < 1, rho max <= 1");
    GridAxes g;
    const int nr = static_cast<int>(std::floor(r2_max / step + 1e-9));
    for (int i = 0; i <= nr; ++i) g.r2.push_back(std::round(i * step * 1e12) / 1e12);
    const int np = static_cast<int>(std::floor(rho_max / step + 1e-9));
    for (int i = -np; i <= np; ++i) g.rho.push_back(std::round(i * step * 1e12) / 1e12);
    return g;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
    std::ostringstream s;
    s.precision(10);
    s << "modifier,r2_minus_j,rho_minus_j,bias_est,mrems,mrems_alpha,informative\n";
    for (const auto& r : rows)
        s << r.modifier << ',' << r.r2_minus_j << ',' << r.rho_minus_j << ',' << r.bias_est << ',' << r.mrems
          << ',' << r.mrems_alpha << ',' << (r.informative ? 1 : 0) << '\n';
    return s.str();
}

json benchmark_json(const std::vector<BenchmarkRow>& rows) {
    json a = json::array();
    for (const auto& r : rows)
        a.push_back({{"modifier", r.modifier},
                     {"r2_minus_j", r.r2_minus_j},
                     {"rho_minus_j", r.rho_minus_j},
                     {"bias_est", r.bias_est},
                     {"mrems", std::isfinite(r.mrems) ? json(r.mrems) : json(r.mrems > 0 ? "inf" : "-inf")},
                     {"mrems_alpha",
                      std::isfinite(r.mrems_alpha) ? json(r.mrems_alpha) : json(r.mrems_alpha > 0 ? "inf" : "-inf")},
                     {"informative", r.informative}});
    return a;
}

struct SensitivityRun {
    Analysis a;
    ContourGrid grid;
    ThresholdResult threshold;
};

SensitivityRun run_sensitivity(const PooledDataset& data, const Common& c, const Methods& m, const GridAxes& axes,
                               Status& st) {
    SensitivityRun r;
    r.a = analyze(data, c, m, st);
    std::vector<std::vector<PercentileCI>> ci;
    if (c.boot > 0) ci = adjusted_ci_grid(r.a.boot, r.a.sigma2, axes, c.alpha, c.threads);
    r.grid = build_contour(r.a.estimate.tau_hat, r.a.sigma2, r.a.var_w, axes, std::move(ci));
    if (c.boot > 0) {
        r.threshold = minimal_bias_threshold(r.grid, r.a.boot.ci);
        if (r.threshold.flagged) st.warnings.push_back("threshold: " + r.threshold.status);
    } else {
        r.threshold.flagged = true;
        r.threshold.status = "no bootstrap";
    }
    return r;
}

void write_contour(const Common& c, const ContourGrid& g) {
    std::ostringstream csv, svg;
    write_contour_csv(csv, g);
    write_contour_svg(svg, g);
    write_file(c, "contour.csv", csv.str());
    write_file(c, "contour.svg", svg.str());
}

int cmd_sensitivity(Common c, const Methods& m, std::vector<double> qs, double r2_max, double rho_max,
                    double step) {
    resolve_seed(c);
    const PooledDataset data = load_data(c);
    const GridAxes axes = make_axes(r2_max, rho_max, step);
    Status st;
    const auto r = run_sensitivity(data, c, m, axes, st);
    const double tau = r.a.estimate.tau_hat;
    const auto summary =
        summarize_sensitivity(tau, r.a.cov_w_tau, r.a.sigma2, r.a.var_w, qs, r.threshold.threshold);
    std::vector<BenchmarkRow> bench;
    if (!data.modifier_names().empty())
        bench = benchmark_modifiers(data, r.a.weights, tau, r.a.sigma2, r.threshold.threshold, weight_options(m));

    json rv = json::object();
    for (const auto& [q, v] : summary.rv) {
        char key[32];
        std::snprintf(key, sizeof key, "%g", q);
        rv[key] = v;
    }
    json kill = json::array();
    for (const auto& p : r.grid.kill_curve) kill.push_back({p.r2, p.rho});
    json report = {{"estimate", estimate_json(data, r.a)},
                   {"sigma2_tau_max", summary.sigma2_tau_max},
                   {"rho_bounds", {summary.rho_bounds.first, summary.rho_bounds.second}},
                   {"var_w", summary.var_w},
                   {"rv", rv},
                   {"rv_alpha", summary.rv_alpha},
                   {"minimal_bias_threshold",
                    {{"value", r.threshold.threshold}, {"flagged", r.threshold.flagged}, {"status", r.threshold.status}}},
                   {"kill_curve_points", r.grid.kill_curve.size()},
                   {"significance_border_points", r.grid.significance_border.size()},
                   {"benchmark", benchmark_json(bench)}};
    const json cfg = config_json("sensitivity", c, &m,
                                 {{"q", qs}, {"r2_max", r2_max}, {"rho_max", rho_max}, {"step", step}});
    write_json(c, "sensitivity.json", report, cfg, st);
    write_contour(c, r.grid);
    write_file(c, "benchmark.csv", benchmark_csv(bench));
    std::cout << "tau_hat " << tau << "  RV_1 " << (summary.rv.count(1.0) ? summary.rv.at(1.0) : 0.0)
              << "  threshold " << r.threshold.threshold << '\n';
    return st.exit_code();
}

int cmd_contour(Common c, const Methods& m, double r2_max, double rho_max, double step) {
    resolve_seed(c);
    const PooledDataset data = load_data(c);
    Status st;
    const auto r = run_sensitivity(data, c, m, make_axes(r2_max, rho_max, step), st);
    write_contour(c, r.grid);
    json report = {{"tau_hat", r.a.estimate.tau_hat},
                   {"sigma2_tau_max", r.a.sigma2},
                   {"var_w", r.a.var_w},
                   {"cells", r.grid.r2_axis.size() * r.grid.rho_axis.size()},
                   {"kill_curve_points", r.grid.kill_curve.size()},
                   {"significance_border_points", r.grid.significance_border.size()},
                   {"minimal_bias_threshold", r.threshold.threshold}};
    write_json(c, "contour.json", report, config_json("contour", c, &m, {{"r2_max", r2_max}, {"rho_max", rho_max},
                                                                          {"step", step}}),
               st);
    return st.exit_code();
}

int cmd_benchmark(Common c, const Methods& m, std::optional<double> threshold) {
    const PooledDataset data = load_data(c);
    Status st;
    double thr = 0.0;
    Analysis a;
    if (threshold) {
        a = analyze(data, c, m, st, false);
        thr = *threshold;
    } else {
        resolve_seed(c);
        const auto r = run_sensitivity(data, c, m, GridAxes::standard(), st);
        a = r.a;
        thr = r.threshold.threshold;
    }
    const auto rows = benchmark_modifiers(data, a.weights, a.estimate.tau_hat, a.sigma2, thr, weight_options(m));
    write_file(c, "benchmark.csv", benchmark_csv(rows));
    json extra = json::object();
    if (threshold) extra["threshold"] = *threshold;
    write_json(c, "benchmark.json",
               {{"tau_hat", a.estimate.tau_hat}, {"sigma2_tau_max", a.sigma2}, {"threshold", thr},
                {"rows", benchmark_json(rows)}},
               config_json("benchmark", c, &m, extra), st);
    std::cout << benchmark_csv(rows);
    return st.exit_code();
}

// --- wald ----------------------------------------------------------------------

json wald_json(const WaldResult& r, const WaldInput& in) {
    return {{"statistic", r.statistic},
            {"df", r.df},
            {"p_value", r.p_value},
            {"estimates", in.estimates},
            {"sds", in.sds},
            {"reference_alpha", {0.05, 0.1, 0.15}}};
}

int cmd_wald(Common c, const Methods& m, std::vector<double> estimates, std::vector<double> sds, int min_n,
             double max_smd) {
    Status st;
    WaldInput in;
    json extra = {{"min_n", min_n}};
    if (std::isfinite(max_smd)) extra["max_smd"] = max_smd;
    json screened = json::array();
    if (!estimates.empty() || !sds.empty()) {
        in = {estimates, sds};
        extra["estimates"] = estimates;
        extra["sds"] = sds;
    } else {
        resolve_seed(c);
        const PooledDataset data = load_data(c);
        const auto smd = summarize_smd(data);
        const auto opts = weight_options(m);
        for (int s : data.study_ids()) {
            const auto n = data.study_sizes().at(s);
            const double worst = max_abs_smd(smd, s);
            const bool eligible = static_cast<int>(n) > min_n && worst < max_smd;
            json entry = {{"study", s}, {"n", n}, {"included", eligible}};
            if (std::isfinite(worst)) entry["max_smd"] = worst;
            if (eligible) {
                const auto r = estimate_pate_single_study(data, s, opts);
                BootstrapPlan plan;
                plan.replicates = c.boot;
                plan.seed = KeyedRng(*c.seed, static_cast<std::uint64_t>(s), 5).engine()();
                plan.threads = c.threads;
                plan.resample_target = m.resample_target;
                plan.fail_on_unreliable = false;
                const auto b = bootstrap_estimate(data, plan, {opts, s}, c.alpha);
                if (!b.reliable) {
                    st.flagged = true;
                    st.warnings.push_back("study " + std::to_string(s) + ": unreliable bootstrap");
                }
                in.estimates.push_back(r.estimate.tau_hat);
                in.sds.push_back(b.sd);
            }
            screened.push_back(entry);
        }
    }
    const auto r = wald_test(in);
    json report = wald_json(r, in);
    if (!screened.empty()) report["studies"] = screened;
    write_json(c, "wald.json", report, config_json("wald", c, estimates.empty() ? &m : nullptr, extra), st);
    std::printf("statistic %.6f  df %d  p %.6f\n", r.statistic, r.df, r.p_value);
    return st.exit_code();
}

// --- simulate / power --------------------------------------------------------

SimConfig sim_config(const Common& c, int reps, bool include_x3, bool resample_target) {
    SimConfig cfg;
    cfg.resample_target = resample_target;
    cfg.seed = *c.seed;
    cfg.replications = reps;
    cfg.bootstrap = c.boot;
    cfg.threads = c.threads;
    cfg.include_x3 = include_x3;
    return cfg;
}

int cmd_simulate(Common c, int n, double k, int reps, std::vector<double> alphas, bool include_x3, bool resample_target,
                 const std::string& dump_data) {
    resolve_seed(c);
    SimConfig cfg = sim_config(c, reps, include_x3, resample_target);
    cfg.n = n;
    cfg.k = k;
    const SimIntercepts ic = solve_intercepts(cfg);
    const auto outcomes = run_design(cfg, ic);
    std::ostringstream rep;
    rep.precision(10);
    rep << "replicate,p_value,est1,est2,est3,sd1,sd2,sd3\n";
    int failures = 0;
    Status st;
    for (std::size_t r = 0; r < outcomes.size(); ++r) {
        const auto& o = outcomes[r];
        if (std::isnan(o.p_value)) {
            ++failures;
            st.warnings.push_back("replicate " + std::to_string(r) + ": " + o.failure);
            rep << r << ",,,,,,,\n";
            continue;
        }
        rep << r << ',' << o.p_value;
        for (double e : o.estimates) rep << ',' << e;
        for (double s : o.sds) rep << ',' << s;
        rep << '\n';
    }
    std::vector<PowerCell> cells;
    for (double a : alphas) {
        int rejected = 0;
        for (const auto& o : outcomes) rejected += (!std::isnan(o.p_value) && o.p_value < a) ? 1 : 0;
        const int used = reps - failures;
        cells.push_back({n, k, a, used > 0 ? static_cast<double>(rejected) / used : 0.0, reps, failures});
    }
    std::ostringstream csv;
    write_power_csv(csv, cells);
    write_file(c, "simulate.csv", csv.str());
    write_file(c, "replicates.csv", rep.str());
    if (!dump_data.empty()) {
        std::ostringstream d;
        write_csv(d, generate_replicate(cfg, ic, 0).dataset);
        write_file(c, dump_data, d.str());
    }
    write_json(c, "simulate.json",
               {{"exact_pate", exact_dgp_pate(cfg, ic)},
                {"intercepts", {{"beta0", ic.beta0}, {"xi0", ic.xi0}, {"zeta0", ic.zeta0}}}},
               config_json("simulate", c, nullptr,
                           {{"n", n}, {"k", k}, {"reps", reps}, {"alphas", alphas}, {"include_x3", include_x3},
                            {"resample_target", resample_target}}),
               st);
    std::cout << csv.str();
    return failures > 0 ? 2 : 0;
}

int cmd_power(Common c, std::vector<int> ns, std::vector<double> ks, std::vector<double> alphas, int reps,
              bool resample_target) {
    resolve_seed(c);
    const SimConfig cfg = sim_config(c, reps, false, resample_target);
    const auto cells = run_power_study(cfg, ns, ks, alphas);
    std::ostringstream csv;
    write_power_csv(csv, cells);
    write_file(c, "power.csv", csv.str());
    Status st;
    for (const auto& cell : cells)
        if (cell.failures > 0) st.flagged = true;
    write_json(c, "power.json", {{"cells", cells.size()}},
               config_json("power", c, nullptr, {{"n", ns}, {"k", ks}, {"alphas", alphas}, {"reps", reps},
                                               {"resample_target", resample_target}}), st);
    std::cout << csv.str();
    return st.exit_code();
}

// --- oracle --------------------------------------------------------------------

int cmd_oracle(Common c, const std::string& suite, std::vector<std::string> files) {
    if (files.empty()) {
        if (suite != "default") throw Error(ErrorCode::Schema, "cli", "unknown suite '" + suite + "'");
        const fs::path dir = fs::path(GENSENS_DATA_DIR) / "populations";
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".json") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
    }
    json results = json::array();
    bool all_pass = true;
    for (const auto& f : files) {
        const auto pop = load_population(f);
        json entry;
        bool pass = true;
        try {
            const auto r = verify_bias_decomposition(pop);
            entry = to_json(r);
            // Identification must hold exactly where the generalizability condition does.
            const bool ident = std::abs(r.identification_gap) <= 1e-12;
            if (r.a5_holds && !ident) pass = false;
            if (!r.a5_holds && std::abs(r.identification_gap - r.exact_bias) > 1e-12) pass = false;
            entry["identification_holds"] = ident;
        } catch (const Error& e) {
            entry = {{"population", pop.name()}, {"error", e.what()}};
            pass = false;
        }
        entry["file"] = fs::path(f).filename().string();
        entry["pass"] = pass;
        all_pass = all_pass && pass;
        results.push_back(entry);
        std::cout << (pass ? "PASS " : "FAIL ") << pop.name() << '\n';
    }
    Status st;
    write_json(c, "oracle.json", {{"populations", results}, {"all_pass", all_pass}},
               config_json("oracle", c, nullptr, {{"suite", suite}, {"files", files}}), st);
    return all_pass ? 0 : 1;
}

void add_common(CLI::App* app, Common& c, bool data = true) {
    if (data) {
        app->add_option("--data", c.data, "Pooled CSV (study 0 is the target sample)");
        app->add_option("--schema", c.schema, "Schema JSON with column roles");
    }
    app->add_option("--seed", c.seed, "Random seed (drawn and printed when absent)");
    app->add_option("--boot", c.boot, "Bootstrap replicates")->check(CLI::NonNegativeNumber);
    app->add_option("--alpha", c.alpha, "Significance level")->check(CLI::Range(0.0, 1.0));
    app->add_option("--threads", c.threads, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--out", c.out, "Output directory");
}

void add_methods(CLI::App* app, Methods& m) {
    app->add_option("--generalization", m.generalization, "eb | logistic");
    app->add_option("--deconfounding", m.deconfounding, "logistic | constant");
    app->add_flag("--ridge-fallback", m.ridge_fallback, "Refit separated propensity models with a small ridge");
    app->add_flag("--resample-target", m.resample_target, "Resample the target sample in the bootstrap");
    app->add_flag("--randomized", m.randomized, "Studies are randomized: pooled within-study variances");
    app->add_option("--sigma-mode", m.sigma_mode, "conservative | sharp");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalization estimates with sensitivity analysis for omitted effect modifiers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", GENSENS_VERSION);

    Common common;
    Methods methods;

    auto* est = app.add_subcommand("estimate", "Weighted target-population estimate with bootstrap CI");
    int single_study = 0;
    bool dump_weights = false, dump_replicates = false;
    add_common(est, common);
    add_methods(est, methods);
    est->add_option("--single-study", single_study, "Generalize from this study alone");
    est->add_flag("--dump-weights", dump_weights, "Write weights.csv");
    est->add_flag("--dump-replicates", dump_replicates, "Write replicates.csv");

    std::vector<double> qs{1.0};
    double r2_max = 0.99, rho_max = 0.99, step = 0.01;
    auto* sens = app.add_subcommand("sensitivity", "Full sensitivity workflow");
    add_common(sens, common);
    add_methods(sens, methods);
    sens->add_option("--q", qs, "Robustness value fractions");
    sens->add_option("--r2-max", r2_max, "Largest R^2 on the grid");
    sens->add_option("--rho-max", rho_max, "Largest |rho| on the grid");
    sens->add_option("--step", step, "Grid step");

    auto* contour = app.add_subcommand("contour", "Bias contour grid (CSV and SVG)");
    add_common(contour, common);
    add_methods(contour, methods);
    contour->add_option("--r2-max", r2_max, "Largest R^2 on the grid");
    contour->add_option("--rho-max", rho_max, "Largest |rho| on the grid");
    contour->add_option("--step", step, "Grid step");

    std::optional<double> threshold;
    auto* bench = app.add_subcommand("benchmark", "Leave-one-modifier-out benchmarking (MREMS)");
    add_common(bench, common);
    add_methods(bench, methods);
    bench->add_option("--threshold", threshold, "Minimal Bias Threshold (computed by bootstrap when absent)");

    std::vector<double> estimates, sds;
    int min_n = 0;
    double max_smd = std::numeric_limits<double>::infinity();
    auto* wald = app.add_subcommand("wald", "Test equality of per-study generalized estimates");
    add_common(wald, common);
    add_methods(wald, methods);
    wald->add_option("--estimates", estimates, "Per-study estimates")->delimiter(',');
    wald->add_option("--sds", sds, "Per-study standard deviations")->delimiter(',');
    wald->add_option("--min-n", min_n, "Only studies with more units than this");
    wald->add_option("--max-smd", max_smd, "Only studies whose max |SMD| is below this");

    int n = 1000, reps = 1000;
    double k = 1.0;
    std::vector<double> alphas{0.05, 0.1, 0.15};
    bool include_x3 = false, sim_resample_target = false;
    std::string dump_data;
    auto* sim = app.add_subcommand("simulate", "One simulation design; per-replicate Wald p-values");
    add_common(sim, common, false);
    sim->add_option("--n", n, "Expected size of the target and of each trial");
    sim->add_option("--k", k, "Strength of the omitted modifier");
    sim->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
    sim->add_option("--alphas", alphas, "Test levels")->delimiter(',');
    sim->add_flag("--include-x3", include_x3, "Let the weights see the third modifier");
    sim->add_flag("--resample-target", sim_resample_target, "Bootstrap also redraws the target sample");
    sim->add_option("--dump-data", dump_data, "Write replicate 0 as CSV under this name");

    std::vector<int> ns{500, 1000, 2000};
    std::vector<double> ks{1.0, 1.5};
    auto* power = app.add_subcommand("power", "Rejection-rate table over n x k x alpha");
    add_common(power, common, false);
    power->add_option("--n", ns, "Sample sizes")->delimiter(',');
    power->add_option("--k", ks, "Modifier strengths")->delimiter(',');
    power->add_option("--alphas", alphas, "Test levels")->delimiter(',');
    power->add_option("--reps", reps, "Replications")->check(CLI::PositiveNumber);
    power->add_flag("--resample-target", sim_resample_target, "Bootstrap also redraws the target sample");

    std::string suite = "default";
    std::vector<std::string> population_files;
    auto* oracle = app.add_subcommand("oracle", "Exact checks over discrete populations");
    add_common(oracle, common, false);
    oracle->add_option("--suite", suite, "Bundled suite name");
    oracle->add_option("--population", population_files, "Population JSON files");

    CLI11_PARSE(app, argc, argv);
    // A single --alpha stands in for --alphas in the simulation commands.
    for (auto* sub : {sim, power})
        if (*sub && sub->count("--alpha") > 0 && sub->count("--alphas") == 0) alphas = {common.alpha};
    try {
        if (*est) return cmd_estimate(common, methods, single_study, dump_weights, dump_replicates);
        if (*sens) return cmd_sensitivity(common, methods, qs, r2_max, rho_max, step);
        if (*contour) return cmd_contour(common, methods, r2_max, rho_max, step);
        if (*bench) return cmd_benchmark(common, methods, threshold);
        if (*wald) return cmd_wald(common, methods, estimates, sds, min_n, max_smd);
        if (*sim) return cmd_simulate(common, n, k, reps, alphas, include_x3, sim_resample_target, dump_data);
        if (*power) return cmd_power(common, ns, ks, alphas, reps, sim_resample_target);
        if (*oracle) return cmd_oracle(common, suite, population_files);
    } catch (const Error& e) {
        std::cerr << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
