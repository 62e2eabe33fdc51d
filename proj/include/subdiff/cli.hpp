#pragma once

// Batch runner: strict JSON configs, one pipeline per subcommand, CSV/JSON
// artifacts stamped with a config hash, and a run manifest.
//
// Exit codes: 0 success, 2 config error, 3 numerical failure, 4 property-check
// failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subdiff/casestudy.hpp"
#include "subdiff/constrained.hpp"
#include "subdiff/control.hpp"
#include "subdiff/model.hpp"
#include "subdiff/solver.hpp"
#include "subdiff/subordination.hpp"

namespace subdiff::cli {

using nlohmann::json;

inline constexpr const char* kVersion = "subdiff 0.1.0";

enum Exit : int { ok = 0, config_error = 2, numerical_failure = 3, property_failure = 4 };

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names = {"simulate-paths", "check-assumptions", "solve-fbsde",
                                                   "solve-adjoint",  "check-smp",         "spike-experiment",
                                                   "constrained-demo", "cash-demo"};
    return names;
}

struct Affine {
    double a = 0.0, b = 0.0;
};

struct RunConfig {
    std::string model_name;
    std::optional<LinearModelSpec> linear;  ///< set for the cash family
    LevySpec levy;
    double x0 = 1.0, r0 = 0.0;
    double T = 1.0;
    std::size_t N = 100;

    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    std::size_t picard_max = 50;
    double tol = 1e-4;
    int basis_degree = 2;
    unsigned threads = 1;
    std::size_t refinement = 10;
    bool classical = false;  ///< plain Brownian scenarios (L_t = t)

    std::string control = "optimal";  ///< "optimal", "l" or a number

    double spike_tau = 0.4;
    std::vector<double> spike_eps{0.02, 0.04, 0.08, 0.16};
    double spike_donor_shift = 1.0;
    double spike_censor_floor = 1e-20;
    double spike_tol = 1e-10;

    bool g1_consistent = true;  ///< G1 = x - E[x(T)] under the base control
    Affine g1, g0;
    double rho = 0.01;
    double constrained_eps = 1e-3;
    double constrained_tau = 0.4;
    std::vector<double> family_shifts{0.1, -0.1};

    double probe_lo = -2.0, probe_hi = 2.0;
    std::size_t probe_count = 41;
    double smp_tol = 1e-6;

    std::optional<double> assumption_C;
    std::size_t assumption_samples = 1000;
    double box_lo = -1.0, box_hi = 1.0;

    std::vector<std::string> comparisons{"u*+1", "l", "0"};

    std::string out_dir = "out";
    std::size_t dump_paths = 100;

    json normalized;  ///< effective configuration with defaults filled

    [[nodiscard]] SolverOptions solver() const {
        SolverOptions o;
        o.picard_max = picard_max;
        o.tol = tol;
        o.basis_degree = basis_degree;
        o.threads = threads;
        return o;
    }
    [[nodiscard]] GridPtr grid() const { return make_grid(T, N); }
    [[nodiscard]] CoefficientSet model() const { return linear ? cash_model(*linear) : catalog_model(model_name); }
    [[nodiscard]] std::vector<double> probes() const { return probe_grid(probe_lo, probe_hi, probe_count); }
};

// ---------------------------------------------------------------------------
// Schema helpers. Every failure names the offending field path.

namespace detail {

[[noreturn]] inline void bad(const std::string& path, const std::string& why) {
    fail(ErrorKind::config, path + ": " + why);
}

inline void only_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) bad(path, "must be an object");
    for (const auto& [k, v] : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || k == a;
        if (!known) bad(path.empty() ? k : path + "." + k, "unknown key");
    }
}

inline std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

inline double number(const json& j, const std::string& path, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) bad(join(path, key), "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) bad(join(path, key), "must be finite");
    return d;
}

inline double positive(const json& j, const std::string& path, const char* key, double fallback) {
    const double d = number(j, path, key, fallback);
    if (!(d > 0.0)) bad(join(path, key), "must be > 0");
    return d;
}

inline std::uint64_t count(const json& j, const std::string& path, const char* key, std::uint64_t fallback,
                           std::uint64_t min = 1) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        bad(join(path, key), "must be a non-negative integer");
    const auto n = v.get<std::uint64_t>();
    if (n < min) bad(join(path, key), "must be >= " + std::to_string(min));
    return n;
}

inline LinearModelSpec linear_spec(const json& j, const std::string& path) {
    only_keys(j, path, {"m1", "m2", "n1", "n2", "c1", "c2", "a_slope", "l", "beta", "sigma_x"});
    LinearModelSpec s;
    const char* names[] = {"m1", "m2", "n1", "n2", "c1", "c2", "a_slope"};
    double* fields[] = {&s.m1, &s.m2, &s.n1, &s.n2, &s.c1, &s.c2, &s.a_slope};
    for (int i = 0; i < 7; ++i) {
        *fields[i] = number(j, path, names[i], *fields[i]);
        if (*fields[i] < 0.0) bad(join(path, names[i]), "must be >= 0");
    }
    s.l_const = number(j, path, "l", s.l_const);
    s.beta = number(j, path, "beta", s.beta);
    s.sigma_x = number(j, path, "sigma_x", s.sigma_x);
    return s;
}

inline LevySpec levy_spec(const json& j) {
    only_keys(j, "levy", {"family", "kappa", "alpha", "lambda", "rate", "jump_scale"});
    if (!j.contains("family") || !j.at("family").is_string()) bad("levy.family", "required string");
    if (!j.contains("kappa")) bad("levy.kappa", "required (kappa > 0)");
    LevySpec s;
    try {
        s.family = parse_family(j.at("family").get<std::string>());
    } catch (const Error& e) {
        bad("levy.family", e.what());
    }
    s.kappa = number(j, "levy", "kappa", 1.0);
    if (!(s.kappa > 0.0)) bad("levy.kappa", "kappa must be > 0 (the clock bound 0 <= dL <= dt/kappa needs it)");
    s.alpha = number(j, "levy", "alpha", s.alpha);
    s.lambda = number(j, "levy", "lambda", s.lambda);
    s.rate = number(j, "levy", "rate", s.rate);
    s.jump_scale = number(j, "levy", "jump_scale", s.jump_scale);
    try {
        s.validate();
    } catch (const Error& e) {
        bad("levy", e.what());
    }
    return s;
}

inline Affine affine(const json& j, const std::string& path) {
    only_keys(j, path, {"a", "b"});
    return {number(j, path, "a", 0.0), number(j, path, "b", 0.0)};
}

inline std::vector<double> numbers(const json& j, const std::string& path) {
    if (!j.is_array()) bad(path, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number()) bad(path, "must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace detail

/// Validates a parsed config against the schema and fills defaults. The
/// returned `normalized` echo is what the config hash is computed from.
inline RunConfig validate_config(const json& raw) {
    using namespace detail;
    if (raw.is_null() || (raw.is_object() && raw.empty()))
        fail(ErrorKind::config, "empty config; required keys: model, levy");
    only_keys(raw, "", {"model", "levy", "x0", "r0", "grid", "monte_carlo", "control", "spike", "constraints",
                        "probes", "assumptions", "comparisons", "output"});
    std::vector<std::string> missing;
    for (const char* k : {"model", "levy"})
        if (!raw.contains(k)) missing.emplace_back(k);
    if (!missing.empty()) {
        std::string m = "missing required keys:";
        for (const auto& k : missing) m += " " + k;
        fail(ErrorKind::config, m);
    }
    RunConfig c;

    const json& model = raw.at("model");
    if (model.is_string()) {
        c.model_name = model.get<std::string>();
        bool known = false;
        for (const auto& n : catalog_names()) known = known || n == c.model_name;
        if (!known) bad("model", "unknown catalog model '" + c.model_name + "'");
        if (c.model_name == "cash-management") c.linear = LinearModelSpec{};
        if (c.model_name == "tanh-cash") {
            c.linear = LinearModelSpec{};
            c.linear->beta = 0.5;
        }
        if (c.model_name == "noisy-cash") {
            c.linear = LinearModelSpec{};
            c.linear->sigma_x = 0.2;
        }
    } else if (model.is_object()) {
        only_keys(model, "model", {"linear"});
        if (!model.contains("linear")) bad("model.linear", "required for inline models");
        c.linear = linear_spec(model.at("linear"), "model.linear");
        c.model_name = "linear";
    } else {
        bad("model", "must be a catalog name or {\"linear\": {...}}");
    }
    c.levy = levy_spec(raw.at("levy"));
    c.x0 = number(raw, "", "x0", c.x0);
    c.r0 = number(raw, "", "r0", c.r0);
    if (c.r0 < 0.0) bad("r0", "must be >= 0");

    if (raw.contains("grid")) {
        const json& g = raw.at("grid");
        only_keys(g, "grid", {"T", "N"});
        c.T = positive(g, "grid", "T", c.T);
        c.N = count(g, "grid", "N", c.N);
    }
    if (raw.contains("monte_carlo")) {
        const json& m = raw.at("monte_carlo");
        only_keys(m, "monte_carlo", {"paths", "seed", "picard_max", "tol", "basis_degree", "threads", "refinement",
                                           "classical"});
        c.paths = count(m, "monte_carlo", "paths", c.paths);
        c.seed = count(m, "monte_carlo", "seed", c.seed, 0);
        c.picard_max = count(m, "monte_carlo", "picard_max", c.picard_max);
        c.tol = positive(m, "monte_carlo", "tol", c.tol);
        c.basis_degree = static_cast<int>(count(m, "monte_carlo", "basis_degree", 2));
        if (c.basis_degree > 6) bad("monte_carlo.basis_degree", "must be <= 6");
        c.threads = static_cast<unsigned>(count(m, "monte_carlo", "threads", c.threads));
        c.refinement = count(m, "monte_carlo", "refinement", c.refinement);
        if (m.contains("classical")) {
            if (!m.at("classical").is_boolean()) bad("monte_carlo.classical", "must be a boolean");
            c.classical = m.at("classical").get<bool>();
        }
    }
    if (!c.linear) c.control = "0";
    if (raw.contains("control")) {
        const json& v = raw.at("control");
        if (v.is_number()) {
            c.control = io::fmt(v.get<double>());
        } else if (v.is_string() && (v == "optimal" || v == "l")) {
            c.control = v.get<std::string>();
            if (!c.linear) bad("control", "'" + c.control + "' needs a cash-family model");
        } else {
            bad("control", "must be \"optimal\", \"l\" or a number");
        }
    }
    if (raw.contains("spike")) {
        const json& s = raw.at("spike");
        only_keys(s, "spike", {"tau", "eps", "donor_shift", "censor_floor", "tol"});
        c.spike_tau = number(s, "spike", "tau", c.spike_tau);
        if (s.contains("eps")) c.spike_eps = numbers(s.at("eps"), "spike.eps");
        c.spike_donor_shift = number(s, "spike", "donor_shift", c.spike_donor_shift);
        c.spike_censor_floor = number(s, "spike", "censor_floor", c.spike_censor_floor);
        c.spike_tol = positive(s, "spike", "tol", c.spike_tol);
    }
    if (raw.contains("constraints")) {
        const json& s = raw.at("constraints");
        only_keys(s, "constraints", {"G1", "G0", "rho", "eps", "tau", "family_shifts"});
        if (s.contains("G1")) {
            if (s.at("G1") == "consistent") {
                c.g1_consistent = true;
            } else {
                c.g1_consistent = false;
                c.g1 = affine(s.at("G1"), "constraints.G1");
            }
        }
        if (s.contains("G0")) c.g0 = affine(s.at("G0"), "constraints.G0");
        c.rho = positive(s, "constraints", "rho", c.rho);
        c.constrained_eps = positive(s, "constraints", "eps", c.constrained_eps);
        c.constrained_tau = number(s, "constraints", "tau", c.constrained_tau);
        if (s.contains("family_shifts")) c.family_shifts = numbers(s.at("family_shifts"), "constraints.family_shifts");
    }
    if (raw.contains("probes")) {
        const json& s = raw.at("probes");
        only_keys(s, "probes", {"lo", "hi", "count", "tol"});
        c.probe_lo = number(s, "probes", "lo", c.probe_lo);
        c.probe_hi = number(s, "probes", "hi", c.probe_hi);
        c.probe_count = count(s, "probes", "count", c.probe_count, 2);
        c.smp_tol = positive(s, "probes", "tol", c.smp_tol);
        if (!(c.probe_lo < c.probe_hi)) bad("probes", "lo must be < hi");
    }
    if (raw.contains("assumptions")) {
        const json& s = raw.at("assumptions");
        only_keys(s, "assumptions", {"C", "samples", "lo", "hi"});
        if (s.contains("C")) c.assumption_C = positive(s, "assumptions", "C", 1.0);
        c.assumption_samples = count(s, "assumptions", "samples", c.assumption_samples, 1000);
        c.box_lo = number(s, "assumptions", "lo", c.box_lo);
        c.box_hi = number(s, "assumptions", "hi", c.box_hi);
        if (!(c.box_lo < c.box_hi)) bad("assumptions", "lo must be < hi");
    }
    if (raw.contains("comparisons")) {
        const json& s = raw.at("comparisons");
        if (!s.is_array()) bad("comparisons", "must be an array of strings");
        c.comparisons.clear();
        for (const auto& v : s) {
            if (!v.is_string()) bad("comparisons", "must be an array of strings");
            c.comparisons.push_back(v.get<std::string>());
        }
    }
    if (raw.contains("output")) {
        const json& s = raw.at("output");
        only_keys(s, "output", {"dir", "dump_paths"});
        if (s.contains("dir")) {
            if (!s.at("dir").is_string()) bad("output.dir", "must be a string");
            c.out_dir = s.at("dir").get<std::string>();
        }
        c.dump_paths = count(s, "output", "dump_paths", c.dump_paths, 0);
    }
    try {
        if (c.linear) c.linear->validate();
    } catch (const Error& e) {
        bad("model.linear", e.what());
    }

    json n;
    if (model.is_string()) n["model"] = c.model_name;
    else n["model"] = {{"linear", *c.linear}};
    n["levy"] = c.levy;
    n["x0"] = c.x0;
    n["r0"] = c.r0;
    n["grid"] = {{"T", c.T}, {"N", c.N}};
    n["monte_carlo"] = {{"paths", c.paths},           {"seed", c.seed},       {"picard_max", c.picard_max},
                        {"tol", c.tol},               {"basis_degree", c.basis_degree},
                        {"threads", c.threads},       {"refinement", c.refinement},
                        {"classical", c.classical}};
    if (c.control == "optimal" || c.control == "l") n["control"] = c.control;
    else n["control"] = std::stod(c.control);
    n["spike"] = {{"tau", c.spike_tau},
                  {"eps", c.spike_eps},
                  {"donor_shift", c.spike_donor_shift},
                  {"censor_floor", c.spike_censor_floor},
                  {"tol", c.spike_tol}};
    json cons{{"G0", {{"a", c.g0.a}, {"b", c.g0.b}}},
              {"rho", c.rho},
              {"eps", c.constrained_eps},
              {"tau", c.constrained_tau},
              {"family_shifts", c.family_shifts}};
    if (c.g1_consistent) cons["G1"] = "consistent";
    else cons["G1"] = {{"a", c.g1.a}, {"b", c.g1.b}};
    n["constraints"] = cons;
    n["probes"] = {{"lo", c.probe_lo}, {"hi", c.probe_hi}, {"count", c.probe_count}, {"tol", c.smp_tol}};
    json as{{"samples", c.assumption_samples}, {"lo", c.box_lo}, {"hi", c.box_hi}};
    if (c.assumption_C) as["C"] = *c.assumption_C;
    n["assumptions"] = as;
    n["comparisons"] = c.comparisons;
    n["output"] = {{"dir", c.out_dir}, {"dump_paths", c.dump_paths}};
    c.normalized = n;
    return c;
}

/// FNV-1a of the normalized config without the fields that must not change
/// results (thread count, output directory).
inline std::string config_hash(const RunConfig& c) {
    json n = c.normalized;
    n["monte_carlo"].erase("threads");
    n["output"].erase("dir");
    return io::fnv1a_hex(n.dump());
}

// ---------------------------------------------------------------------------
// Pipelines

namespace detail {

/// Base control named by the config; `optimal` is u* = l - c1 q + c2 p on the oracle
/// adjoint of the model's linear part.
inline ControlProcess base_control(const RunConfig& c, const GridPtr& grid) {
    if (c.control == "optimal" || c.control == "l") {
        LinearModelSpec lin = *c.linear;
        lin.beta = 0.0;
        lin.sigma_x = 0.0;
        if (c.control == "l") return ControlProcess::deterministic([lin](double t) { return lin.target(t); });
        return optimal_cash_control(cash_adjoint_oracle(lin, grid), lin);
    }
    return ControlProcess::constant(std::stod(c.control));
}

inline Ensemble ensemble(const RunConfig& c) {
    if (c.classical) return brownian_ensemble(c.grid(), c.seed, c.paths, c.threads);
    return simulate_ensemble(c.levy, c.grid(), c.r0, c.seed, c.paths, c.refinement, c.threads);
}

class Artifacts {
public:
    Artifacts(std::filesystem::path dir, std::string hash) : dir_(std::move(dir)), hash_(std::move(hash)) {
        std::filesystem::create_directories(dir_);
    }
    std::ofstream open(const std::string& name) {
        std::ofstream os(dir_ / name, std::ios::binary);
        if (!os) fail(ErrorKind::config, "output.dir: cannot write " + (dir_ / name).string());
        names_.push_back(name);
        return os;
    }
    void write_json(const std::string& name, json j) {
        j["config_hash"] = hash_;
        open(name) << j.dump(2) << '\n';
    }
    [[nodiscard]] const std::string& hash() const { return hash_; }
    [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::string hash_;
    std::vector<std::string> names_;
};

inline std::string short_number(double v) {
    std::ostringstream o;
    o << v;
    return o.str();
}

inline json to_json(const Estimate& e) { return {{"mean", e.mean}, {"se", e.se}, {"n", e.n}}; }

inline json to_json(const InequalityVerdict& v) {
    json j{{"pass", v.pass}, {"best_constant", v.best_constant}};
    if (v.witness) {
        const Witness& w = *v.witness;
        j["witness"] = {{"t", w.t},   {"v", w.v},   {"x1", w.x1}, {"x2", w.x2},   {"y1", w.y1},
                        {"y2", w.y2}, {"z1", w.z1}, {"z2", w.z2}, {"lhs", w.lhs}, {"bound", w.bound}};
        j["witness_difference"] = {w.x1 - w.x2, w.y1 - w.y2, w.z1 - w.z2};
    }
    return j;
}

inline void write_means_csv(std::ostream& os, const TimeGrid& g, const std::string& hash,
                            const std::vector<std::pair<std::string, const std::vector<double>*>>& cols,
                            const std::string& note = {}) {
    os << "# config_hash=" << hash << '\n';
    if (!note.empty()) os << "# " << note << '\n';
    os << 't';
    for (const auto& c : cols) os << ',' << c.first;
    os << '\n';
    for (std::size_t i = 0; i < g.size(); ++i) {
        os << io::fmt(g[i]);
        for (const auto& c : cols) os << ',' << io::fmt((*c.second)[i]);
        os << '\n';
    }
}

inline std::vector<double> node_means(const FbsdeSolution& s, const std::vector<double>& a) {
    const std::size_t K = s.grid->size();
    std::vector<double> m(K, 0.0);
    for (std::size_t p = 0; p < s.paths; ++p)
        for (std::size_t i = 0; i < K; ++i) m[i] += a[p * K + i];
    for (double& v : m) v /= static_cast<double>(s.paths);
    return m;
}

}  // namespace detail

struct Outcome {
    int code = Exit::ok;
    json summary;
};

inline Outcome simulate_paths(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    auto csv = out.open("paths.csv");
    write_paths_csv(csv, ens, c.dump_paths, out.hash());
    std::size_t violations = 0, negative_R = 0;
    std::vector<double> qv(ens.size());
    for (std::size_t p = 0; p < ens.size(); ++p) {
        const auto& b = ens.paths[p];
        double s = 0.0;
        for (std::size_t i = 0; i < ens.grid->steps(); ++i) {
            if (b.dL[i] < 0.0 || b.dL[i] > ens.grid->dt(i) / c.levy.kappa) ++violations;
            s += b.dBL[i] * b.dBL[i];
        }
        for (double r : b.R) negative_R += r < 0.0;
        qv[p] = s - b.L.back();
    }
    const ActivityRate rate = empirical_activity_rate(ens, ens.grid->steps() / 2);
    json j{{"paths", ens.size()},
           {"clock_bound_violations", violations},
           {"negative_overshoot", negative_R},
           {"quadratic_variation_gap", detail::to_json(estimate(qv))}};
    auto side = [](const std::optional<ActivitySide>& s) {
        return s ? json{{"count", s->count}, {"mean", s->mean}, {"radius", s->radius}} : json(nullptr);
    };
    j["activity_mid_node"] = {{"active", side(rate.active)}, {"inactive", side(rate.inactive)}};
    out.write_json("paths_summary.json", j);
    return {violations == 0 && negative_R == 0 ? Exit::ok : Exit::property_failure, j};
}

inline Outcome check_assumptions(const RunConfig& c, detail::Artifacts& out) {
    const CoefficientSet cs = c.model();
    Box box{0.0, c.T, c.box_lo, c.box_hi, c.box_lo, c.box_hi, c.box_lo, c.box_hi, c.box_lo, c.box_hi};
    double C = 1e-3;
    if (c.assumption_C) C = *c.assumption_C;
    else if (c.linear && std::min(c.linear->m2, c.linear->n1) > 0.0) C = std::min(c.linear->m2, c.linear->n1);
    json lip = json::object();
    for (const auto& e : check_lipschitz(cs, box, c.assumption_samples, c.seed)) lip[e.role] = e.constant;
    const MonotonicityReport mono = check_monotonicity(cs, C, box, c.assumption_samples, c.seed);
    const auto mismatches = check_gradients(cs, box, 200, 1e-5, c.seed);
    json j{{"model", cs.name},
           {"lipschitz", lip},
           {"monotonicity",
            {{"C", C}, {"drift_pair", detail::to_json(mono.drift_pair)}, {"diffusion", detail::to_json(mono.diffusion)}}},
           {"gradient_mismatches", mismatches.size()}};
    out.write_json("assumptions.json", j);
    return {Exit::ok, j};  // violations are findings, not failures
}

inline Outcome solve_fbsde_cmd(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    const FbsdeProblem prob{c.model(), detail::base_control(c, ens.grid), c.x0};
    const FbsdeSolution s = solve_fbsde(prob, ens, c.solver());
    auto csv = out.open("solution.csv");
    write_solution_csv(csv, s, c.dump_paths, out.hash());
    const ResidualReport r = residual_check(s, prob, ens);
    json j = solution_summary(s);
    j["residual"] = {{"forward_max", r.forward_max},
                     {"forward_rms", r.forward_rms},
                     {"backward_max", r.backward_max},
                     {"backward_rms", r.backward_rms}};
    j["cost"] = detail::to_json(cost(s, prob.coeffs));
    j["y0"] = detail::to_json(s.y_path_at(0));
    out.write_json("solution_summary.json", j);
    return {s.converged ? Exit::ok : Exit::numerical_failure, j};
}

inline Outcome solve_adjoint_cmd(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    const CoefficientSet cs = c.model();
    const FbsdeProblem prob{cs, detail::base_control(c, ens.grid), c.x0};
    const FbsdeSolution s = solve_fbsde(prob, ens, c.solver());
    const AdjointSolution a = solve_adjoint(cs, s, ens, c.solver());
    auto csv = out.open("adjoint.csv");
    write_solution_csv(csv, a, c.dump_paths, out.hash(), "p,q,k");
    json j{{"trajectory", solution_summary(s)}, {"adjoint", solution_summary(a)}};
    const std::vector<double> p = detail::node_means(a, a.x), q = detail::node_means(a, a.y);
    if (c.linear && c.linear->beta == 0.0 && c.linear->sigma_x == 0.0) {
        const BvpSolution o = cash_adjoint_oracle(*c.linear, ens.grid);
        double worst = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i)
            worst = std::max({worst, std::abs(p[i] - o.u1[i]), std::abs(q[i] - o.u2[i])});
        j["oracle_max_abs_deviation"] = worst;
        auto m = out.open("adjoint_means.csv");
        detail::write_means_csv(m, *ens.grid, out.hash(),
                                {{"p", &p}, {"q", &q}, {"p_oracle", &o.u1}, {"q_oracle", &o.u2}});
    } else {
        auto m = out.open("adjoint_means.csv");
        detail::write_means_csv(m, *ens.grid, out.hash(), {{"p", &p}, {"q", &q}});
    }
    out.write_json("adjoint_summary.json", j);
    return {s.converged && a.converged ? Exit::ok : Exit::numerical_failure, j};
}

inline Outcome check_smp_cmd(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    const CoefficientSet cs = c.model();
    const ControlProcess u = detail::base_control(c, ens.grid);
    const FbsdeSolution s = solve_fbsde({cs, u, c.x0}, ens, c.solver());
    const AdjointSolution a = solve_adjoint(cs, s, ens, c.solver());
    const SmpReport r = check_smp(cs, s, a, u, c.probes(), ens, c.smp_tol);
    json j = to_json(r);
    out.write_json("smp.json", j);
    return {r.pass() ? Exit::ok : Exit::property_failure, j};
}

inline Outcome spike_cmd(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    SpikeSetup setup;
    setup.problem = {c.model(), detail::base_control(c, ens.grid), c.x0};
    const double shift = c.spike_donor_shift;
    setup.donor = ControlProcess::mapped(setup.problem.control, [shift](double u) { return u + shift; },
                                         setup.problem.control.domain());
    setup.tau = c.spike_tau;
    setup.eps = c.spike_eps;
    setup.censor_floor = c.spike_censor_floor;
    SolverOptions opt = c.solver();
    opt.tol = c.spike_tol;
    opt.picard_max = std::max<std::size_t>(opt.picard_max, 200);
    SpikeReport r = estimate_orders(setup, ens, opt);
    r.donor = "u+" + io::fmt(shift);
    json j = to_json(r);
    out.write_json("spike.json", j);
    auto csv = out.open("slopes.csv");
    write_slope_csv(csv, r, out.hash());
    bool pass = true;
    for (const auto& q : r.quantities) pass = pass && q.pass();
    return {pass ? Exit::ok : Exit::property_failure, j};
}

/// Constrained pipeline on a cash-family model: family evaluation, Ekeland
/// selection, spike of u_rho, multipliers, weighted adjoint and its SMP check.
struct ConstrainedDemo {
    ConstraintSpec constraints;
    std::vector<ControlEvaluation> family;
    EkelandCertificate certificate;
    ControlEvaluation spiked;
    Multipliers multipliers;
    ConstrainedSmpReport smp;
    AdjointSolution adjoint;
};

inline ConstrainedDemo run_constrained_demo(const RunConfig& c, const Ensemble& ens) {
    if (!c.linear) fail(ErrorKind::config, "model: constrained-demo needs a cash-family model");
    const CoefficientSet cs = c.model();
    const SolverOptions opt = c.solver();
    const ControlProcess u = detail::base_control(c, ens.grid);
    const std::size_t K = ens.grid->size();
    ConstrainedDemo d;

    std::vector<ControlProcess> controls{u};
    for (double s : c.family_shifts)
        controls.push_back(ControlProcess::mapped(u, [s](double w) { return w + s; }, u.domain()));
    std::vector<FbsdeSolution> sols;
    for (const auto& v : controls) sols.push_back(solve_fbsde({cs, v, c.x0}, ens, opt));

    if (c.g1_consistent) {
        double xbar = 0.0;
        for (std::size_t p = 0; p < sols[0].paths; ++p) xbar += sols[0].x[p * K + K - 1];
        xbar /= static_cast<double>(sols[0].paths);
        d.constraints = ConstraintSpec::affine(1.0, -xbar, c.g0.a, c.g0.b);
    } else {
        d.constraints = ConstraintSpec::affine(c.g1.a, c.g1.b, c.g0.a, c.g0.b);
    }
    for (std::size_t k = 0; k < controls.size(); ++k)
        d.family.push_back(evaluate_control(k == 0 ? "u" : "u" + std::string(c.family_shifts[k - 1] >= 0 ? "+" : "") +
                                                               detail::short_number(c.family_shifts[k - 1]),
                                            sols[k], cs, d.constraints));
    d.certificate = ekeland_search(d.family, 0, c.rho, *ens.grid);
    const std::size_t sel = d.certificate.selected;
    const ControlProcess& u_rho = controls[sel];
    const ControlProcess donor = ControlProcess::mapped(u_rho, [](double w) { return w + 1.0; }, u_rho.domain());
    const ControlProcess spiked = spike_perturb(u_rho, donor, c.constrained_tau, c.constrained_eps, c.T);
    d.spiked = evaluate_control("u_rho^eps", solve_fbsde({cs, spiked, c.x0}, ens, opt), cs, d.constraints);
    d.multipliers = extract_multipliers(d.family[sel], d.spiked, d.family[0].J.mean, c.rho);

    const FbsdeProblem adj = build_constrained_adjoint(cs, sols[sel], d.constraints, d.multipliers.normalized);
    SolverOptions shared = opt;
    shared.features = std::make_shared<const std::vector<double>>(sols[sel].x);
    d.adjoint = solve_fbsde(adj, ens, shared);
    // Candidate: the pointwise minimizer of the weighted Hamiltonian on the
    // Monte Carlo adjoint, v = l + (c2 p - c1 q) / psi3.
    const double w = d.multipliers.normalized.psi3;
    const LinearModelSpec& s = *c.linear;
    const TimeGrid& g = *ens.grid;
    const std::size_t N = g.steps();
    ControlProcess candidate = u_rho;
    if (w > 0.0) {
        ControlProcess::Table t(ens.size(), std::vector<double>(N));
        for (std::size_t p = 0; p < ens.size(); ++p)
            for (std::size_t i = 0; i < N; ++i)
                t[p][i] = s.target(g[i]) + (s.c2 * d.adjoint.x[p * K + i] - s.c1 * d.adjoint.y[p * K + i]) / w;
        candidate = ControlProcess::tabulated(std::move(t));
    }
    d.smp = check_constrained_smp(cs, sols[sel], d.adjoint, candidate, c.probes(), ens, c.smp_tol, d.constraints,
                                  d.multipliers.normalized);
    return d;
}

inline json to_json(const MultiplierTriple& m) { return json{m.psi1, m.psi2, m.psi3}; }

inline Outcome constrained_cmd(const RunConfig& c, detail::Artifacts& out) {
    const Ensemble ens = detail::ensemble(c);
    const ConstrainedDemo d = run_constrained_demo(c, ens);
    json fam = json::array();
    for (const auto& e : d.family)
        fam.push_back({{"control", e.label}, {"J", e.J.mean}, {"J_se", e.J.se}, {"EG1", e.EG1}, {"EG0", e.EG0}});
    json j{{"family", fam},
           {"ekeland", to_json(d.certificate, d.family)},
           {"spiked", {{"J", d.spiked.J.mean}, {"EG1", d.spiked.EG1}, {"EG0", d.spiked.EG0}}},
           {"multipliers",
            {{"raw", to_json(d.multipliers.raw)},
             {"raw_norm", d.multipliers.raw_norm},
             {"normalized", to_json(d.multipliers.normalized)},
             {"normalized_norm", d.multipliers.normalized.norm()}}},
           {"smp", to_json(d.smp.smp)},
           {"constraint_residuals", {{"EG1", d.smp.EG1}, {"EG0", d.smp.EG0}}}};
    out.write_json("constrained.json", j);
    auto csv = out.open("constrained_adjoint.csv");
    write_solution_csv(csv, d.adjoint, c.dump_paths, out.hash(), "p,q,k");
    const bool pass = d.certificate.all() && d.smp.smp.pass();
    return {pass ? Exit::ok : Exit::property_failure, j};
}

inline Outcome cash_cmd(const RunConfig& c, detail::Artifacts& out) {
    if (!c.linear) fail(ErrorKind::config, "model: cash-demo needs a cash-family model");
    CashStudyConfig sc;
    sc.model = *c.linear;
    sc.x0 = c.x0;
    sc.levy = c.levy;
    sc.r0 = c.r0;
    sc.T = c.T;
    sc.N = c.N;
    sc.paths = c.paths;
    sc.seed = c.seed;
    sc.refinement = c.refinement;
    sc.classical = c.classical;
    sc.solver = c.solver();
    sc.comparisons = c.comparisons;
    const Ensemble ens = detail::ensemble(c);
    const CashDemo d = run_cash_demo(sc, ens, c.probes(), c.smp_tol);

    json j = to_json(d.optimality);
    j["first_order_residual"] = d.first_order;
    j["quadratic_margin_error"] = d.quadratic_error;
    j["smp"] = to_json(d.smp);
    json oc = json::array();
    for (const auto& o : d.oracle_checks) {
        double dev = 0.0;
        for (std::size_t i = 0; i < o.mean.size(); ++i) dev = std::max(dev, std::abs(o.mean[i] - o.oracle[i]));
        oc.push_back({{"quantity", o.name}, {"max_z", o.max_z}, {"worst_node", o.worst_node}, {"max_abs_deviation", dev}});
    }
    j["oracle_checks"] = oc;
    out.write_json("optimality.json", j);

    const TimeGrid& g = *ens.grid;
    std::vector<double> ustar(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) ustar[i] = d.ustar({0, std::min(i, g.steps() - 1), g[i], 0.0, 0.0});
    auto a = out.open("adjoint_oracle.csv");
    detail::write_means_csv(a, g, out.hash(), {{"p", &d.adjoint_oracle.u1}, {"q", &d.adjoint_oracle.u2}, {"u_star", &ustar}});
    const std::vector<double> mx = detail::node_means(d.trajectory, d.trajectory.x);
    std::vector<double> my(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) my[i] = d.trajectory.y_mean(i);
    auto m = out.open("means_u_star.csv");
    detail::write_means_csv(m, g, out.hash(), {{"mean_x", &mx}, {"mean_y", &my}});
    for (std::size_t k = 0; k < d.optimality.entries.size(); ++k) {
        const auto& e = d.optimality.entries[k];
        auto f = out.open("means_v" + std::to_string(k + 1) + ".csv");
        detail::write_means_csv(f, g, out.hash(), {{"mean_x", &e.mean_x}, {"mean_y", &e.mean_y}}, "control=" + e.name);
    }
    bool pass = d.smp.pass();
    for (const auto& e : d.optimality.entries) pass = pass && e.gap.mean >= -3.0 * e.gap.se;
    return {pass ? Exit::ok : Exit::property_failure, j};
}

inline int exit_code(ErrorKind k) {
    const bool invalid = k == ErrorKind::config || k == ErrorKind::parameter || k == ErrorKind::domain;
    return invalid ? Exit::config_error : Exit::numerical_failure;
}

/// Runs one subcommand with an already loaded config. `seed`, `out_dir` and
/// `threads` override the config when set.
inline int run_config(const std::string& sub, json raw, std::optional<std::uint64_t> seed,
                      std::optional<std::string> out_dir, std::optional<unsigned> threads, std::ostream& log) {
    RunConfig c;
    try {
        if (raw.is_object()) {
            if (seed) raw["monte_carlo"]["seed"] = *seed;
            if (threads) raw["monte_carlo"]["threads"] = *threads;
            if (out_dir) raw["output"]["dir"] = *out_dir;
        }
        c = validate_config(raw);
    } catch (const Error& e) {
        log << e.what() << '\n';
        return Exit::config_error;
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << '\n';
        return Exit::config_error;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome outcome;
    std::vector<std::string> names;
    try {
        detail::Artifacts out(c.out_dir, config_hash(c));
        if (sub == "simulate-paths") outcome = simulate_paths(c, out);
        else if (sub == "check-assumptions") outcome = check_assumptions(c, out);
        else if (sub == "solve-fbsde") outcome = solve_fbsde_cmd(c, out);
        else if (sub == "solve-adjoint") outcome = solve_adjoint_cmd(c, out);
        else if (sub == "check-smp") outcome = check_smp_cmd(c, out);
        else if (sub == "spike-experiment") outcome = spike_cmd(c, out);
        else if (sub == "constrained-demo") outcome = constrained_cmd(c, out);
        else if (sub == "cash-demo") outcome = cash_cmd(c, out);
        else fail(ErrorKind::config, "unknown subcommand '" + sub + "'");
        names = out.names();
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        json manifest{{"subcommand", sub},     {"config_hash", out.hash()}, {"seed", c.seed},
                      {"version", kVersion},   {"wall_time_s", wall},       {"threads", c.threads},
                      {"exit_code", outcome.code}, {"artifacts", names},    {"config", c.normalized}};
        std::ofstream(out.dir() / "run_manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
    } catch (const Error& e) {
        log << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        log << "config error: output.dir: " << e.what() << '\n';
        return Exit::config_error;
    }
    log << sub << ": " << (outcome.code == Exit::ok ? "ok" : "property check failed") << " (" << c.out_dir << ")\n";
    return outcome.code;
}

/// Command-line entry: `<subcommand> --config <path> [--seed n] [--out dir] [--threads n]`.
inline int run(const std::vector<std::string>& args, std::ostream& log = std::cerr) {
    CLI::App app{"Sub-diffusion FBSDE control laboratory"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<unsigned> threads;
    for (const auto& name : subcommands()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run configuration")->required();
        sub->add_option("--seed", seed, "master seed (overrides monte_carlo.seed)");
        sub->add_option("--out", out_dir, "output directory (overrides output.dir)");
        sub->add_option("--threads", threads, "worker threads (overrides monte_carlo.threads)");
    }
    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream o, err;
        const int code = app.exit(e, o, err);
        log << o.str() << err.str();
        return code == 0 ? Exit::ok : Exit::config_error;
    }
    const std::string sub = app.get_subcommands().front()->get_name();
    json raw;
    std::ifstream in(config_path);
    if (!in) {
        log << "config error: cannot read " << config_path << '\n';
        return Exit::config_error;
    }
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        raw = json::object();
    } else {
        try {
            raw = json::parse(text);
        } catch (const json::parse_error& e) {
            log << "config error: " << config_path << ": " << e.what() << '\n';
            return Exit::config_error;
        }
    }
    return run_config(sub, std::move(raw), seed, out_dir, threads, log);
}

}  // namespace subdiff::cli
