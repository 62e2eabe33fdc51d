#pragma once

// Cash management: the linear model, its deterministic oracles, the closed-form
// optimal control u* = -c1 q + c2 p + l and the optimality-gap identity
// J(v) - J(u*) = E int (v - u*)^2 / 2 dt.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/bvp.hpp"
#include "subdiff/control.hpp"
#include "subdiff/model.hpp"
#include "subdiff/solver.hpp"
#include "subdiff/stats.hpp"
#include "subdiff/subordination.hpp"

namespace subdiff {

struct CashStudyConfig {
    LinearModelSpec model;
    double x0 = 1.0;
    LevySpec levy = LevySpec::compound_poisson(1.0, 1.0, 0.5);
    double r0 = 0.0;
    double T = 1.0;
    std::size_t N = 100;
    std::size_t paths = 10000;
    std::uint64_t seed = 1;
    std::size_t refinement = 10;
    SolverOptions solver;
    /// "u*+c", "u*-c", "l" or a constant.
    std::vector<std::string> comparisons{"u*+1", "l", "0"};
    bool classical = false;  ///< plain Brownian scenarios instead of a time change

    void validate() const {
        model.validate();
        levy.validate();
        if (!std::isfinite(x0)) fail(ErrorKind::parameter, "x0 must be finite");
        if (!(T > 0.0) || N == 0 || paths == 0) fail(ErrorKind::parameter, "T, N and paths must be positive");
    }
};

inline CoefficientSet build_cash_model(const CashStudyConfig& c) {
    c.validate();
    return cash_model(c.model);
}

inline Ensemble cash_ensemble(const CashStudyConfig& c, unsigned threads = 1) {
    c.validate();
    const GridPtr grid = make_grid(c.T, c.N);
    if (c.classical) return brownian_ensemble(grid, c.seed, c.paths, threads);
    return simulate_ensemble(c.levy, grid, c.r0, c.seed, c.paths, c.refinement, threads);
}

namespace detail {
inline void require_linear(const LinearModelSpec& s) {
    if (s.beta != 0.0) fail(ErrorKind::parameter, "the deterministic oracle needs the linear model (beta = 0)");
}
}  // namespace detail

/// (x, y) with z = 0 under an open-loop control applied per cell (with state
/// noise sigma_x != 0 these are the ensemble means):
///   x' = -m1 x - n1 y + c1 v,  y' = m1 y - m2 x - c2 v,  x(0) = x0, y(T) = a x(T).
inline BvpSolution cash_state_oracle(const LinearModelSpec& s, double x0, const ControlProcess& v, const GridPtr& grid,
                                     std::size_t substeps = 20) {
    s.validate();
    detail::require_linear(s);
    const auto table = std::make_shared<const ControlProcess::Table>(sample_open_loop(v, *grid, 1));
    LinearBvp b;
    b.A = {{{-s.m1, -s.n1}, {-s.m2, s.m1}}};
    const double c1 = s.c1, c2 = s.c2;
    b.forcing = [table, c1, c2](double, std::size_t cell) {
        const double u = (*table)[0][cell];
        return Vec2{c1 * u, -c2 * u};
    };
    b.initial = x0;
    b.slope = s.a_slope;
    return solve_linear_bvp(b, grid, substeps);
}

/// (p, q) with k = 0:  p' = -m1 p + n1 q,  q' = m2 p + m1 q,  p(0) = 1, q(T) = -a p(T).
inline BvpSolution cash_adjoint_oracle(const LinearModelSpec& s, const GridPtr& grid, std::size_t substeps = 20) {
    s.validate();
    detail::require_linear(s);
    if (s.sigma_x != 0.0) fail(ErrorKind::parameter, "the adjoint oracle needs sigma_x = 0 (k enters the q drift)");
    LinearBvp b;
    b.A = {{{-s.m1, s.n1}, {s.m2, s.m1}}};
    b.initial = 1.0;
    b.slope = -s.a_slope;
    return solve_linear_bvp(b, grid, substeps);
}

/// u*(t) = -c1 q(t) + c2 p(t) + l(t) from the oracle adjoint.
inline ControlProcess optimal_cash_control(const BvpSolution& adjoint, const LinearModelSpec& s) {
    auto oracle = std::make_shared<const BvpSolution>(adjoint);
    return ControlProcess::deterministic([oracle, s](double t) {
        const Vec2 pq = oracle->at(t);
        return -s.c1 * pq[1] + s.c2 * pq[0] + s.target(t);
    });
}

/// max_i |c1 q(t_i) - c2 p(t_i) + u*(t_i) - l(t_i)| on the oracle nodes.
inline double first_order_residual(const BvpSolution& adjoint, const LinearModelSpec& s, const ControlProcess& u) {
    const TimeGrid& g = *adjoint.grid;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double ui = u({0, std::min(i, g.steps() - 1), g[i], 0.0, 0.0});
        const double r = s.c1 * adjoint.u2[i] - s.c2 * adjoint.u1[i] + ui - s.target(g[i]);
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

/// max_i max_v |H(v) - H(u*) - (v - u*)^2 / 2| on oracle values.
inline double quadratic_margin_error(const CoefficientSet& cs, const BvpSolution& state, const BvpSolution& adjoint,
                                     const ControlProcess& u, const std::vector<double>& probes) {
    const TimeGrid& g = *adjoint.grid;
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double ui = u({0, std::min(i, g.steps() - 1), g[i], 0.0, 0.0});
        const double x = state.u1[i], y = state.u2[i], p = adjoint.u1[i], q = adjoint.u2[i];
        const double hu = eval_hamiltonian(cs, g[i], x, y, 0.0, ui, p, q);
        for (double v : probes) {
            const double m = eval_hamiltonian(cs, g[i], x, y, 0.0, v, p, q) - hu;
            worst = std::max(worst, std::abs(m - 0.5 * (v - ui) * (v - ui)));
        }
    }
    return worst;
}

/// Per-path, per-cell control l - c1 q + c2 p built from a Monte Carlo adjoint at the
/// left node of each cell.
inline ControlProcess adjoint_feedback_table(const AdjointSolution& adj, const LinearModelSpec& s) {
    const TimeGrid& g = *adj.grid;
    const std::size_t N = g.steps(), K = N + 1;
    ControlProcess::Table t(adj.paths, std::vector<double>(N));
    for (std::size_t p = 0; p < adj.paths; ++p)
        for (std::size_t i = 0; i < N; ++i)
            t[p][i] = -s.c1 * adj.y[p * K + i] + s.c2 * adj.x[p * K + i] + s.target(g[i]);
    return ControlProcess::tabulated(std::move(t));
}

inline ControlProcess comparison_control(const std::string& name, const ControlProcess& ustar,
                                         const LinearModelSpec& s) {
    if (name == "l") return ControlProcess::deterministic([s](double t) { return s.target(t); });
    if (name == "u*") return ustar;
    if (name.rfind("u*", 0) == 0) {
        std::size_t used = 0;
        double shift = 0.0;
        try {
            shift = std::stod(name.substr(2), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != name.size() - 2) fail(ErrorKind::config, "bad comparison control '" + name + "'");
        return ControlProcess::mapped(ustar, [shift](double u) { return u + shift; }, ControlDomain::real_line());
    }
    std::size_t used = 0;
    double c = 0.0;
    try {
        c = std::stod(name, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != name.size()) fail(ErrorKind::config, "bad comparison control '" + name + "'");
    return ControlProcess::constant(c);
}

struct GapEntry {
    std::string name;
    Estimate J;
    Estimate gap;          ///< paired J(v) - J(u*)
    double identity = 0.0; ///< E int (v - u*)^2 / 2 dt on the realized controls
    Estimate discrepancy;  ///< paired (J(v) - J(u*)) - identity
    std::vector<double> mean_x, mean_y;
    [[nodiscard]] bool identity_holds(double k = 3.0) const {
        return std::abs(discrepancy.mean) <= k * discrepancy.se;
    }
};

struct OptimalityReport {
    Estimate J_u;
    std::vector<GapEntry> entries;
    [[nodiscard]] const GapEntry& entry(const std::string& n) const {
        for (const auto& e : entries)
            if (e.name == n) return e;
        fail(ErrorKind::domain, "no comparison control named '" + n + "'");
    }
};

/// Gap and identity for every comparison control on the ensemble of the base
/// solution (common random numbers).
inline OptimalityReport optimality_gap(const CashStudyConfig& c, const CoefficientSet& cs, const Ensemble& ens,
                                       const FbsdeSolution& base, const ControlProcess& ustar,
                                       const SolverOptions& opt) {
    const TimeGrid& g = *ens.grid;
    const std::size_t M = ens.paths.size(), N = g.steps();
    OptimalityReport rep;
    const std::vector<double> Ju = cost_samples(base, cs);
    rep.J_u = estimate(Ju);
    for (const auto& name : c.comparisons) {
        FbsdeProblem prob{cs, comparison_control(name, ustar, c.model), c.x0};
        const FbsdeSolution s = solve_fbsde(prob, ens, opt);
        const std::vector<double> Jv = cost_samples(s, cs);
        std::vector<double> gap(M), disc(M);
        double identity = 0.0;
        for (std::size_t p = 0; p < M; ++p) {
            double id = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                const double d = s.v[p * N + i] - base.v[p * N + i];
                id += 0.5 * d * d * g.dt(i);
            }
            identity += id;
            gap[p] = Jv[p] - Ju[p];
            disc[p] = gap[p] - id;
        }
        GapEntry e;
        e.name = name;
        e.J = estimate(Jv);
        e.gap = estimate(gap);
        e.identity = identity / static_cast<double>(M);
        e.discrepancy = estimate(disc);
        for (std::size_t i = 0; i < g.size(); ++i) {
            e.mean_x.push_back(s.x_at(i).mean);
            e.mean_y.push_back(s.y_mean(i));
        }
        rep.entries.push_back(std::move(e));
    }
    return rep;
}

inline nlohmann::json to_json(const OptimalityReport& r) {
    nlohmann::json j{{"J_u", r.J_u.mean}, {"J_u_se", r.J_u.se}};
    nlohmann::json es = nlohmann::json::array();
    for (const auto& e : r.entries)
        es.push_back({{"control", e.name},
                      {"J_v", e.J.mean},
                      {"J_v_se", e.J.se},
                      {"gap", e.gap.mean},
                      {"gap_se", e.gap.se},
                      {"identity", e.identity},
                      {"discrepancy", std::abs(e.discrepancy.mean)},
                      {"discrepancy_se", e.discrepancy.se},
                      {"identity_within_3se", e.identity_holds(3.0)},
                      {"gap_nonnegative", e.gap.mean >= -3.0 * e.gap.se}});
    j["comparisons"] = es;
    return j;
}

/// Node-wise Monte Carlo mean against a deterministic reference.
struct OracleComparison {
    std::string name;
    std::vector<double> mean, se, oracle;
    double max_z = 0.0;
    std::size_t worst_node = 0;
    [[nodiscard]] bool pass(double k = 3.0) const { return max_z <= k; }
};

inline OracleComparison compare_to_oracle(const std::string& name, const std::vector<double>& samples,
                                          std::size_t paths, const std::vector<double>& oracle) {
    OracleComparison c;
    c.name = name;
    c.oracle = oracle;
    const std::size_t K = oracle.size();
    std::vector<double> col(paths);
    for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t p = 0; p < paths; ++p) col[p] = samples[p * K + i];
        const Estimate e = estimate(col);
        c.mean.push_back(e.mean);
        c.se.push_back(e.se);
        const double z = z_score(e.mean, oracle[i], e.se);
        if (z > c.max_z) {
            c.max_z = z;
            c.worst_node = i;
        }
    }
    return c;
}

/// Everything the cash demo produces.
struct CashDemo {
    CoefficientSet model;
    BvpSolution adjoint_oracle, state_oracle;
    ControlProcess ustar;
    FbsdeSolution trajectory;
    AdjointSolution adjoint;
    double first_order = 0.0;         ///< max |dH/dv(u*)| on oracle nodes
    double quadratic_error = 0.0;     ///< max |H(v) - H(u*) - (v - u*)^2/2| on oracle values
    SmpReport smp;                    ///< Monte Carlo check with the u* table from the MC adjoint
    std::vector<OracleComparison> oracle_checks;  ///< x, y, p, q
    OptimalityReport optimality;
};

inline CashDemo run_cash_demo(const CashStudyConfig& c, const Ensemble& ens, const std::vector<double>& probes,
                              double smp_tol = 1e-6) {
    CashDemo d;
    d.model = build_cash_model(c);
    const GridPtr grid = ens.grid;
    d.adjoint_oracle = cash_adjoint_oracle(c.model, grid);
    d.ustar = optimal_cash_control(d.adjoint_oracle, c.model);
    d.state_oracle = cash_state_oracle(c.model, c.x0, d.ustar, grid);
    d.first_order = first_order_residual(d.adjoint_oracle, c.model, d.ustar);
    d.quadratic_error = quadratic_margin_error(d.model, d.state_oracle, d.adjoint_oracle, d.ustar, probes);

    const FbsdeProblem prob{d.model, d.ustar, c.x0};
    d.trajectory = solve_fbsde(prob, ens, c.solver);
    d.adjoint = solve_adjoint(d.model, d.trajectory, ens, c.solver);
    d.smp = check_smp(d.model, d.trajectory, d.adjoint, adjoint_feedback_table(d.adjoint, c.model), probes, ens,
                      smp_tol);

    const std::size_t M = ens.paths.size();
    d.oracle_checks.push_back(compare_to_oracle("x", d.trajectory.x, M, d.state_oracle.u1));
    d.oracle_checks.push_back(compare_to_oracle("y", d.trajectory.y_path, M, d.state_oracle.u2));
    d.oracle_checks.push_back(compare_to_oracle("p", d.adjoint.x, M, d.adjoint_oracle.u1));
    d.oracle_checks.push_back(compare_to_oracle("q", d.adjoint.y_path, M, d.adjoint_oracle.u2));
    d.optimality = optimality_gap(c, d.model, ens, d.trajectory, d.ustar, c.solver);
    return d;
}

}  // namespace subdiff
