#pragma once

// Picard / regression Monte Carlo solver for
//   dx = b dt + delta dL + sigma dB_L,  -dy = f dt + h_dL dL - z dB_L,
//   x(0) = x0, y(T) = phi(x(T)),
// on an ensemble of sub-diffusion scenarios.
//
// Time stepping: the dt terms use the trapezoid rule (implicit in the unknown
// endpoint, solved by a short fixed-point loop); dL and dB_L terms are
// explicit. Conditional expectations given F_{t_i} are projections on
// polynomials in the Markov pair (x_i, R_i).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/control_process.hpp"
#include "subdiff/error.hpp"
#include "subdiff/io.hpp"
#include "subdiff/model.hpp"
#include "subdiff/parallel.hpp"
#include "subdiff/regression.hpp"
#include "subdiff/stats.hpp"
#include "subdiff/subordination.hpp"

namespace subdiff {

struct FbsdeProblem {
    CoefficientSet coeffs;
    ControlProcess control;
    double x0 = 0.0;
};

struct SolverOptions {
    std::size_t picard_max = 50;
    double tol = 1e-4;
    int basis_degree = 2;
    unsigned threads = 1;
    /// Optional regression state replacing x: flat [path * (N + 1) + node].
    /// Linearized systems pass the base trajectory here so every solve of an
    /// experiment projects on the same design.
    std::shared_ptr<const std::vector<double>> features;
    std::size_t inner_max = 8;
};

inline constexpr double kInactiveClock = 1e-14;

/// Discretized adapted triple on every path. Node arrays are flat
/// [path * (N + 1) + node], cell arrays [path * N + cell].
struct FbsdeSolution {
    GridPtr grid;
    std::size_t paths = 0;
    std::vector<double> x, y, z, v;
    /// Pathwise backward sums y_N + sum_{j >= i}(f dt + h dL - z dB_L): unbiased
    /// per-path samples of y_i used for standard errors.
    std::vector<double> y_path;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> changes;
    double terminal_rms = 0.0;

    [[nodiscard]] std::size_t steps() const { return grid->steps(); }
    [[nodiscard]] std::size_t node(std::size_t p, std::size_t i) const { return p * (grid->size()) + i; }
    [[nodiscard]] std::size_t cell(std::size_t p, std::size_t i) const { return p * grid->steps() + i; }

    [[nodiscard]] Estimate x_at(std::size_t i) const { return column(x, i); }
    [[nodiscard]] Estimate y_path_at(std::size_t i) const { return column(y_path, i); }
    [[nodiscard]] double y_mean(std::size_t i) const { return column(y, i).mean; }

private:
    [[nodiscard]] Estimate column(const std::vector<double>& a, std::size_t i) const {
        std::vector<double> s(paths);
        for (std::size_t p = 0; p < paths; ++p) s[p] = a[node(p, i)];
        return estimate(s);
    }
};

namespace detail {

inline Point at_node(std::size_t p, std::size_t node, std::size_t cell, double t, double x, double y, double z,
                     double v) {
    return Point{p, node, cell, t, x, y, z, v};
}

inline void require_finite(double v, const char* what, std::size_t p, std::size_t i) {
    if (!std::isfinite(v))
        fail(ErrorKind::coefficient,
             std::string(what) + " became non-finite on path " + std::to_string(p) + " at node " + std::to_string(i));
}

}  // namespace detail

/// Solves the FBSDE on `ens` by Picard iteration between a forward sweep for x
/// (given the previous y, z) and a regression backward sweep for (y, z).
/// Results depend on the seed and options only, never on the thread count.
inline FbsdeSolution solve_fbsde(const FbsdeProblem& prob, const Ensemble& ens, const SolverOptions& opt = {}) {
    if (ens.paths.empty()) fail(ErrorKind::domain, "ensemble is empty");
    if (opt.picard_max < 1) fail(ErrorKind::domain, "Picard budget must be >= 1");
    if (!(opt.tol > 0.0)) fail(ErrorKind::domain, "Picard tolerance must be positive");
    if (!std::isfinite(prob.x0)) fail(ErrorKind::domain, "x0 must be finite");
    const TimeGrid& g = *ens.grid;
    const std::size_t M = ens.paths.size(), N = g.steps(), K = N + 1;
    for (const auto& b : ens.paths)
        if (b.dL.size() != N || b.R.size() != K) fail(ErrorKind::domain, "path bundle does not match the grid");
    if (opt.features && opt.features->size() != M * K)
        fail(ErrorKind::domain, "regression features do not match the ensemble");

    const CoefficientSet& cs = prob.coeffs;
    FbsdeSolution sol;
    sol.grid = ens.grid;
    sol.paths = M;
    sol.x.assign(M * K, prob.x0);
    sol.y.assign(M * K, 0.0);
    sol.y_path.assign(M * K, 0.0);
    sol.z.assign(M * N, 0.0);
    sol.v.assign(M * N, 0.0);
    std::vector<double> x_prev, y_prev;

    std::size_t growth = 0;
    for (std::size_t iter = 1; iter <= opt.picard_max; ++iter) {
        x_prev = sol.x;
        y_prev = sol.y;

        // Forward sweep.
        parallel_for(M, opt.threads, [&](std::size_t p) {
            const PathBundle& b = ens.paths[p];
            double* x = &sol.x[p * K];
            const double* y = &y_prev[p * K];
            const double* z = &sol.z[p * N];
            double* v = &sol.v[p * N];
            x[0] = prob.x0;
            for (std::size_t i = 0; i < N; ++i) {
                const double dt = g.dt(i);
                v[i] = prob.control({p, i, g.midpoint(i), x[i], b.R[i]});
                const Point left = detail::at_node(p, i, i, g[i], x[i], y[i], z[i], v[i]);
                double base = x[i];
                double bl = 0.0;
                if (!cs.b.is_zero()) {
                    bl = cs.b(left);
                    base += 0.5 * bl * dt;
                }
                if (!cs.delta.is_zero() && b.dL[i] > 0.0) base += cs.delta(left) * b.dL[i];
                if (!cs.sigma.is_zero() && b.dL[i] > 0.0) base += cs.sigma(left) * b.dBL[i];
                double next = base;
                if (!cs.b.is_zero()) {
                    Point right = detail::at_node(p, i + 1, i, g[i + 1], x[i] + bl * dt, y[i + 1], z[i], v[i]);
                    next = base + 0.5 * cs.b(right) * dt;
                    for (std::size_t k = 0; k < opt.inner_max; ++k) {
                        right.x = next;
                        const double again = base + 0.5 * cs.b(right) * dt;
                        const bool done = std::abs(again - next) <= 1e-15 * (1.0 + std::abs(again));
                        next = again;
                        if (done) break;
                    }
                }
                detail::require_finite(next, "x", p, i + 1);
                x[i + 1] = next;
            }
        });

        // Backward sweep.
        parallel_for(M, opt.threads, [&](std::size_t p) {
            const double yT = cs.phi(detail::at_node(p, N, N - 1, g[N], sol.x[p * K + N], 0.0, 0.0, 0.0));
            detail::require_finite(yT, "y", p, N);
            sol.y[p * K + N] = yT;
            sol.y_path[p * K + N] = yT;
        });
        std::vector<double> feat(M), over(M), t1(M), t2(M), t3(M), fright(M);
        for (std::size_t ii = N; ii-- > 0;) {
            const std::size_t i = ii;
            const double dt = g.dt(i);
            for (std::size_t p = 0; p < M; ++p) {
                feat[p] = opt.features ? (*opt.features)[p * K + i] : sol.x[p * K + i];
                over[p] = ens.paths[p].R[i];
            }
            const Regressor reg({&feat, &over}, M, opt.basis_degree);
            // z_i = E_i[(y_{i+1} - E_i y_{i+1}) dB_L] / E_i[dL]: centering leaves the
            // numerator's mean unchanged and removes the level of y from its noise.
            for (std::size_t p = 0; p < M; ++p) t1[p] = sol.y[p * K + i + 1];
            const std::vector<double> level = reg.fit(t1);
            for (std::size_t p = 0; p < M; ++p) {
                t1[p] = (sol.y[p * K + i + 1] - level[p]) * ens.paths[p].dBL[i];
                t2[p] = ens.paths[p].dL[i];
            }
            const std::vector<double> num = reg.fit(t1), den = reg.fit(t2);
            parallel_for(M, opt.threads, [&](std::size_t p) {
                const PathBundle& b = ens.paths[p];
                const double dL = b.dL[i];
                double zi = 0.0;
                if (dL > kInactiveClock && den[p] > kInactiveClock) zi = num[p] / den[p];
                sol.z[p * N + i] = zi;
                const double xi = sol.x[p * K + i], yn = sol.y[p * K + i + 1], vi = sol.v[p * N + i];
                double fr = 0.0;
                if (!cs.f.is_zero()) fr = cs.f(detail::at_node(p, i + 1, i, g[i + 1], sol.x[p * K + i + 1], yn, zi, vi));
                fright[p] = fr;
                double target = yn + 0.5 * fr * dt;
                if (!cs.h_dL.is_zero() && dL > 0.0)
                    target += cs.h_dL(detail::at_node(p, i, i, g[i], xi, yn, zi, vi)) * dL;
                t3[p] = target;
            });
            const std::vector<double> cond = reg.fit(t3);
            parallel_for(M, opt.threads, [&](std::size_t p) {
                const PathBundle& b = ens.paths[p];
                const double xi = sol.x[p * K + i], vi = sol.v[p * N + i], zi = sol.z[p * N + i];
                double yi = cond[p];
                double fl = 0.0;
                if (!cs.f.is_zero()) {
                    Point left = detail::at_node(p, i, i, g[i], xi, yi, zi, vi);
                    fl = cs.f(left);
                    for (std::size_t k = 0; k < opt.inner_max; ++k) {
                        const double again = cond[p] + 0.5 * fl * dt;
                        const bool done = std::abs(again - yi) <= 1e-15 * (1.0 + std::abs(again));
                        yi = again;
                        left.y = yi;
                        fl = cs.f(left);
                        if (done) break;
                    }
                }
                detail::require_finite(yi, "y", p, i);
                sol.y[p * K + i] = yi;
                double pathwise = sol.y_path[p * K + i + 1] + 0.5 * (fl + fright[p]) * dt - zi * b.dBL[i];
                if (!cs.h_dL.is_zero() && b.dL[i] > 0.0)
                    pathwise += cs.h_dL(detail::at_node(p, i, i, g[i], xi, sol.y[p * K + i + 1], zi, vi)) * b.dL[i];
                sol.y_path[p * K + i] = pathwise;
            });
        }

        double acc = 0.0;
        for (std::size_t k = 0; k < M * K; ++k) {
            const double dx = sol.x[k] - x_prev[k], dy = sol.y[k] - y_prev[k];
            acc += dx * dx + dy * dy;
        }
        const double change = std::sqrt(acc / static_cast<double>(M * K));
        sol.changes.push_back(change);
        sol.iterations = iter;
        if (change < opt.tol) {
            sol.converged = true;
            break;
        }
        if (sol.changes.size() >= 2 && change > sol.changes[sol.changes.size() - 2]) {
            if (++growth >= 3)
                fail(ErrorKind::divergence, "Picard iteration is not contracting (change grew 3 times in a row, now " +
                                                io::fmt(change) + "); try a shorter horizon T or a finer grid");
        } else {
            growth = 0;
        }
    }

    double term = 0.0;
    for (std::size_t p = 0; p < M; ++p) {
        const double d = sol.y[p * K + N] - cs.phi(detail::at_node(p, N, N - 1, g[N], sol.x[p * K + N], 0, 0, 0));
        term += d * d;
    }
    sol.terminal_rms = std::sqrt(term / static_cast<double>(M));
    return sol;
}

/// Realized cost per path: int g dt (trapezoid) + h_T(x_N) + gamma(y_0), with
/// gamma linearized around the regression value so that the pathwise y-sample
/// carries the Monte Carlo error of y_0.
inline std::vector<double> cost_samples(const FbsdeSolution& s, const CoefficientSet& cs) {
    const TimeGrid& g = *s.grid;
    const std::size_t N = g.steps(), K = N + 1;
    std::vector<double> out(s.paths);
    for (std::size_t p = 0; p < s.paths; ++p) {
        double run = 0.0;
        if (!cs.g.is_zero())
            for (std::size_t i = 0; i < N; ++i) {
                const double v = s.v[p * N + i];
                const double gl = cs.g({p, i, i, g[i], s.x[p * K + i], s.y[p * K + i], 0.0, v});
                const double gr = cs.g({p, i + 1, i, g[i + 1], s.x[p * K + i + 1], s.y[p * K + i + 1], 0.0, v});
                run += 0.5 * (gl + gr) * g.dt(i);
            }
        const Point end{p, N, N - 1, g[N], s.x[p * K + N], 0.0, 0.0, 0.0};
        const Point start{p, 0, 0, 0.0, 0.0, s.y[p * K], 0.0, 0.0};
        const double y0 = s.y[p * K], y0_path = s.y_path[p * K];
        run += cs.h_T(end) + cs.gamma(start) + cs.gamma.gradient(start).y * (y0_path - y0);
        out[p] = run;
    }
    return out;
}

inline Estimate cost(const FbsdeSolution& s, const CoefficientSet& cs) { return estimate(cost_samples(s, cs)); }

struct ResidualReport {
    double forward_max = 0.0, forward_rms = 0.0;
    double backward_max = 0.0, backward_rms = 0.0;
    std::vector<double> forward_node_rms;   ///< per node, over paths
    std::vector<double> backward_node_rms;  ///< per node, over paths
    std::vector<double> backward_node_mean; ///< per node, ensemble mean
    std::vector<double> backward_node_se;   ///< standard error of that mean
};

/// Residuals of the two integral identities evaluated with the scheme's own
/// quadrature: x_i - (x0 + sum b dt + sum delta dL + sum sigma dB_L) and
/// y_i - (phi(x_N) + sum f dt + sum h dL - sum z dB_L).
inline ResidualReport residual_check(const FbsdeSolution& s, const FbsdeProblem& prob, const Ensemble& ens) {
    if (!s.grid || !(*s.grid == *ens.grid) || s.paths != ens.paths.size())
        fail(ErrorKind::domain, "solution and ensemble are not aligned");
    const TimeGrid& g = *s.grid;
    const CoefficientSet& cs = prob.coeffs;
    const std::size_t M = s.paths, N = g.steps(), K = N + 1;
    std::vector<double> fw(M * K), bw(M * K);
    for (std::size_t p = 0; p < M; ++p) {
        const PathBundle& b = ens.paths[p];
        auto X = [&](std::size_t i) { return s.x[p * K + i]; };
        auto Y = [&](std::size_t i) { return s.y[p * K + i]; };
        double acc = prob.x0;
        fw[p * K] = X(0) - acc;
        for (std::size_t i = 0; i < N; ++i) {
            const double v = s.v[p * N + i], z = s.z[p * N + i];
            const Point l{p, i, i, g[i], X(i), Y(i), z, v};
            const Point r{p, i + 1, i, g[i + 1], X(i + 1), Y(i + 1), z, v};
            acc += 0.5 * (cs.b(l) + cs.b(r)) * g.dt(i) + cs.delta(l) * b.dL[i] + cs.sigma(l) * b.dBL[i];
            fw[p * K + i + 1] = X(i + 1) - acc;
        }
        acc = cs.phi({p, N, N - 1, g[N], X(N), 0.0, 0.0, 0.0});
        bw[p * K + N] = Y(N) - acc;
        for (std::size_t i = N; i-- > 0;) {
            const double v = s.v[p * N + i], z = s.z[p * N + i];
            const Point l{p, i, i, g[i], X(i), Y(i), z, v};
            const Point r{p, i + 1, i, g[i + 1], X(i + 1), Y(i + 1), z, v};
            const Point h{p, i, i, g[i], X(i), Y(i + 1), z, v};
            acc += 0.5 * (cs.f(l) + cs.f(r)) * g.dt(i) + cs.h_dL(h) * b.dL[i] - z * b.dBL[i];
            bw[p * K + i] = Y(i) - acc;
        }
    }
    ResidualReport rep;
    rep.forward_node_rms.assign(K, 0.0);
    rep.backward_node_rms.assign(K, 0.0);
    rep.backward_node_mean.assign(K, 0.0);
    rep.backward_node_se.assign(K, 0.0);
    double fsum = 0.0, bsum = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        std::vector<double> col(M);
        double fs = 0.0, bs = 0.0;
        for (std::size_t p = 0; p < M; ++p) {
            const double a = fw[p * K + i], c = bw[p * K + i];
            fs += a * a;
            bs += c * c;
            col[p] = c;
            rep.forward_max = std::max(rep.forward_max, std::abs(a));
            rep.backward_max = std::max(rep.backward_max, std::abs(c));
        }
        rep.forward_node_rms[i] = std::sqrt(fs / static_cast<double>(M));
        rep.backward_node_rms[i] = std::sqrt(bs / static_cast<double>(M));
        const Estimate e = estimate(col);
        rep.backward_node_mean[i] = e.mean;
        rep.backward_node_se[i] = e.se;
        fsum += fs;
        bsum += bs;
    }
    rep.forward_rms = std::sqrt(fsum / static_cast<double>(M * K));
    rep.backward_rms = std::sqrt(bsum / static_cast<double>(M * K));
    return rep;
}

/// Long format: path_id,t,x,y,z (z of the cell starting at t; 0 on the last node).
inline void write_solution_csv(std::ostream& os, const FbsdeSolution& s, std::size_t max_paths,
                               const std::string& config_hash = {}, const char* names = "x,y,z") {
    if (!config_hash.empty()) os << "# config_hash=" << config_hash << '\n';
    os << "path_id,t," << names << '\n';
    const TimeGrid& g = *s.grid;
    const std::size_t N = g.steps(), K = N + 1;
    for (std::size_t p = 0; p < std::min(max_paths, s.paths); ++p)
        for (std::size_t i = 0; i < K; ++i)
            os << p << ',' << io::fmt(g[i]) << ',' << io::fmt(s.x[p * K + i]) << ',' << io::fmt(s.y[p * K + i]) << ','
               << io::fmt(i < N ? s.z[p * N + i] : 0.0) << '\n';
}

inline nlohmann::json solution_summary(const FbsdeSolution& s) {
    nlohmann::json j;
    j["paths"] = s.paths;
    j["steps"] = s.steps();
    j["iterations"] = s.iterations;
    j["converged"] = s.converged;
    j["picard_changes"] = s.changes;
    j["terminal_rms"] = s.terminal_rms;
    return j;
}

}  // namespace subdiff
