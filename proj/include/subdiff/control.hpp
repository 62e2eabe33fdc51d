#pragma once

// Adjoint equation, Hamiltonian, maximum-principle check and spike-variation
// experiments for the controlled FBSDE.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/control_process.hpp"
#include "subdiff/model.hpp"
#include "subdiff/solver.hpp"
#include "subdiff/stats.hpp"

namespace subdiff {

/// (p, q, k) stored as the (x, y, z) fields of a solution.
using AdjointSolution = FbsdeSolution;

/// Partial derivatives of the model along a solved trajectory. Cell tables
/// [path * N + cell] hold the left (index 0) and right (index 1) cell ends;
/// sigma partials are taken at the left end only.
struct FrozenGradients {
    std::size_t N = 0, K = 0;
    std::vector<double> bx[2], by[2], fx[2], fy[2], gx[2], gy[2];
    std::vector<double> sx, sy, sz;
    std::vector<double> phi_x, hT_x;  ///< per path, at x_N
    std::vector<double> gamma_y;      ///< per path, at y_0

    static int side(const Point& p) noexcept { return p.node == p.cell ? 0 : 1; }
    [[nodiscard]] std::size_t at(const Point& p) const noexcept { return p.path * N + p.cell; }
};

inline std::shared_ptr<const FrozenGradients> freeze_gradients(const CoefficientSet& cs, const FbsdeSolution& s) {
    const TimeGrid& g = *s.grid;
    auto fg = std::make_shared<FrozenGradients>();
    const std::size_t M = s.paths, N = g.steps(), K = N + 1;
    fg->N = N;
    fg->K = K;
    for (int side = 0; side < 2; ++side)
        for (auto* tab : {&fg->bx[side], &fg->by[side], &fg->fx[side], &fg->fy[side], &fg->gx[side], &fg->gy[side]})
            tab->assign(M * N, 0.0);
    fg->sx.assign(M * N, 0.0);
    fg->sy.assign(M * N, 0.0);
    fg->sz.assign(M * N, 0.0);
    fg->phi_x.assign(M, 0.0);
    fg->hT_x.assign(M, 0.0);
    fg->gamma_y.assign(M, 0.0);
    auto finite = [](const Gradient& d, const char* role) {
        if (!std::isfinite(d.x) || !std::isfinite(d.y) || !std::isfinite(d.z) || !std::isfinite(d.v))
            fail(ErrorKind::coefficient, std::string("gradient of ") + role + " is not finite along the trajectory");
        return d;
    };
    for (std::size_t p = 0; p < M; ++p) {
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = p * N + i;
            const double v = s.v[k], z = s.z[k];
            for (int side = 0; side < 2; ++side) {
                const std::size_t n = i + static_cast<std::size_t>(side);
                const Point pt{p, n, i, g[n], s.x[p * K + n], s.y[p * K + n], z, v};
                const Gradient db = finite(cs.b.gradient(pt), "b"), df = finite(cs.f.gradient(pt), "f"),
                               dg = finite(cs.g.gradient(pt), "g");
                fg->bx[side][k] = db.x;
                fg->by[side][k] = db.y;
                fg->fx[side][k] = df.x;
                fg->fy[side][k] = df.y;
                fg->gx[side][k] = dg.x;
                fg->gy[side][k] = dg.y;
            }
            const Point left{p, i, i, g[i], s.x[p * K + i], s.y[p * K + i], z, v};
            const Gradient ds = finite(cs.sigma.gradient(left), "sigma");
            fg->sx[k] = ds.x;
            fg->sy[k] = ds.y;
            fg->sz[k] = ds.z;
        }
        const Point end{p, N, N - 1, g[N], s.x[p * K + N], s.y[p * K + N], 0.0, 0.0};
        fg->phi_x[p] = finite(cs.phi.gradient(end), "phi").x;
        fg->hT_x[p] = finite(cs.h_T.gradient(end), "h_T").x;
        const Point start{p, 0, 0, 0.0, s.x[p * K], s.y[p * K], 0.0, 0.0};
        fg->gamma_y[p] = finite(cs.gamma.gradient(start), "gamma").y;
    }
    return fg;
}

inline void require_control_form(const CoefficientSet& cs) {
    if (!cs.delta.is_zero() || !cs.h_dL.is_zero())
        fail(ErrorKind::coefficient, "the controlled system carries no dL drivers; delta and h_dL must be zero");
}

inline double mean_of(const std::vector<double>& a) {
    double s = 0.0;
    for (double v : a) s += v;
    return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

/// Adjoint FBSDE in (p, q, k) as a generic problem (X = p, Y = q, Z = k):
///   dp = [f_y p - b_y q - g_y]dt - sigma_y k dL - sigma_z k dB_L,
///  -dq = [-f_x p + b_x q + g_x]dt + sigma_x k dL - k dB_L,
///   p(0) = -gamma_y(y(0)),  q(T) = -phi_x(x(T)) p(T) + h_{T,x}(x(T)).
inline FbsdeProblem build_adjoint(const CoefficientSet& cs, const FbsdeSolution& traj) {
    require_control_form(cs);
    const auto G = freeze_gradients(cs, traj);
    FbsdeProblem adj;
    adj.coeffs.name = cs.name + "/adjoint";
    adj.coeffs.b = Coefficient(kControlled, [G](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return G->fy[s][k] * P.x - G->by[s][k] * P.y - G->gy[s][k];
    });
    adj.coeffs.delta = Coefficient(kNoise, [G](const Point& P) { return -G->sy[G->at(P)] * P.z; });
    adj.coeffs.sigma = Coefficient(kNoise, [G](const Point& P) { return -G->sz[G->at(P)] * P.z; });
    adj.coeffs.f = Coefficient(kControlled, [G](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return -G->fx[s][k] * P.x + G->bx[s][k] * P.y + G->gx[s][k];
    });
    adj.coeffs.h_dL = Coefficient(kNoise, [G](const Point& P) { return G->sx[G->at(P)] * P.z; });
    adj.coeffs.phi = Coefficient(arg_x, [G](const Point& P) { return -G->phi_x[P.path] * P.x + G->hT_x[P.path]; });
    adj.x0 = -mean_of(G->gamma_y);
    return adj;
}

/// Solves the adjoint on the trajectory's ensemble, projecting on the
/// trajectory's own regression design.
inline AdjointSolution solve_adjoint(const CoefficientSet& cs, const FbsdeSolution& traj, const Ensemble& ens,
                                     SolverOptions opt = {}) {
    const FbsdeProblem adj = build_adjoint(cs, traj);
    opt.features = std::make_shared<const std::vector<double>>(traj.x);
    return solve_fbsde(adj, ens, opt);
}

/// H = q b - p f + w g. The z argument is carried for the signature of the
/// maximum condition only; H does not depend on it. `cost_weight` is 1 for the
/// unconstrained problem.
inline double eval_hamiltonian(const CoefficientSet& cs, double t, double x, double y, double z, double v, double p,
                               double q, double cost_weight = 1.0) {
    const Point pt{0, 0, 0, t, x, y, z, v};
    return q * cs.b(pt) - p * cs.f(pt) + cost_weight * cs.g(pt);
}

struct SmpReport {
    double min_margin = std::numeric_limits<double>::infinity();
    std::size_t worst_path = 0, worst_node = 0;
    double worst_probe = 0.0, worst_candidate = 0.0;
    std::size_t checked = 0;
    std::size_t violations = 0;
    double tol = 0.0;
    [[nodiscard]] bool pass() const { return violations == 0; }
};

/// min over paths, nodes t_i (i < N) and probes v of H(v) - H(u), with u the
/// candidate's value on cell i and (x, y, z, p, q) taken at t_i.
inline SmpReport check_smp(const CoefficientSet& cs, const FbsdeSolution& traj, const AdjointSolution& adj,
                           const ControlProcess& candidate, const std::vector<double>& probes, const Ensemble& ens,
                           double tol, double cost_weight = 1.0) {
    if (traj.paths != adj.paths || traj.paths != ens.paths.size())
        fail(ErrorKind::domain, "trajectory, adjoint and ensemble sizes differ");
    const TimeGrid& g = *traj.grid;
    const std::size_t N = g.steps(), K = N + 1;
    SmpReport rep;
    rep.tol = tol;
    for (std::size_t p = 0; p < traj.paths; ++p)
        for (std::size_t i = 0; i < N; ++i) {
            const double x = traj.x[p * K + i], y = traj.y[p * K + i], z = traj.z[p * N + i];
            const double pp = adj.x[p * K + i], qq = adj.y[p * K + i];
            const double u = candidate({p, i, g.midpoint(i), x, ens.paths[p].R[i]});
            const double hu = eval_hamiltonian(cs, g[i], x, y, z, u, pp, qq, cost_weight);
            for (double v : probes) {
                const double m = eval_hamiltonian(cs, g[i], x, y, z, v, pp, qq, cost_weight) - hu;
                ++rep.checked;
                if (m < -tol) ++rep.violations;
                if (m < rep.min_margin) {
                    rep.min_margin = m;
                    rep.worst_path = p;
                    rep.worst_node = i;
                    rep.worst_probe = v;
                    rep.worst_candidate = u;
                }
            }
        }
    return rep;
}

inline nlohmann::json to_json(const SmpReport& r) {
    return {{"min_margin", r.min_margin}, {"worst_path", r.worst_path},   {"worst_node", r.worst_node},
            {"worst_probe", r.worst_probe}, {"worst_candidate", r.worst_candidate}, {"checked", r.checked},
            {"violations", r.violations}, {"tol", r.tol},                  {"pass", r.pass()}};
}

inline std::vector<double> probe_grid(double lo, double hi, std::size_t count) {
    if (count < 2 || !(lo < hi)) fail(ErrorKind::domain, "probe grid needs count >= 2 and lo < hi");
    std::vector<double> v(count);
    for (std::size_t k = 0; k < count; ++k)
        v[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
    return v;
}

// ---------------------------------------------------------------------------
// Spike variation

/// Coefficient differences c(u^eps) - c(u) for c in {b, f, g} at both ends of
/// every cell, evaluated along the base trajectory.
struct Forcing {
    std::size_t N = 0;
    std::vector<double> db[2], df[2], dg[2];  ///< [path * N + cell]
};

inline std::shared_ptr<const Forcing> spike_forcing(const CoefficientSet& cs, const FbsdeSolution& base,
                                                    const ControlProcess& perturbed, const Ensemble& ens) {
    const TimeGrid& g = *base.grid;
    const std::size_t M = base.paths, N = g.steps(), K = N + 1;
    auto F = std::make_shared<Forcing>();
    F->N = N;
    for (int s = 0; s < 2; ++s) {
        F->db[s].assign(M * N, 0.0);
        F->df[s].assign(M * N, 0.0);
        F->dg[s].assign(M * N, 0.0);
    }
    for (std::size_t p = 0; p < M; ++p)
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = p * N + i;
            const double u = base.v[k];
            const double ue = perturbed({p, i, g.midpoint(i), base.x[p * K + i], ens.paths[p].R[i]});
            if (ue == u) continue;
            for (int s = 0; s < 2; ++s) {
                const std::size_t n = i + static_cast<std::size_t>(s);
                Point a{p, n, i, g[n], base.x[p * K + n], base.y[p * K + n], base.z[k], u};
                Point b = a;
                b.v = ue;
                F->db[s][k] = cs.b(b) - cs.b(a);
                F->df[s][k] = cs.f(b) - cs.f(a);
                F->dg[s][k] = cs.g(b) - cs.g(a);
            }
        }
    return F;
}

/// Linearized system (variational equation) around `base`:
///   dx1 = [b_x x1 + b_y y1 + db]dt + [sigma_x x1 + sigma_y y1 + sigma_z z1]dB_L,
///  -dy1 = [f_x x1 + f_y y1 + df]dt - z1 dB_L,  x1(0) = 0, y1(T) = phi_x(x(T)) x1(T).
/// The forcing db, df is taken at the base state.
inline FbsdeProblem build_variational(const CoefficientSet& cs, const FbsdeSolution& base,
                                      std::shared_ptr<const Forcing> F) {
    require_control_form(cs);
    const auto G = freeze_gradients(cs, base);
    FbsdeProblem var;
    var.coeffs.name = cs.name + "/variational";
    var.coeffs.b = Coefficient(kControlled, [G, F](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return G->bx[s][k] * P.x + G->by[s][k] * P.y + F->db[s][k];
    });
    var.coeffs.sigma = Coefficient(kNoise, [G](const Point& P) {
        const std::size_t k = G->at(P);
        return G->sx[k] * P.x + G->sy[k] * P.y + G->sz[k] * P.z;
    });
    var.coeffs.f = Coefficient(kControlled, [G, F](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return G->fx[s][k] * P.x + G->fy[s][k] * P.y + F->df[s][k];
    });
    var.coeffs.phi = Coefficient(arg_x, [G](const Point& P) { return G->phi_x[P.path] * P.x; });
    var.x0 = 0.0;
    return var;
}

inline FbsdeSolution solve_variational_equation(const CoefficientSet& cs, const FbsdeSolution& base,
                                                const ControlProcess& perturbed, const Ensemble& ens,
                                                SolverOptions opt = {}) {
    const auto F = spike_forcing(cs, base, perturbed, ens);
    const FbsdeProblem var = build_variational(cs, base, F);
    opt.features = std::make_shared<const std::vector<double>>(base.x);
    return solve_fbsde(var, ens, opt);
}

/// Left side of the variational inequality:
/// E int [g_x x1 + g_y y1 + g(u^eps) - g(u)] dt + E[h_{T,x} x1(T)] + E[gamma_y y1(0)],
/// returned as per-path samples (y1(0) enters through its pathwise sample).
inline std::vector<double> variational_inequality_samples(const CoefficientSet& cs, const FbsdeSolution& base,
                                                          const FbsdeSolution& var, const Forcing& F) {
    const auto G = freeze_gradients(cs, base);
    const TimeGrid& g = *base.grid;
    const std::size_t N = g.steps(), K = N + 1;
    std::vector<double> out(base.paths);
    for (std::size_t p = 0; p < base.paths; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = p * N + i;
            double ends = 0.0;
            for (int s = 0; s < 2; ++s) {
                const std::size_t n = p * K + i + static_cast<std::size_t>(s);
                ends += G->gx[s][k] * var.x[n] + G->gy[s][k] * var.y[n] + F.dg[s][k];
            }
            acc += 0.5 * ends * g.dt(i);
        }
        acc += G->hT_x[p] * var.x[p * K + N] + G->gamma_y[p] * var.y_path[p * K];
        out[p] = acc;
    }
    return out;
}

inline double variational_inequality_lhs(const CoefficientSet& cs, const FbsdeSolution& base,
                                         const FbsdeSolution& var, const Forcing& F) {
    return mean_of(variational_inequality_samples(cs, base, var, F));
}

struct DualityCheck {
    Estimate lhs;         ///< E[h_{T,x} x1(T) + gamma_y y1(0)]
    Estimate rhs;         ///< E int {-p df + q db - (g_x x1 + g_y y1)} dt
    Estimate difference;  ///< paired per-path difference
    [[nodiscard]] bool within(double k) const { return std::abs(difference.mean) <= k * difference.se; }
};

/// Both sides of the adjoint pairing, computed independently per path.
inline DualityCheck duality_identity(const CoefficientSet& cs, const FbsdeSolution& base, const FbsdeSolution& var,
                                     const AdjointSolution& adj, const Forcing& F) {
    const auto G = freeze_gradients(cs, base);
    const TimeGrid& g = *base.grid;
    const std::size_t M = base.paths, N = g.steps(), K = N + 1;
    std::vector<double> l(M), r(M), d(M);
    for (std::size_t p = 0; p < M; ++p) {
        l[p] = G->hT_x[p] * var.x[p * K + N] + G->gamma_y[p] * var.y_path[p * K];
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t k = p * N + i;
            double ends = 0.0;
            for (int s = 0; s < 2; ++s) {
                const std::size_t n = p * K + i + static_cast<std::size_t>(s);
                ends += -adj.x[n] * F.df[s][k] + adj.y[n] * F.db[s][k] -
                        (G->gx[s][k] * var.x[n] + G->gy[s][k] * var.y[n]);
            }
            acc += 0.5 * ends * g.dt(i);
        }
        r[p] = acc;
        d[p] = l[p] - r[p];
    }
    return {estimate(l), estimate(r), estimate(d)};
}

/// Fitted order classes: second moments O(eps) (checked at eps^{3/2}), fourth
/// moments O(eps^3) and remainders o(eps^2).
struct SpikeQuantity {
    std::string name;
    double required_slope = 0.0;
    std::vector<double> values;  ///< one per epsilon
    LogLogFit fit;
    [[nodiscard]] bool censored() const { return !fit.valid(); }
    [[nodiscard]] bool pass() const { return censored() || fit.slope >= required_slope; }
};

struct SpikeReport {
    double tau = 0.0;
    std::vector<double> eps;
    std::string donor;
    std::vector<SpikeQuantity> quantities;
    std::vector<double> vi_lhs;               ///< variational-inequality LHS per eps
    std::vector<DualityCheck> duality;        ///< per eps
    double censor_floor = 1e-20;

    [[nodiscard]] const SpikeQuantity& quantity(const std::string& n) const {
        for (const auto& q : quantities)
            if (q.name == n) return q;
        fail(ErrorKind::domain, "no spike quantity named '" + n + "'");
    }
};

/// Smallest accepted max(eps) / min(eps); {0.02, ..., 0.16} spans exactly 8.
inline constexpr double kMinEpsSpan = 8.0;

struct SpikeSetup {
    FbsdeProblem problem;  ///< model, base control u and x0
    ControlProcess donor;
    double tau = 0.4;
    std::vector<double> eps{0.02, 0.04, 0.08, 0.16};
    double censor_floor = 1e-20;
};

namespace detail {
inline double integral_dt(const TimeGrid& g, const std::vector<double>& node_values) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.steps(); ++i) acc += 0.5 * (node_values[i] + node_values[i + 1]) * g.dt(i);
    return acc;
}
}  // namespace detail

/// Runs the base, perturbed and variational solves for every eps on one
/// ensemble (common random numbers, common regression design) and fits the
/// log-log slopes of every measured quantity.
inline SpikeReport estimate_orders(const SpikeSetup& setup, const Ensemble& ens, const SolverOptions& opt) {
    if (setup.eps.size() < 4) fail(ErrorKind::domain, "order estimation needs at least 4 epsilon values");
    const auto [emin, emax] = std::minmax_element(setup.eps.begin(), setup.eps.end());
    if (!(*emin > 0.0) || *emax < kMinEpsSpan * *emin * (1.0 - 1e-12))
        fail(ErrorKind::domain, "epsilon values must be positive and span a factor of at least 8");
    const CoefficientSet& cs = setup.problem.coeffs;
    const TimeGrid& g = *ens.grid;
    const std::size_t M = ens.paths.size(), N = g.steps(), K = N + 1;

    const FbsdeSolution base = solve_fbsde(setup.problem, ens, opt);
    SolverOptions shared = opt;
    shared.features = std::make_shared<const std::vector<double>>(base.x);
    const AdjointSolution adj = solve_fbsde(build_adjoint(cs, base), ens, shared);

    SpikeReport rep;
    rep.tau = setup.tau;
    rep.eps = setup.eps;
    // Squared differences of solves converged to `tol` are unresolved below
    // roughly tol^2, so the floor never sits under that resolution.
    rep.censor_floor = std::max(setup.censor_floor, 100.0 * opt.tol * opt.tol);
    const char* names[] = {"int_E_x1_sq",   "int_E_y1_sq",   "int_E_z1_sq_dL", "sup_E_x1_sq",
                           "sup_E_y1_sq",   "sup_E_x1_4",    "sup_E_y1_4",     "rem_sup_E_x_sq",
                           "rem_sup_E_y_sq", "rem_int_E_z_sq_dL"};
    // The eps^{3/2} and eps^3 bounds imply the O(eps) ones on the same data.
    const double required[] = {1.4, 1.4, 1.4, 1.4, 1.4, 2.7, 2.7, 1.9, 1.9, 1.9};
    for (int q = 0; q < 10; ++q) rep.quantities.push_back({names[q], required[q], {}, {}});

    for (double eps : setup.eps) {
        const ControlProcess ue = spike_perturb(setup.problem.control, setup.donor, setup.tau, eps, g.horizon());
        FbsdeProblem pert = setup.problem;
        pert.control = ue;
        const FbsdeSolution xe = solve_fbsde(pert, ens, shared);
        const auto F = spike_forcing(cs, base, ue, ens);
        const FbsdeSolution var = solve_fbsde(build_variational(cs, base, F), ens, shared);

        std::vector<double> x2(K), y2(K), x4(K), y4(K), rx(K), ry(K);
        double z2 = 0.0, rz = 0.0;
        for (std::size_t i = 0; i < K; ++i) {
            double a = 0, b = 0, c = 0, d = 0, e = 0, f = 0;
            for (std::size_t p = 0; p < M; ++p) {
                const std::size_t n = p * K + i;
                const double x1 = var.x[n], y1 = var.y[n];
                a += x1 * x1;
                b += y1 * y1;
                c += x1 * x1 * x1 * x1;
                d += y1 * y1 * y1 * y1;
                const double tx = xe.x[n] - base.x[n] - x1, ty = xe.y[n] - base.y[n] - y1;
                e += tx * tx;
                f += ty * ty;
            }
            const double m = static_cast<double>(M);
            x2[i] = a / m;
            y2[i] = b / m;
            x4[i] = c / m;
            y4[i] = d / m;
            rx[i] = e / m;
            ry[i] = f / m;
        }
        for (std::size_t p = 0; p < M; ++p)
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t k = p * N + i;
                const double dL = ens.paths[p].dL[i];
                const double tz = xe.z[k] - base.z[k] - var.z[k];
                z2 += var.z[k] * var.z[k] * dL;
                rz += tz * tz * dL;
            }
        z2 /= static_cast<double>(M);
        rz /= static_cast<double>(M);
        const double vals[] = {detail::integral_dt(g, x2),
                               detail::integral_dt(g, y2),
                               z2,
                               *std::max_element(x2.begin(), x2.end()),
                               *std::max_element(y2.begin(), y2.end()),
                               *std::max_element(x4.begin(), x4.end()),
                               *std::max_element(y4.begin(), y4.end()),
                               *std::max_element(rx.begin(), rx.end()),
                               *std::max_element(ry.begin(), ry.end()),
                               rz};
        for (int q = 0; q < 10; ++q) rep.quantities[static_cast<std::size_t>(q)].values.push_back(vals[q]);
        rep.vi_lhs.push_back(variational_inequality_lhs(cs, base, var, *F));
        rep.duality.push_back(duality_identity(cs, base, var, adj, *F));
    }
    for (auto& q : rep.quantities) q.fit = loglog_fit(rep.eps, q.values, rep.censor_floor);
    return rep;
}

inline nlohmann::json to_json(const SpikeReport& r) {
    nlohmann::json j;
    j["tau"] = r.tau;
    j["eps"] = r.eps;
    j["censor_floor"] = r.censor_floor;
    j["variational_inequality_lhs"] = r.vi_lhs;
    nlohmann::json qs = nlohmann::json::array();
    for (const auto& q : r.quantities) {
        nlohmann::json e{{"name", q.name}, {"values", q.values}, {"required_slope", q.required_slope},
                         {"censored", q.censored()}, {"pass", q.pass()}};
        if (!q.censored()) {
            e["slope"] = q.fit.slope;
            e["r2"] = q.fit.r2;
        }
        qs.push_back(e);
    }
    j["quantities"] = qs;
    nlohmann::json d = nlohmann::json::array();
    for (const auto& c : r.duality)
        d.push_back({{"lhs", c.lhs.mean}, {"lhs_se", c.lhs.se}, {"rhs", c.rhs.mean}, {"rhs_se", c.rhs.se},
                     {"difference", c.difference.mean}, {"difference_se", c.difference.se}, {"within_3se", c.within(3.0)}});
    j["duality"] = d;
    return j;
}

/// CSV columns: quantity,epsilon,value,slope,r2 (slope/r2 empty when censored).
inline void write_slope_csv(std::ostream& os, const SpikeReport& r, const std::string& config_hash = {}) {
    if (!config_hash.empty()) os << "# config_hash=" << config_hash << '\n';
    os << "quantity,epsilon,value,slope,r2\n";
    for (const auto& q : r.quantities)
        for (std::size_t e = 0; e < r.eps.size(); ++e) {
            os << q.name << ',' << io::fmt(r.eps[e]) << ',' << io::fmt(q.values[e]) << ',';
            if (!q.censored()) os << io::fmt(q.fit.slope) << ',' << io::fmt(q.fit.r2);
            else os << ',';
            os << '\n';
        }
}

}  // namespace subdiff
