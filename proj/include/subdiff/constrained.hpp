#pragma once

// State-constrained problem: penalized cost J_rho, the Ekeland metric on
// controls, finite-family Ekeland selection, multiplier extraction and the
// multiplier-weighted adjoint.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/control.hpp"
#include "subdiff/solver.hpp"

namespace subdiff {

/// Equality constraints E[G1(x(T))] = 0 and E[G0(y(0))] = 0. An empty map is
/// the zero constraint.
struct ConstraintSpec {
    std::function<double(double)> G1, G1_x, G0, G0_y;

    /// G1(x) = a1 x + b1, G0(y) = a0 y + b0; all-zero coefficients give the
    /// zero constraint.
    static ConstraintSpec affine(double a1, double b1, double a0, double b0) {
        ConstraintSpec c;
        if (a1 != 0.0 || b1 != 0.0) {
            c.G1 = [a1, b1](double x) { return a1 * x + b1; };
            c.G1_x = [a1](double) { return a1; };
        }
        if (a0 != 0.0 || b0 != 0.0) {
            c.G0 = [a0, b0](double y) { return a0 * y + b0; };
            c.G0_y = [a0](double) { return a0; };
        }
        return c;
    }

    [[nodiscard]] double g1(double x) const { return G1 ? G1(x) : 0.0; }
    [[nodiscard]] double g1_x(double x) const { return G1_x ? G1_x(x) : 0.0; }
    [[nodiscard]] double g0(double y) const { return G0 ? G0(y) : 0.0; }
    [[nodiscard]] double g0_y(double y) const { return G0_y ? G0_y(y) : 0.0; }
};

struct MultiplierTriple {
    double psi1 = 0.0, psi2 = 0.0, psi3 = 1.0;
    [[nodiscard]] double norm() const { return std::sqrt(psi1 * psi1 + psi2 * psi2 + psi3 * psi3); }
};

/// Everything J_rho needs about one control.
struct ControlEvaluation {
    std::string label;
    Estimate J;
    double EG1 = 0.0, EG0 = 0.0;
    std::vector<double> v;  ///< realized control [path * N + cell]
};

inline ControlEvaluation evaluate_control(const std::string& label, const FbsdeSolution& s, const CoefficientSet& cs,
                                          const ConstraintSpec& con) {
    if (s.paths == 0 || s.x.empty()) fail(ErrorKind::dependency, "control '" + label + "' has no solved trajectory");
    ControlEvaluation e;
    e.label = label;
    e.J = cost(s, cs);
    const std::size_t K = s.grid->size();
    double a = 0.0, b = 0.0;
    for (std::size_t p = 0; p < s.paths; ++p) {
        a += con.g1(s.x[p * K + K - 1]);
        b += con.g0(s.y[p * K]);
    }
    e.EG1 = a / static_cast<double>(s.paths);
    e.EG0 = b / static_cast<double>(s.paths);
    e.v = s.v;
    return e;
}

/// J_rho(v) = {|E G1|^2 + |E G0|^2 + [J(v) - J(u) + rho]^2}^{1/2}.
inline double penalized_cost(const ControlEvaluation& v, double J_u, double rho) {
    if (!(rho >= 0.0)) fail(ErrorKind::domain, "rho must be >= 0");
    if (v.v.empty()) fail(ErrorKind::dependency, "penalized cost needs a solved control");
    const double gap = v.J.mean - J_u + rho;
    return std::sqrt(v.EG1 * v.EG1 + v.EG0 * v.EG0 + gap * gap);
}

inline constexpr double kControlMismatch = 1e-12;

/// d(v1, v2) = E mu{t : v1(t) != v2(t)} on the grid: sum_i dt_i P(v1_i != v2_i).
inline double control_metric(const std::vector<double>& a, const std::vector<double>& b, const TimeGrid& g) {
    const std::size_t N = g.steps();
    if (a.size() != b.size() || a.size() % N != 0) fail(ErrorKind::domain, "control tables do not match the grid");
    const std::size_t M = a.size() / N;
    double d = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        std::size_t differ = 0;
        for (std::size_t p = 0; p < M; ++p)
            if (std::abs(a[p * N + i] - b[p * N + i]) > kControlMismatch) ++differ;
        d += g.dt(i) * static_cast<double>(differ) / static_cast<double>(M);
    }
    return d;
}

/// Open-loop controls compared on `paths` sampled rows.
inline double control_metric(const ControlProcess& a, const ControlProcess& b, const TimeGrid& g,
                             std::size_t paths = 1) {
    auto flat = [&](const ControlProcess& c) {
        std::vector<double> out;
        for (const auto& row : sample_open_loop(c, g, paths)) out.insert(out.end(), row.begin(), row.end());
        return out;
    };
    return control_metric(flat(a), flat(b), g);
}

struct EkelandCertificate {
    std::size_t selected = 0;
    std::vector<std::size_t> trail;  ///< visited family indices
    std::vector<double> J_rho;       ///< per family member
    double rho = 0.0;
    bool u_feasible = false;         ///< J_rho(u) == rho
    bool clause_i = false;           ///< J_rho(u_rho) <= J_rho(u)
    bool clause_ii = false;          ///< d(u_rho, u) <= sqrt(rho)
    bool clause_iii = false;         ///< J_rho(u_rho) <= J_rho(w) + sqrt(rho) d(w, u_rho) for all w
    double margin_i = 0.0, margin_ii = 0.0, margin_iii = 0.0;
    std::size_t iii_worst = 0;
    [[nodiscard]] bool all() const { return clause_i && clause_ii && clause_iii; }
};

/// Ekeland selection over a finite family: starting from u, move to the J_rho
/// minimizer of S(w) = {w' : J_rho(w') + sqrt(rho) d(w', w) < J_rho(w)} until S
/// is empty, then certify clauses i) to iii) by enumeration.
inline EkelandCertificate ekeland_search(const std::vector<ControlEvaluation>& family, std::size_t u_index, double rho,
                                         const TimeGrid& g) {
    if (family.empty()) fail(ErrorKind::domain, "Ekeland family is empty");
    if (u_index >= family.size()) fail(ErrorKind::domain, "reference control is not in the family");
    if (!(rho > 0.0)) fail(ErrorKind::domain, "rho must be > 0");
    const std::size_t n = family.size();
    const double J_u = family[u_index].J.mean, root = std::sqrt(rho);
    EkelandCertificate c;
    c.rho = rho;
    for (const auto& w : family) c.J_rho.push_back(penalized_cost(w, J_u, rho));
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) d[a][b] = d[b][a] = control_metric(family[a].v, family[b].v, g);

    std::size_t w = u_index;
    c.trail.push_back(w);
    for (std::size_t step = 0; step < n; ++step) {
        std::size_t best = n;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == w || !(c.J_rho[k] + root * d[k][w] < c.J_rho[w])) continue;
            if (best == n || c.J_rho[k] < c.J_rho[best]) best = k;
        }
        if (best == n) break;
        w = best;
        c.trail.push_back(w);
    }
    c.selected = w;
    c.u_feasible = std::abs(c.J_rho[u_index] - rho) <= 1e-12 * std::max(1.0, rho);
    c.margin_i = c.J_rho[u_index] - c.J_rho[w];
    c.clause_i = c.margin_i >= 0.0;
    c.margin_ii = root - d[w][u_index];
    c.clause_ii = c.margin_ii >= 0.0;
    c.margin_iii = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
        const double m = c.J_rho[k] + root * d[w][k] - c.J_rho[w];
        if (m < c.margin_iii) {
            c.margin_iii = m;
            c.iii_worst = k;
        }
    }
    c.clause_iii = c.margin_iii >= 0.0;
    return c;
}

inline nlohmann::json to_json(const EkelandCertificate& c, const std::vector<ControlEvaluation>& family) {
    nlohmann::json j{{"rho", c.rho},
                     {"selected", family[c.selected].label},
                     {"u_feasible", c.u_feasible},
                     {"clause_i", c.clause_i},
                     {"clause_ii", c.clause_ii},
                     {"clause_iii", c.clause_iii},
                     {"margin_i", c.margin_i},
                     {"margin_ii", c.margin_ii},
                     {"margin_iii", c.margin_iii},
                     {"J_rho", c.J_rho}};
    nlohmann::json trail = nlohmann::json::array();
    for (auto k : c.trail) trail.push_back(family[k].label);
    j["trail"] = trail;
    return j;
}

struct Multipliers {
    MultiplierTriple raw;         ///< psi^eps_rho before normalization
    double raw_norm = 0.0;
    MultiplierTriple normalized;  ///< raw / |raw|
};

/// psi1 = 2E[G1]/(J_rho^eps + J_rho), psi2 = 2E[G0]/(...), psi3 = 2[J(u_rho) - J(u) + rho]/(...).
inline Multipliers extract_multipliers(const ControlEvaluation& u_rho, const ControlEvaluation& u_rho_eps,
                                       double J_u, double rho) {
    const double den = penalized_cost(u_rho_eps, J_u, rho) + penalized_cost(u_rho, J_u, rho);
    if (!(den > 0.0))
        fail(ErrorKind::degenerate_penalty, "J_rho(u_rho^eps) + J_rho(u_rho) vanishes; constraints and gap are all 0");
    Multipliers m;
    m.raw = {2.0 * u_rho.EG1 / den, 2.0 * u_rho.EG0 / den, 2.0 * (u_rho.J.mean - J_u + rho) / den};
    m.raw_norm = m.raw.norm();
    if (!(m.raw_norm > 0.0)) fail(ErrorKind::degenerate_penalty, "multiplier triple vanishes");
    m.normalized = {m.raw.psi1 / m.raw_norm, m.raw.psi2 / m.raw_norm, m.raw.psi3 / m.raw_norm};
    return m;
}

/// Multiplier-weighted adjoint:
///   dp = [f_y p - b_y q - psi3 g_y]dt - sigma_y k dL - sigma_z k dB_L,
///  -dq = [-f_x p + b_x q + psi3 g_x]dt + sigma_x k dL - k dB_L,
///   p(0) = -G0_y(y(0)) psi2 - gamma_y(y(0)) psi3,
///   q(T) = G1_x(x(T)) psi1 - phi_x(x(T)) p(T) + h_{T,x}(x(T)) psi3.
/// Terms with a zero multiplier are dropped rather than multiplied by 0.
inline FbsdeProblem build_constrained_adjoint(const CoefficientSet& cs, const FbsdeSolution& traj,
                                              const ConstraintSpec& con, const MultiplierTriple& psi) {
    require_control_form(cs);
    const auto G = freeze_gradients(cs, traj);
    const double w = psi.psi3;
    const std::size_t K = traj.grid->size();
    auto g1x = std::make_shared<std::vector<double>>(traj.paths, 0.0);
    double g0y = 0.0;
    for (std::size_t p = 0; p < traj.paths; ++p) {
        (*g1x)[p] = con.g1_x(traj.x[p * K + K - 1]);
        g0y += con.g0_y(traj.y[p * K]);
    }
    g0y /= static_cast<double>(traj.paths);
    FbsdeProblem adj;
    adj.coeffs.name = cs.name + "/constrained-adjoint";
    adj.coeffs.b = Coefficient(kControlled, [G, w](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return G->fy[s][k] * P.x - G->by[s][k] * P.y - w * G->gy[s][k];
    });
    adj.coeffs.delta = Coefficient(kNoise, [G](const Point& P) { return -G->sy[G->at(P)] * P.z; });
    adj.coeffs.sigma = Coefficient(kNoise, [G](const Point& P) { return -G->sz[G->at(P)] * P.z; });
    adj.coeffs.f = Coefficient(kControlled, [G, w](const Point& P) {
        const int s = FrozenGradients::side(P);
        const std::size_t k = G->at(P);
        return -G->fx[s][k] * P.x + G->bx[s][k] * P.y + w * G->gx[s][k];
    });
    adj.coeffs.h_dL = Coefficient(kNoise, [G](const Point& P) { return G->sx[G->at(P)] * P.z; });
    const double psi1 = psi.psi1;
    adj.coeffs.phi = Coefficient(arg_x, [G, w, psi1, g1x](const Point& P) {
        double q = -G->phi_x[P.path] * P.x + w * G->hT_x[P.path];
        if (psi1 != 0.0) q += (*g1x)[P.path] * psi1;
        return q;
    });
    adj.x0 = -(w * mean_of(G->gamma_y));
    if (psi.psi2 != 0.0) adj.x0 -= g0y * psi.psi2;
    return adj;
}

struct ConstrainedSmpReport {
    SmpReport smp;
    double EG1 = 0.0, EG0 = 0.0;  ///< constraint residuals of the candidate
    MultiplierTriple psi;
};

/// check_smp with the multiplier-weighted Hamiltonian q b - p f + psi3 g,
/// reported together with the constraint residuals.
inline ConstrainedSmpReport check_constrained_smp(const CoefficientSet& cs, const FbsdeSolution& traj,
                                                  const AdjointSolution& adj, const ControlProcess& u,
                                                  const std::vector<double>& probes, const Ensemble& ens, double tol,
                                                  const ConstraintSpec& con, const MultiplierTriple& psi) {
    ConstrainedSmpReport r;
    r.smp = check_smp(cs, traj, adj, u, probes, ens, tol, psi.psi3);
    const ControlEvaluation e = evaluate_control("candidate", traj, cs, con);
    r.EG1 = e.EG1;
    r.EG0 = e.EG0;
    r.psi = psi;
    return r;
}

}  // namespace subdiff
