#include <gtest/gtest.h>

#include <cmath>

#include "subdiff/constrained.hpp"

using namespace subdiff;

namespace {

ControlEvaluation member(const std::string& label, double J, double EG1, std::vector<double> v) {
    ControlEvaluation e;
    e.label = label;
    e.J.mean = J;
    e.EG1 = EG1;
    e.v = std::move(v);
    return e;
}

SolverOptions tight() {
    SolverOptions o;
    o.tol = 1e-10;
    o.picard_max = 200;
    return o;
}

}  // namespace

TEST(Metric, CountsMismatchedCellsWeightedByLength) {
    const GridPtr g = make_grid(1.0, 4);
    // Two paths, four cells each.
    const std::vector<double> a{0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<double> b{0, 1, 0, 0, 1, 1, 2, 2};
    EXPECT_DOUBLE_EQ(control_metric(a, b, *g), 0.25 * 0.5 + 0.25 * 0.5 + 0.25 * 0.5);
    EXPECT_EQ(control_metric(a, a, *g), 0.0);
    EXPECT_EQ(control_metric(a, b, *g), control_metric(b, a, *g));
    EXPECT_THROW(control_metric(a, std::vector<double>{1.0}, *g), Error);
}

TEST(Metric, TriangleInequalityOnRandomTables) {
    const GridPtr g = make_grid(2.0, 16);
    Engine eng = make_engine(4, 0, Stream::brownian);
    std::uniform_int_distribution<int> pick(0, 2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(48), b(48), c(48);
        for (std::size_t k = 0; k < 48; ++k) {
            a[k] = pick(eng);
            b[k] = pick(eng);
            c[k] = pick(eng);
        }
        EXPECT_LE(control_metric(a, c, *g), control_metric(a, b, *g) + control_metric(b, c, *g) + 1e-15);
        EXPECT_LE(control_metric(a, b, *g), 2.0 + 1e-15);
    }
}

TEST(Metric, SpikeDistanceIsItsWindow) {
    const GridPtr g = make_grid(1.0, 100);
    const auto u = ControlProcess::constant(0.0);
    const auto s = spike_perturb(u, ControlProcess::constant(1.0), 0.3, 0.05, 1.0);
    EXPECT_NEAR(control_metric(u, s, *g), 0.05, 1e-12);
}

TEST(Penalty, FormulaAndFeasibleReference) {
    const auto e = member("w", 2.0, 0.3, {0.0});
    EXPECT_DOUBLE_EQ(penalized_cost(e, 1.5, 0.1), std::sqrt(0.09 + 0.36));
    const auto u = member("u", 1.5, 0.0, {0.0});
    EXPECT_DOUBLE_EQ(penalized_cost(u, 1.5, 0.1), 0.1);
    EXPECT_THROW(penalized_cost(member("x", 0, 0, {}), 0.0, 0.1), Error);
}

TEST(Ekeland, SelectsCheaperPenalizedControlAndCertifies) {
    const GridPtr g = make_grid(1.0, 2);
    const double rho = 0.04;  // sqrt(rho) = 0.2
    // u feasible; w1 differs on one cell (d = 0.5) and lowers J a lot; w2 on both
    // cells (d = 1) with a small gain.
    std::vector<ControlEvaluation> fam{member("u", 1.0, 0.0, {0, 0}), member("w1", 0.5, 0.1, {1, 0}),
                                       member("w2", 0.99, 0.0, {2, 2})};
    const EkelandCertificate c = ekeland_search(fam, 0, rho, *g);
    // J_rho: u 0.04, w1 sqrt(0.01 + 0.46^2), w2 0.03. S(u) is empty because
    // 0.03 + 0.2 * 1 > 0.04, so the search stays at u.
    EXPECT_EQ(c.selected, 0u);
    EXPECT_TRUE(c.u_feasible);
    EXPECT_TRUE(c.all());
    EXPECT_NEAR(c.margin_iii, 0.0, 1e-15);

    // A member identical to u on the grid but cheaper is selected at distance 0.
    fam.push_back(member("w3", 0.97, 0.0, {0, 0}));
    const EkelandCertificate d = ekeland_search(fam, 0, rho, *g);
    EXPECT_EQ(d.selected, 3u);
    EXPECT_TRUE(d.all());
    EXPECT_NEAR(d.J_rho[3], 0.01, 1e-15);
    EXPECT_THROW(ekeland_search(fam, 9, rho, *g), Error);
    EXPECT_THROW(ekeland_search(fam, 0, 0.0, *g), Error);
}

TEST(Multipliers, ZeroConstraintsGiveUnitCostWeight) {
    const auto u = member("u", 1.0, 0.0, {0});
    const auto ue = member("ue", 1.2, 0.0, {1});
    const Multipliers m = extract_multipliers(u, ue, 1.0, 0.01);
    EXPECT_EQ(m.normalized.psi1, 0.0);
    EXPECT_EQ(m.normalized.psi2, 0.0);
    EXPECT_EQ(std::abs(m.normalized.psi3), 1.0);
    // den = J_rho(ue) + J_rho(u) = 0.21 + 0.01; psi3 = 2 * 0.01 / 0.22.
    EXPECT_NEAR(m.raw.psi3, 0.02 / 0.22, 1e-15);
}

TEST(Multipliers, HandComputedTriple) {
    auto u = member("u", 1.0, 0.3, {0});
    u.EG0 = -0.4;
    const auto ue = member("ue", 1.0, 0.0, {1});
    const double rho = 0.0;
    // J_rho(u) = 0.5, J_rho(ue) = 0; den = 0.5.
    const Multipliers m = extract_multipliers(u, ue, 1.0, rho);
    EXPECT_NEAR(m.raw.psi1, 1.2, 1e-15);
    EXPECT_NEAR(m.raw.psi2, -1.6, 1e-15);
    EXPECT_NEAR(m.raw.psi3, 0.0, 1e-15);
    EXPECT_NEAR(m.normalized.norm(), 1.0, 1e-15);
    EXPECT_NEAR(m.normalized.psi1, 0.6, 1e-15);
    try {
        extract_multipliers(member("u", 1, 0, {0}), member("e", 1, 0, {0}), 1.0, 0.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::degenerate_penalty);
    }
}

TEST(ConstrainedAdjoint, ReducesBitwiseWithoutConstraints) {
    const CoefficientSet cs = cash_model(LinearModelSpec{});
    const GridPtr g = make_grid(1.0, 30);
    const Ensemble e = simulate_ensemble(LevySpec::compound_poisson(1.0, 1.0, 0.5), g, 0.0, 5, 100);
    const FbsdeSolution traj = solve_fbsde({cs, ControlProcess::constant(0.4), 1.0}, e, tight());
    const AdjointSolution plain = solve_adjoint(cs, traj, e, tight());
    SolverOptions shared = tight();
    shared.features = std::make_shared<const std::vector<double>>(traj.x);
    const AdjointSolution weighted =
        solve_fbsde(build_constrained_adjoint(cs, traj, ConstraintSpec{}, MultiplierTriple{}), e, shared);
    EXPECT_EQ(plain.x, weighted.x);
    EXPECT_EQ(plain.y, weighted.y);
    EXPECT_EQ(plain.z, weighted.z);
}

// p(0) = -psi2 G0_y - psi3 gamma_y and q(T) gains psi1 G1_x; with G1 = x,
// G0 = y and the cash model, psi = (a, b, c) shifts p(0) = c - b.
TEST(ConstrainedAdjoint, MultipliersEnterBoundaryConditions) {
    const CoefficientSet cs = cash_model(LinearModelSpec{});
    const GridPtr g = make_grid(1.0, 20);
    const Ensemble e = brownian_ensemble(g, 1, 20);
    const FbsdeSolution traj = solve_fbsde({cs, ControlProcess::constant(0.4), 1.0}, e, tight());
    const MultiplierTriple psi{0.3, 0.2, 0.5};
    const FbsdeProblem adj = build_constrained_adjoint(cs, traj, ConstraintSpec::affine(1.0, 0.0, 1.0, 0.0), psi);
    EXPECT_DOUBLE_EQ(adj.x0, 0.5 - 0.2);
    const Point end{0, 20, 19, 1.0, 2.0, 0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(adj.coeffs.phi(end), -0.5 * 2.0 + 0.3);
}

TEST(ConstrainedSmp, WeightedHamiltonianAndResiduals) {
    const LinearModelSpec s;
    const CoefficientSet cs = cash_model(s);
    const GridPtr g = make_grid(1.0, 20);
    const Ensemble e = brownian_ensemble(g, 2, 10);
    const FbsdeSolution traj = solve_fbsde({cs, ControlProcess::constant(0.4), 1.0}, e, tight());
    const MultiplierTriple psi{0.0, 0.0, 0.5};
    SolverOptions shared = tight();
    shared.features = std::make_shared<const std::vector<double>>(traj.x);
    const ConstraintSpec con = ConstraintSpec::affine(1.0, -1.0, 0.0, 0.0);
    const AdjointSolution adj = solve_fbsde(build_constrained_adjoint(cs, traj, con, psi), e, shared);
    // Minimizer of q b - p f + psi3 g: v = l + (c2 p - c1 q) / psi3.
    ControlProcess::Table t(10, std::vector<double>(20));
    for (std::size_t p = 0; p < 10; ++p)
        for (std::size_t i = 0; i < 20; ++i)
            t[p][i] = s.l_const + (s.c2 * adj.x[p * 21 + i] - s.c1 * adj.y[p * 21 + i]) / psi.psi3;
    const auto r = check_constrained_smp(cs, traj, adj, ControlProcess::tabulated(t), probe_grid(-2, 2, 41), e,
                                         1e-9, con, psi);
    EXPECT_TRUE(r.smp.pass());
    double mean_x = 0.0;
    for (std::size_t p = 0; p < 10; ++p) mean_x += traj.x[p * 21 + 20];
    EXPECT_NEAR(r.EG1, mean_x / 10.0 - 1.0, 1e-15);
    EXPECT_EQ(r.EG0, 0.0);
}
