#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "subdiff/casestudy.hpp"

using namespace subdiff;

namespace {

CashStudyConfig small(std::size_t paths = 300, std::size_t N = 50) {
    CashStudyConfig c;
    c.paths = paths;
    c.N = N;
    c.solver.tol = 1e-10;
    c.solver.picard_max = 200;
    return c;
}

}  // namespace

TEST(CashOracle, ShootingMatchesMatrixExponential) {
    const LinearModelSpec s;
    const GridPtr g = make_grid(1.0, 100);
    const BvpSolution adj = cash_adjoint_oracle(s, g);
    const auto ref = oracle::cash_adjoint(s.m1, s.m2, s.n1, s.a_slope, g->nodes());
    const BvpSolution st = cash_state_oracle(s, 1.0, ControlProcess::constant(0.7), g);
    const auto sref = oracle::cash_state(s.m1, s.m2, s.n1, s.c1, s.c2, s.a_slope, 1.0, 0.7, g->nodes());
    for (std::size_t i = 0; i < g->size(); ++i) {
        EXPECT_NEAR(adj.u1[i], ref.u1[i], 1e-11);
        EXPECT_NEAR(adj.u2[i], ref.u2[i], 1e-11);
        EXPECT_NEAR(st.u1[i], sref.u1[i], 1e-11);
        EXPECT_NEAR(st.u2[i], sref.u2[i], 1e-11);
    }
    EXPECT_EQ(adj.u1.front(), 1.0);
    EXPECT_NEAR(adj.u2.back(), -s.a_slope * adj.u1.back(), 1e-14);
}

TEST(CashOracle, NonDefaultParameters) {
    LinearModelSpec s;
    s.m1 = 0.7;
    s.m2 = 1.3;
    s.n1 = 0.05;
    s.a_slope = 2.0;
    const GridPtr g = make_grid(3.0, 60);
    const BvpSolution adj = cash_adjoint_oracle(s, g);
    const auto ref = oracle::cash_adjoint(s.m1, s.m2, s.n1, s.a_slope, g->nodes());
    for (std::size_t i = 0; i < g->size(); ++i) EXPECT_NEAR(adj.u2[i], ref.u2[i], 1e-9);
}

TEST(CashOracle, RequiresLinearModel) {
    LinearModelSpec s;
    s.beta = 0.5;
    EXPECT_THROW(cash_adjoint_oracle(s, make_grid(1.0, 10)), Error);
    s.beta = 0.0;
    s.sigma_x = 0.1;
    EXPECT_THROW(cash_adjoint_oracle(s, make_grid(1.0, 10)), Error);
}

TEST(OptimalControl, FirstOrderConditionAndQuadraticMargin) {
    const LinearModelSpec s;
    const GridPtr g = make_grid(1.0, 100);
    const BvpSolution adj = cash_adjoint_oracle(s, g);
    const ControlProcess u = optimal_cash_control(adj, s);
    EXPECT_LT(first_order_residual(adj, s, u), 1e-10);
    const BvpSolution st = cash_state_oracle(s, 1.0, u, g);
    EXPECT_LT(quadratic_margin_error(cash_model(s), st, adj, u, probe_grid(-2, 2, 41)), 1e-10);
    // A shifted control violates both.
    const auto shifted = ControlProcess::mapped(u, [](double v) { return v + 0.1; }, {});
    EXPECT_NEAR(first_order_residual(adj, s, shifted), 0.1, 1e-10);
}

TEST(Comparisons, ParsesNames) {
    const LinearModelSpec s;
    const auto ustar = ControlProcess::constant(0.25);
    const ControlSite site{0, 0, 0.5, 0.0, 0.0};
    EXPECT_EQ(comparison_control("u*+1", ustar, s)(site), 1.25);
    EXPECT_EQ(comparison_control("u*-0.5", ustar, s)(site), -0.25);
    EXPECT_EQ(comparison_control("u*", ustar, s)(site), 0.25);
    EXPECT_EQ(comparison_control("l", ustar, s)(site), 0.5);
    EXPECT_EQ(comparison_control("0", ustar, s)(site), 0.0);
    EXPECT_EQ(comparison_control("-1.5", ustar, s)(site), -1.5);
    try {
        comparison_control("best", ustar, s);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::config);
    }
}

TEST(CashDemo, SmallRunSatisfiesTheOptimalityChecks) {
    const CashStudyConfig c = small();
    const Ensemble ens = cash_ensemble(c);
    const CashDemo d = run_cash_demo(c, ens, probe_grid(-2, 2, 41));
    EXPECT_TRUE(d.smp.pass()) << d.smp.min_margin;
    EXPECT_LT(d.first_order, 1e-10);
    for (const auto& o : d.oracle_checks)
        for (std::size_t i = 0; i < o.mean.size(); ++i)
            EXPECT_NEAR(o.mean[i], o.oracle[i], 1e-4) << o.name << " node " << i;
    // Gap of u* + 1 is int_0^T 1/2 dt = T/2 for the quadratic Hamiltonian.
    EXPECT_NEAR(d.optimality.entry("u*+1").gap.mean, 0.5, 1e-4);
    for (const auto& e : d.optimality.entries) {
        EXPECT_GT(e.gap.mean, 0.0) << e.name;
        EXPECT_NEAR(e.gap.mean, e.identity, 1e-4) << e.name;
    }
}

TEST(CashDemo, PureDriftClockReproducesBrownianRunBitwise) {
    CashStudyConfig c = small(100, 40);
    c.levy = LevySpec::pure_drift(1.0);
    const CashDemo a = run_cash_demo(c, cash_ensemble(c), probe_grid(-2, 2, 41));
    c.classical = true;
    const CashDemo b = run_cash_demo(c, cash_ensemble(c), probe_grid(-2, 2, 41));
    EXPECT_EQ(a.trajectory.x, b.trajectory.x);
    EXPECT_EQ(a.trajectory.y, b.trajectory.y);
    EXPECT_EQ(a.trajectory.z, b.trajectory.z);
    EXPECT_EQ(a.adjoint.x, b.adjoint.x);
    EXPECT_EQ(a.adjoint.y, b.adjoint.y);
    ASSERT_EQ(a.optimality.entries.size(), b.optimality.entries.size());
    for (std::size_t k = 0; k < a.optimality.entries.size(); ++k)
        EXPECT_EQ(a.optimality.entries[k].J.mean, b.optimality.entries[k].J.mean);
}

TEST(CashDemo, NoisyModelStillMeetsTheStateOracleInMean) {
    CashStudyConfig c = small(2000, 50);
    c.model.sigma_x = 0.2;
    c.solver.tol = 1e-8;
    const Ensemble ens = cash_ensemble(c);
    const LinearModelSpec lin;
    const auto u = optimal_cash_control(cash_adjoint_oracle(lin, ens.grid), lin);
    const BvpSolution st = cash_state_oracle(c.model, c.x0, u, ens.grid);
    const FbsdeSolution sol = solve_fbsde({build_cash_model(c), u, c.x0}, ens, c.solver);
    const OracleComparison x = compare_to_oracle("x", sol.x, ens.size(), st.u1);
    EXPECT_TRUE(x.pass(4.0)) << x.max_z << " at " << x.worst_node;
}
