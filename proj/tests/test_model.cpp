#include <gtest/gtest.h>

#include <cmath>

#include "subdiff/model.hpp"

using namespace subdiff;

TEST(Model, CashCoefficientsMatchHandFormulas) {
    const LinearModelSpec s;
    const CoefficientSet cs = cash_model(s);
    const Point p{0, 0, 0, 0.3, 0.7, -0.2, 0.4, 1.1};
    EXPECT_DOUBLE_EQ(cs.b(p), -0.1 * 0.7 - 0.3 * -0.2 + 0.5 * 1.1);
    EXPECT_DOUBLE_EQ(cs.f(p), -0.1 * -0.2 + 0.2 * 0.7 + 0.5 * 1.1);
    EXPECT_DOUBLE_EQ(cs.sigma(p), -0.4 * 0.4);
    EXPECT_DOUBLE_EQ(cs.phi(p), 0.5 * 0.7);
    EXPECT_DOUBLE_EQ(cs.g(p), 0.5 * 0.6 * 0.6);
    EXPECT_DOUBLE_EQ(cs.gamma(p), 0.2);
    EXPECT_TRUE(cs.delta.is_zero());
    EXPECT_TRUE(cs.h_dL.is_zero());
    EXPECT_TRUE(cs.h_T.is_zero());
}

TEST(Model, AnalyticGradientsAgreeWithDifferences) {
    Box box;
    box.x_lo = box.y_lo = box.z_lo = box.v_lo = -2.0;
    box.x_hi = box.y_hi = box.z_hi = box.v_hi = 2.0;
    for (const auto& name : catalog_names()) EXPECT_TRUE(check_gradients(catalog_model(name), box, 300).empty()) << name;
}

TEST(Model, FiniteDifferenceFallback) {
    const Coefficient c(arg_x | arg_y, [](const Point& p) { return std::sin(p.x) * p.y * p.y; });
    const Point p{0, 0, 0, 0.0, 0.4, 1.5, 0.0, 0.0};
    const Gradient g = c.gradient(p);
    EXPECT_NEAR(g.x, std::cos(0.4) * 2.25, 1e-7);
    EXPECT_NEAR(g.y, std::sin(0.4) * 3.0, 1e-7);
    EXPECT_EQ(g.z, 0.0);
}

TEST(Model, LipschitzEstimatesApproachTheAnalyticConstants) {
    const LinearModelSpec s;
    const auto est = check_lipschitz(cash_model(s), Box{}, 2000, 3);
    auto constant = [&](const std::string& role) {
        for (const auto& e : est)
            if (e.role == role) return e.constant;
        return -1.0;
    };
    // Linear coefficients: the constant is the gradient norm.
    const double b = std::sqrt(s.m1 * s.m1 + s.n1 * s.n1 + s.c1 * s.c1);
    const double f = std::sqrt(s.m2 * s.m2 + s.m1 * s.m1 + s.c2 * s.c2);
    EXPECT_LE(constant("b"), b * (1 + 1e-9));
    EXPECT_GE(constant("b"), b * 0.999);
    EXPECT_NEAR(constant("f"), f, f * 1e-3);
    EXPECT_NEAR(constant("sigma"), s.n2, 1e-9);
    EXPECT_NEAR(constant("phi"), s.a_slope, 1e-9);
    // g = (v - l)^2 / 2 on v in [-1, 1] with l = 0.5: sup |v - l| = 1.5, plus
    // the gradient step, which may leave the box by 1e-3 * width.
    EXPECT_LE(constant("g"), 1.5 + 2e-3);
    EXPECT_GE(constant("g"), 1.45);
    EXPECT_THROW(check_lipschitz(cash_model(s), Box{}, 999), Error);
}

TEST(Model, DriftPairHoldsAtMinM2N1) {
    const LinearModelSpec s;
    const double C = std::min(s.m2, s.n1);
    const MonotonicityReport r = check_monotonicity(cash_model(s), C, Box{}, 5000);
    EXPECT_TRUE(r.drift_pair.pass);
    // lhs = -m2 dx^2 - n1 dy^2, so the sharp constant is exactly min(m2, n1).
    EXPECT_NEAR(r.drift_pair.best_constant, C, 1e-9);
    const MonotonicityReport tight = check_monotonicity(cash_model(s), C + 0.01, Box{}, 100);
    EXPECT_FALSE(tight.drift_pair.pass);
}

TEST(Model, DiffusionInequalityFailsOnTheXAxis) {
    const MonotonicityReport r = check_monotonicity(cash_model(LinearModelSpec{}), 0.2, Box{}, 1000);
    ASSERT_FALSE(r.diffusion.pass);
    ASSERT_TRUE(r.diffusion.witness.has_value());
    const Witness& w = *r.diffusion.witness;
    EXPECT_EQ(w.x1 - w.x2, 1.0);
    EXPECT_EQ(w.y1 - w.y2, 0.0);
    EXPECT_EQ(w.z1 - w.z2, 0.0);
    EXPECT_EQ(w.lhs, 0.0);
    EXPECT_DOUBLE_EQ(w.bound, -0.2);
    EXPECT_LE(r.diffusion.best_constant, 0.0);
}

TEST(Model, MonotoneCatalogModelPassesBoth) {
    const MonotonicityReport r = check_monotonicity(catalog_model("brownian-monotone"), 1.0, Box{}, 2000);
    EXPECT_TRUE(r.drift_pair.pass);
    // sigma = -z gives -dz^2 only, so the x and y axes break the diffusion form.
    EXPECT_FALSE(r.diffusion.pass);
}

TEST(Model, GradientFormMatchesQuadratic) {
    const LinearModelSpec s;
    const CoefficientSet cs = cash_model(s);
    const Point at{0, 0, 0, 0.5, 0.1, 0.2, 0.3, 0.0};
    const auto g = check_gradient_monotonicity(cs, at, 0.6, -0.8, 0.0, 0.2);
    EXPECT_NEAR(g.drift_value, -s.m2 * 0.36 - s.n1 * 0.64, 1e-12);
    EXPECT_TRUE(g.drift_pass);
    const auto d = check_gradient_monotonicity(cs, at, 1.0, 0.0, 0.0, 0.2);
    EXPECT_FALSE(d.diffusion_pass);
}

TEST(Model, InvalidSpecsAreRejected) {
    LinearModelSpec s;
    s.n1 = -0.1;
    EXPECT_THROW(cash_model(s), Error);
    try {
        catalog_model("nope");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
    Box b;
    b.x_lo = 2.0;
    EXPECT_THROW(check_monotonicity(cash_model(LinearModelSpec{}), 0.1, b, 10), Error);
    EXPECT_THROW(check_monotonicity(cash_model(LinearModelSpec{}), 0.0, Box{}, 10), Error);
}

TEST(Model, CatalogVariantsCarryTheirNames) {
    EXPECT_EQ(catalog_model("tanh-cash").name, "tanh-cash");
    EXPECT_EQ(catalog_model("noisy-cash").name, "noisy-cash");
    const CoefficientSet d = catalog_model("brownian-decoupled");
    EXPECT_TRUE(d.b.is_zero() && d.sigma.is_zero() && d.f.is_zero());
}
