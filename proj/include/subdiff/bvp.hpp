#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "subdiff/error.hpp"
#include "subdiff/grid.hpp"
#include "subdiff/io.hpp"

namespace subdiff {

using Vec2 = std::array<double, 2>;

/// Linear two-point problem for u = (u1, u2):
///   u' = A u + F(t, cell),  u1(0) = initial,  u2(T) = slope * u1(T) + offset.
/// F receives the index of the grid cell being integrated so that forcing that
/// is piecewise constant per cell is never sampled across a cell boundary.
struct LinearBvp {
    std::array<std::array<double, 2>, 2> A{};
    std::function<Vec2(double, std::size_t)> forcing;
    double initial = 0.0;
    double slope = 0.0;
    double offset = 0.0;
};

struct BvpSolution {
    GridPtr grid;
    std::vector<double> u1, u2;  ///< values at the grid nodes
    double shooting_derivative = 0.0;
    double terminal_residual = 0.0;

    /// Value at an arbitrary time: one partial RK4 step from the nearest
    /// fine node on the left.
    [[nodiscard]] Vec2 at(double t) const;

    std::size_t substeps = 0;
    LinearBvp problem;
    std::vector<Vec2> fine;  ///< all substep states, (N * substeps + 1)
};

namespace detail {

inline Vec2 rhs(const LinearBvp& b, double t, std::size_t cell, const Vec2& u) {
    Vec2 f = b.forcing ? b.forcing(t, cell) : Vec2{0.0, 0.0};
    return {b.A[0][0] * u[0] + b.A[0][1] * u[1] + f[0], b.A[1][0] * u[0] + b.A[1][1] * u[1] + f[1]};
}

inline Vec2 rk4(const LinearBvp& b, double t, double h, std::size_t cell, const Vec2& u) {
    auto add = [](const Vec2& a, const Vec2& k, double s) { return Vec2{a[0] + s * k[0], a[1] + s * k[1]}; };
    const Vec2 k1 = rhs(b, t, cell, u);
    const Vec2 k2 = rhs(b, t + 0.5 * h, cell, add(u, k1, 0.5 * h));
    const Vec2 k3 = rhs(b, t + 0.5 * h, cell, add(u, k2, 0.5 * h));
    const Vec2 k4 = rhs(b, t + h, cell, add(u, k3, h));
    return {u[0] + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
            u[1] + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])};
}

inline std::vector<Vec2> integrate(const LinearBvp& b, const TimeGrid& g, std::size_t sub, double u2_start) {
    std::vector<Vec2> out;
    out.reserve(g.steps() * sub + 1);
    Vec2 u{b.initial, u2_start};
    out.push_back(u);
    for (std::size_t i = 0; i < g.steps(); ++i) {
        const double h = g.dt(i) / static_cast<double>(sub);
        for (std::size_t k = 0; k < sub; ++k) {
            u = rk4(b, g[i] + static_cast<double>(k) * h, h, i, u);
            out.push_back(u);
        }
    }
    return out;
}

}  // namespace detail

inline Vec2 BvpSolution::at(double t) const {
    const TimeGrid& g = *grid;
    if (!(t >= 0.0 && t <= g.horizon())) fail(ErrorKind::domain, "BVP evaluation time outside [0, T]");
    std::size_t i = 0;
    while (i + 1 < g.steps() && t >= g[i + 1]) ++i;
    const double h = g.dt(i) / static_cast<double>(substeps);
    auto k = static_cast<std::size_t>(std::floor((t - g[i]) / h));
    k = std::min(k, substeps - 1);
    const double t0 = g[i] + static_cast<double>(k) * h;
    const Vec2& u = fine[i * substeps + k];
    if (t == t0) return u;
    return detail::rk4(problem, t0, t - t0, i, u);
}

/// Linear shooting on the unknown u2(0): the terminal mismatch is affine in the
/// guess, so two integrations determine it and a third produces the answer.
inline BvpSolution solve_linear_bvp(const LinearBvp& b, const GridPtr& grid, std::size_t substeps = 20) {
    if (substeps == 0) fail(ErrorKind::domain, "BVP needs at least one substep per cell");
    const TimeGrid& g = *grid;
    auto mismatch = [&](const std::vector<Vec2>& path) { return path.back()[1] - b.slope * path.back()[0] - b.offset; };
    const double m0 = mismatch(detail::integrate(b, g, substeps, 0.0));
    const double m1 = mismatch(detail::integrate(b, g, substeps, 1.0));
    const double d = m1 - m0;
    if (!std::isfinite(d) || std::abs(d) < 1e-12 * (1.0 + std::abs(m0)))
        fail(ErrorKind::ill_posed, "shooting map is degenerate (derivative " + io::fmt(d) + ")");
    double s = -m0 / d;
    std::vector<Vec2> path = detail::integrate(b, g, substeps, s);
    double r = mismatch(path);
    if (std::abs(r) >= 1e-10) {  // one correction step absorbs rounding in the secant
        s -= r / d;
        path = detail::integrate(b, g, substeps, s);
        r = mismatch(path);
    }
    if (!(std::abs(r) < 1e-10))
        fail(ErrorKind::ill_posed, "shooting residual " + io::fmt(r) + " did not reach 1e-10");
    BvpSolution out;
    out.grid = grid;
    out.shooting_derivative = d;
    out.terminal_residual = r;
    out.substeps = substeps;
    out.problem = b;
    out.u1.resize(g.size());
    out.u2.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        out.u1[i] = path[i * substeps][0];
        out.u2[i] = path[i * substeps][1];
    }
    out.fine = std::move(path);
    return out;
}

}  // namespace subdiff
