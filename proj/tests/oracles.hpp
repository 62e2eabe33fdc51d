#pragma once

// Closed-form references used by the tests, independent of the library's
// Runge-Kutta shooting.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <vector>

namespace oracle {

struct Pair {
    std::vector<double> u1, u2;
};

/// u' = A u + c on [0, T] with u1(0) = initial and u2(T) = slope * u1(T),
/// solved through the exponential of the augmented 3x3 generator.
inline Pair linear_bvp(const Eigen::Matrix2d& A, const Eigen::Vector2d& c, double initial, double slope,
                       const std::vector<double>& times) {
    Eigen::Matrix3d G = Eigen::Matrix3d::Zero();
    G.topLeftCorner<2, 2>() = A;
    G.topRightCorner<2, 1>() = c;
    const double T = times.back();
    const Eigen::Matrix3d E = (G * T).exp();
    // u(T) = E (initial, s, 1); pick s so that u2(T) = slope u1(T).
    const double k0 = E(1, 0) * initial + E(1, 2) - slope * (E(0, 0) * initial + E(0, 2));
    const double k1 = E(1, 1) - slope * E(0, 1);
    const double s = -k0 / k1;
    Pair out;
    for (double t : times) {
        const Eigen::Vector3d u = (G * t).exp() * Eigen::Vector3d(initial, s, 1.0);
        out.u1.push_back(u(0));
        out.u2.push_back(u(1));
    }
    return out;
}

/// Cash state under a constant control: x' = -m1 x - n1 y + c1 u,
/// y' = m1 y - m2 x - c2 u, x(0) = x0, y(T) = a x(T).
inline Pair cash_state(double m1, double m2, double n1, double c1, double c2, double a, double x0, double u,
                       const std::vector<double>& times) {
    Eigen::Matrix2d A;
    A << -m1, -n1, -m2, m1;
    return linear_bvp(A, Eigen::Vector2d(c1 * u, -c2 * u), x0, a, times);
}

/// Cash adjoint: p' = -m1 p + n1 q, q' = m2 p + m1 q, p(0) = 1, q(T) = -a p(T).
inline Pair cash_adjoint(double m1, double m2, double n1, double a, const std::vector<double>& times) {
    Eigen::Matrix2d A;
    A << -m1, n1, m2, m1;
    return linear_bvp(A, Eigen::Vector2d::Zero(), 1.0, -a, times);
}

}  // namespace oracle
