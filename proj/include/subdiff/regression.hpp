#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "subdiff/error.hpp"

namespace subdiff {

/// Least-squares projection onto polynomials of total degree <= `degree` in
/// standardized explanatory variables. Variables that are constant across the
/// sample are dropped. One QR factorization serves every right-hand side.
class Regressor {
public:
    /// vars[k][m]: value of variable k on sample m.
    Regressor(const std::vector<const std::vector<double>*>& vars, std::size_t samples, int degree) {
        if (degree < 0) fail(ErrorKind::domain, "basis degree must be >= 0");
        std::vector<std::vector<double>> z;
        for (const auto* v : vars) {
            if (v->size() != samples) fail(ErrorKind::domain, "regression variables differ in length");
            double mean = 0.0;
            for (double a : *v) mean += a;
            mean /= static_cast<double>(samples);
            double var = 0.0;
            for (double a : *v) var += (a - mean) * (a - mean);
            const double sd = std::sqrt(var / static_cast<double>(samples));
            if (!(sd >= 1e-12 * (1.0 + std::abs(mean)))) continue;
            std::vector<double> s(samples);
            for (std::size_t m = 0; m < samples; ++m) s[m] = ((*v)[m] - mean) / sd;
            z.push_back(std::move(s));
        }
        std::vector<std::vector<int>> powers;
        std::vector<int> e(z.size(), 0);
        enumerate(powers, e, 0, degree);
        if (samples < powers.size())
            fail(ErrorKind::basis_degeneracy, "fewer samples (" + std::to_string(samples) + ") than basis functions (" +
                                                  std::to_string(powers.size()) + ")");
        design_.resize(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(powers.size()));
        for (std::size_t c = 0; c < powers.size(); ++c)
            for (std::size_t m = 0; m < samples; ++m) {
                double val = 1.0;
                for (std::size_t k = 0; k < z.size(); ++k)
                    for (int p = 0; p < powers[c][k]; ++p) val *= z[k][m];
                design_(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c)) = val;
            }
        qr_.compute(design_);
        if (qr_.rank() == 0) fail(ErrorKind::basis_degeneracy, "regression design has rank 0");
        columns_ = powers.size();
        active_ = z.size();
    }

    /// Fitted values of the projection of `target`.
    [[nodiscard]] std::vector<double> fit(const std::vector<double>& target) const {
        const Eigen::Map<const Eigen::VectorXd> b(target.data(), static_cast<Eigen::Index>(target.size()));
        const Eigen::VectorXd coef = qr_.solve(b);
        const Eigen::VectorXd fitted = design_ * coef;
        return {fitted.data(), fitted.data() + fitted.size()};
    }

    [[nodiscard]] std::size_t columns() const noexcept { return columns_; }
    [[nodiscard]] std::size_t active_variables() const noexcept { return active_; }
    [[nodiscard]] Eigen::Index rank() const { return qr_.rank(); }

private:
    static void enumerate(std::vector<std::vector<int>>& out, std::vector<int>& e, std::size_t k, int left) {
        if (k == e.size()) {
            out.push_back(e);
            return;
        }
        for (int p = 0; p <= left; ++p) {
            e[k] = p;
            enumerate(out, e, k + 1, left - p);
        }
        e[k] = 0;
    }

    Eigen::MatrixXd design_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    std::size_t columns_ = 0;
    std::size_t active_ = 0;
};

}  // namespace subdiff
