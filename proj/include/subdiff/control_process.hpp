#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "subdiff/error.hpp"
#include "subdiff/grid.hpp"
#include "subdiff/io.hpp"

namespace subdiff {

/// Admissible control values U: a closed interval or a finite set.
struct ControlDomain {
    double lo = -std::numeric_limits<double>::infinity();
    double hi = std::numeric_limits<double>::infinity();
    std::vector<double> points;  ///< non-empty: U is this finite set

    static ControlDomain real_line() { return {}; }
    static ControlDomain interval(double lo, double hi) {
        if (!(lo <= hi)) fail(ErrorKind::domain, "control interval needs lo <= hi");
        return {lo, hi, {}};
    }
    static ControlDomain finite(std::vector<double> pts) {
        if (pts.empty()) fail(ErrorKind::domain, "finite control set is empty");
        std::sort(pts.begin(), pts.end());
        return {pts.front(), pts.back(), std::move(pts)};
    }

    [[nodiscard]] bool contains(double v) const {
        if (!std::isfinite(v)) return false;
        if (points.empty()) return v >= lo && v <= hi;
        return std::any_of(points.begin(), points.end(), [v](double p) { return std::abs(p - v) <= 1e-12; });
    }

    /// Nearest admissible value.
    [[nodiscard]] double clip(double v) const {
        if (points.empty()) return std::clamp(v, lo, hi);
        return *std::min_element(points.begin(), points.end(),
                                 [v](double a, double b) { return std::abs(a - v) < std::abs(b - v); });
    }
};

/// Where a control is evaluated for cell i: the cell midpoint in time, and the
/// left-node state for feedback laws.
struct ControlSite {
    std::size_t path = 0;
    std::size_t cell = 0;
    double t_mid = 0.0;
    double x = 0.0;
    double R = 0.0;
};

/// Admissible control v(.). Controls are applied piecewise constant on the
/// grid cells: open-loop laws are sampled at the cell midpoint, feedback laws
/// at the left node state, tables hold one value per (path, cell).
class ControlProcess {
public:
    enum class Kind { deterministic, feedback, tabulated, spliced, mapped };
    using Table = std::vector<std::vector<double>>;

    ControlProcess() : ControlProcess(deterministic([](double) { return 0.0; })) {}

    static ControlProcess deterministic(std::function<double(double)> fn, ControlDomain u = {}) {
        ControlProcess c(Kind::deterministic, std::move(u));
        c.open_ = std::move(fn);
        return c;
    }
    static ControlProcess constant(double value, ControlDomain u = {}) {
        return deterministic([value](double) { return value; }, std::move(u));
    }
    static ControlProcess feedback(std::function<double(double, double, double)> fn, ControlDomain u = {}) {
        ControlProcess c(Kind::feedback, std::move(u));
        c.closed_ = std::move(fn);
        return c;
    }
    /// values[path][cell]; a single row is shared by every path.
    static ControlProcess tabulated(Table values, ControlDomain u = {}) {
        if (values.empty()) fail(ErrorKind::domain, "control table is empty");
        const std::size_t n = values.front().size();
        for (const auto& row : values)
            if (row.size() != n) fail(ErrorKind::domain, "control table rows differ in length");
        ControlProcess c(Kind::tabulated, std::move(u));
        c.table_ = std::make_shared<const Table>(std::move(values));
        return c;
    }

    /// map(base(.)) with values taken in `u`; e.g. the donor u + 1 clipped to U.
    static ControlProcess mapped(const ControlProcess& base, std::function<double(double)> map, ControlDomain u) {
        ControlProcess c(Kind::mapped, std::move(u));
        c.base_ = std::make_shared<const ControlProcess>(base);
        c.open_ = std::move(map);
        return c;
    }

    [[nodiscard]] Kind kind() const noexcept { return kind_; }
    [[nodiscard]] const ControlDomain& domain() const noexcept { return domain_; }
    [[nodiscard]] bool open_loop() const noexcept {
        if (kind_ == Kind::feedback) return false;
        if (kind_ == Kind::spliced) return base_->open_loop() && donor_->open_loop();
        if (kind_ == Kind::mapped) return base_->open_loop();
        return true;
    }
    [[nodiscard]] double window_start() const noexcept { return tau_; }
    [[nodiscard]] double window_length() const noexcept { return eps_; }

    [[nodiscard]] double operator()(const ControlSite& s) const {
        double v = 0.0;
        switch (kind_) {
            case Kind::deterministic: v = open_(s.t_mid); break;
            case Kind::feedback: v = closed_(s.t_mid, s.x, s.R); break;
            case Kind::tabulated: {
                const auto& tab = *table_;
                const auto& row = tab.size() == 1 ? tab.front() : tab.at(s.path);
                if (s.cell >= row.size()) fail(ErrorKind::domain, "control table shorter than the grid");
                v = row[s.cell];
                break;
            }
            case Kind::spliced: v = in_window(s.t_mid) ? (*donor_)(s) : (*base_)(s); break;
            case Kind::mapped: v = open_((*base_)(s)); break;
        }
        if (!domain_.contains(v))
            fail(ErrorKind::domain, "control value " + io::fmt(v) + " outside the admissible set U");
        return v;
    }

    [[nodiscard]] bool in_window(double t) const noexcept {
        return kind_ == Kind::spliced && eps_ > 0.0 && t >= tau_ && t < tau_ + eps_;
    }

    /// u^eps = u on the complement of [tau, tau + eps), v on it.
    friend ControlProcess spike_perturb(const ControlProcess& u, const ControlProcess& v, double tau, double eps,
                                        double horizon);

private:
    ControlProcess(Kind k, ControlDomain u) : kind_(k), domain_(std::move(u)) {}

    Kind kind_;
    ControlDomain domain_;
    std::function<double(double)> open_;
    std::function<double(double, double, double)> closed_;
    std::shared_ptr<const Table> table_;
    std::shared_ptr<const ControlProcess> base_, donor_;
    double tau_ = 0.0, eps_ = 0.0;
};

inline ControlProcess spike_perturb(const ControlProcess& u, const ControlProcess& v, double tau, double eps,
                                    double horizon) {
    if (!(eps >= 0.0) || !(tau >= 0.0) || tau + eps > horizon * (1.0 + 1e-12))
        fail(ErrorKind::domain, "spike window [tau, tau + eps) must lie inside [0, T]");
    ControlProcess c(ControlProcess::Kind::spliced, u.domain());
    c.base_ = std::make_shared<const ControlProcess>(u);
    c.donor_ = std::make_shared<const ControlProcess>(v);
    c.tau_ = tau;
    c.eps_ = eps;
    return c;
}

/// Open-loop control values on the grid: result[path][cell].
inline ControlProcess::Table sample_open_loop(const ControlProcess& c, const TimeGrid& grid, std::size_t paths) {
    if (!c.open_loop()) fail(ErrorKind::domain, "feedback controls need state trajectories to be sampled");
    ControlProcess::Table out(paths, std::vector<double>(grid.steps()));
    for (std::size_t p = 0; p < paths; ++p)
        for (std::size_t i = 0; i < grid.steps(); ++i) out[p][i] = c({p, i, grid.midpoint(i), 0.0, 0.0});
    return out;
}

}  // namespace subdiff
