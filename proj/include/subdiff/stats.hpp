#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "subdiff/error.hpp"

namespace subdiff {

/// Sample mean with its standard error (sample std / sqrt(n)).
struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

inline Estimate estimate(const std::vector<double>& samples) {
    Estimate e;
    e.n = samples.size();
    if (e.n == 0) return e;
    double s = 0.0;
    for (double v : samples) s += v;
    e.mean = s / static_cast<double>(e.n);
    if (e.n > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - e.mean) * (v - e.mean);
        e.se = std::sqrt(ss / static_cast<double>(e.n - 1) / static_cast<double>(e.n));
    }
    return e;
}

/// |a - b| measured in units of the combined standard error. Returns 0 for
/// identical means and +inf when the means differ with zero error.
inline double z_score(double a, double b, double se) {
    const double d = std::abs(a - b);
    if (d == 0.0) return 0.0;
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return d / se;
}

/// Least-squares line through (log x, log y) for positive pairs.
struct LogLogFit {
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    double r2 = std::numeric_limits<double>::quiet_NaN();
    std::size_t used = 0;
    [[nodiscard]] bool valid() const { return used >= 2 && std::isfinite(slope); }
};

/// Values at or below `floor` are treated as censored and skipped.
inline LogLogFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y, double floor = 0.0) {
    if (x.size() != y.size()) fail(ErrorKind::domain, "log-log fit needs paired samples");
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > floor) || !std::isfinite(y[i])) continue;
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    LogLogFit fit;
    fit.used = lx.size();
    if (fit.used < 2) return fit;
    const double n = static_cast<double>(fit.used);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    if (sxx == 0.0) return fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

}  // namespace subdiff
