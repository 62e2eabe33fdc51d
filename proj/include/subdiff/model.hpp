#pragma once

// Coefficient sets of the controlled FBSDE and checks of the standing
// assumptions (Lipschitz bounds, monotonicity, gradient-form monotonicity).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/error.hpp"
#include "subdiff/io.hpp"
#include "subdiff/rng.hpp"

namespace subdiff {

/// Evaluation site. `node`/`cell` let trajectory-frozen coefficients find their
/// tables: the left end of cell i has node == i, the right end node == i + 1.
struct Point {
    std::size_t path = 0;
    std::size_t node = 0;
    std::size_t cell = 0;
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double v = 0.0;
};

struct Gradient {
    double x = 0.0, y = 0.0, z = 0.0, v = 0.0;
};

enum Arg : unsigned { arg_x = 1u, arg_y = 2u, arg_z = 4u, arg_v = 8u };

using ScalarFn = std::function<double(const Point&)>;
using GradientFn = std::function<Gradient(const Point&)>;

inline constexpr double kFdStep = 1e-6;

/// One scalar coefficient with the arguments it reads (`mask`). An empty
/// coefficient is identically zero. Without an analytic gradient, partials come
/// from central differences.
class Coefficient {
public:
    Coefficient() = default;
    explicit Coefficient(unsigned mask) : mask_(mask) {}
    Coefficient(unsigned mask, ScalarFn fn, GradientFn grad = {})
        : mask_(mask), fn_(std::move(fn)), grad_(std::move(grad)) {}

    [[nodiscard]] unsigned mask() const noexcept { return mask_; }
    [[nodiscard]] bool is_zero() const noexcept { return !fn_; }
    [[nodiscard]] bool has_analytic_gradient() const noexcept { return is_zero() || bool(grad_); }

    double operator()(const Point& p) const { return fn_ ? fn_(p) : 0.0; }

    [[nodiscard]] Gradient gradient(const Point& p) const {
        if (!fn_) return {};
        if (grad_) return grad_(p);
        return fd_gradient(p, kFdStep);
    }

    [[nodiscard]] Gradient fd_gradient(const Point& p, double h) const {
        Gradient g;
        if (!fn_) return g;
        auto central = [&](double Point::*field) {
            Point a = p, b = p;
            a.*field += h;
            b.*field -= h;
            return (fn_(a) - fn_(b)) / (2.0 * h);
        };
        if (mask_ & arg_x) g.x = central(&Point::x);
        if (mask_ & arg_y) g.y = central(&Point::y);
        if (mask_ & arg_z) g.z = central(&Point::z);
        if (mask_ & arg_v) g.v = central(&Point::v);
        return g;
    }

private:
    unsigned mask_ = 0;
    ScalarFn fn_;
    GradientFn grad_;
};

inline constexpr unsigned kControlled = arg_x | arg_y | arg_v;
inline constexpr unsigned kNoise = arg_x | arg_y | arg_z;

/// Coefficients of dx = b dt + delta dL + sigma dB_L, -dy = f dt + h_dL dL - z dB_L,
/// y(T) = phi(x(T)), with cost E[int g dt + h_T(x(T)) + gamma(y(0))].
struct CoefficientSet {
    std::string name = "custom";
    Coefficient b{kControlled};
    Coefficient sigma{kNoise};
    Coefficient f{kControlled};
    Coefficient phi{arg_x};
    Coefficient delta{kNoise};
    Coefficient h_dL{kNoise};
    Coefficient g{kControlled};
    Coefficient h_T{arg_x};
    Coefficient gamma{arg_y};

    struct Role {
        const char* name;
        const Coefficient* coeff;
    };
    [[nodiscard]] std::array<Role, 9> roles() const {
        return {{{"b", &b}, {"sigma", &sigma}, {"f", &f}, {"phi", &phi}, {"delta", &delta},
                 {"h_dL", &h_dL}, {"g", &g}, {"h_T", &h_T}, {"gamma", &gamma}}};
    }
};

/// Axis-aligned sampling box for the assumption checkers.
struct Box {
    double t_lo = 0.0, t_hi = 1.0;
    double x_lo = -1.0, x_hi = 1.0;
    double y_lo = -1.0, y_hi = 1.0;
    double z_lo = -1.0, z_hi = 1.0;
    double v_lo = -1.0, v_hi = 1.0;

    void validate() const {
        const double lo[] = {t_lo, x_lo, y_lo, z_lo, v_lo}, hi[] = {t_hi, x_hi, y_hi, z_hi, v_hi};
        for (int i = 0; i < 5; ++i)
            if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || lo[i] > hi[i])
                fail(ErrorKind::domain, "sampling box must be bounded with lo <= hi");
    }

    Point sample(Engine& eng) const {
        auto u = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); };
        Point p;
        p.t = u(t_lo, t_hi);
        p.x = u(x_lo, x_hi);
        p.y = u(y_lo, y_hi);
        p.z = u(z_lo, z_hi);
        p.v = u(v_lo, v_hi);
        return p;
    }
};

inline std::string describe(const Point& p) {
    return "(t=" + io::fmt(p.t) + ", x=" + io::fmt(p.x) + ", y=" + io::fmt(p.y) + ", z=" + io::fmt(p.z) +
           ", v=" + io::fmt(p.v) + ")";
}

inline double checked(const Coefficient& c, const char* role, const Point& p) {
    const double v = c(p);
    if (!std::isfinite(v)) fail(ErrorKind::coefficient, std::string(role) + " is not finite at " + describe(p));
    return v;
}

// ---------------------------------------------------------------------------
// Lipschitz estimates

struct LipschitzEstimate {
    std::string role;
    double constant = 0.0;
};

/// Largest secant slope |c(p) - c(q)| / |p - q| (Euclidean over the role's
/// arguments) found among random pairs and short steps along the local
/// gradient. Always a lower bound for the true constant.
inline std::vector<LipschitzEstimate> check_lipschitz(const CoefficientSet& cs, const Box& box, std::size_t samples,
                                                      std::uint64_t seed = 1) {
    box.validate();
    if (samples < 1000) fail(ErrorKind::domain, "Lipschitz check needs at least 1000 samples");
    std::vector<LipschitzEstimate> out;
    std::uint64_t role_index = 0;
    for (const auto& role : cs.roles()) {
        ++role_index;
        if (role.coeff->is_zero()) continue;
        const Coefficient& c = *role.coeff;
        const unsigned m = c.mask();
        Engine eng = make_engine(seed, role_index, Stream::subordinator);
        double best = 0.0;
        auto consider = [&](const Point& a, const Point& b) {
            double d2 = 0.0;
            if (m & arg_x) d2 += (a.x - b.x) * (a.x - b.x);
            if (m & arg_y) d2 += (a.y - b.y) * (a.y - b.y);
            if (m & arg_z) d2 += (a.z - b.z) * (a.z - b.z);
            if (m & arg_v) d2 += (a.v - b.v) * (a.v - b.v);
            if (d2 == 0.0) return;
            const double diff = std::abs(checked(c, role.name, a) - checked(c, role.name, b));
            best = std::max(best, diff / std::sqrt(d2));
        };
        const double width = std::min({box.x_hi - box.x_lo, box.y_hi - box.y_lo, box.z_hi - box.z_lo,
                                       box.v_hi - box.v_lo});
        for (std::size_t s = 0; s < samples; ++s) {
            Point a = box.sample(eng);
            Point b = box.sample(eng);
            b.t = a.t;
            consider(a, b);
            const Gradient g = c.gradient(a);
            double gn = 0.0;
            if (m & arg_x) gn += g.x * g.x;
            if (m & arg_y) gn += g.y * g.y;
            if (m & arg_z) gn += g.z * g.z;
            if (m & arg_v) gn += g.v * g.v;
            gn = std::sqrt(gn);
            if (gn > 0.0 && std::isfinite(gn) && width > 0.0) {
                const double step = 1e-3 * width / gn;
                Point c2 = a;
                if (m & arg_x) c2.x += step * g.x;
                if (m & arg_y) c2.y += step * g.y;
                if (m & arg_z) c2.z += step * g.z;
                if (m & arg_v) c2.v += step * g.v;
                consider(a, c2);
            }
        }
        out.push_back({role.name, best});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Monotonicity (difference form)

inline constexpr double kViolationTolerance = 1e-9;

struct Witness {
    double t = 0.0, v = 0.0;
    double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0, z1 = 0.0, z2 = 0.0;
    double lhs = 0.0;    ///< left-hand side of the inequality
    double bound = 0.0;  ///< -C * squared distance
};

struct InequalityVerdict {
    bool pass = true;
    /// Largest C with lhs <= -C |diff|^2 on every sample; <= 0 means no
    /// positive constant works on the sampled pairs.
    double best_constant = std::numeric_limits<double>::infinity();
    std::optional<Witness> witness;  ///< first violation found
};

struct MonotonicityReport {
    double C = 0.0;
    InequalityVerdict drift_pair;  ///< (db)dy - (df)dx <= -C(dx^2 + dy^2)
    InequalityVerdict diffusion;   ///< (dsigma)dz + (ddelta)dy - (dh)dx <= -C(dx^2 + dy^2 + dz^2)
};

inline double drift_pair_lhs(const CoefficientSet& cs, const Witness& w) {
    const Point a{0, 0, 0, w.t, w.x1, w.y1, 0.0, w.v};
    const Point b{0, 0, 0, w.t, w.x2, w.y2, 0.0, w.v};
    return (checked(cs.b, "b", a) - checked(cs.b, "b", b)) * (w.y1 - w.y2) -
           (checked(cs.f, "f", a) - checked(cs.f, "f", b)) * (w.x1 - w.x2);
}

inline double diffusion_lhs(const CoefficientSet& cs, const Witness& w) {
    const Point a{0, 0, 0, w.t, w.x1, w.y1, w.z1, w.v};
    const Point b{0, 0, 0, w.t, w.x2, w.y2, w.z2, w.v};
    return (checked(cs.sigma, "sigma", a) - checked(cs.sigma, "sigma", b)) * (w.z1 - w.z2) +
           (checked(cs.delta, "delta", a) - checked(cs.delta, "delta", b)) * (w.y1 - w.y2) -
           (checked(cs.h_dL, "h_dL", a) - checked(cs.h_dL, "h_dL", b)) * (w.x1 - w.x2);
}

namespace detail {
inline void record(InequalityVerdict& verdict, Witness w, double dist2, double C) {
    if (dist2 == 0.0) return;
    verdict.best_constant = std::min(verdict.best_constant, -w.lhs / dist2);
    w.bound = -C * dist2;
    if (w.lhs > w.bound + kViolationTolerance) {
        verdict.pass = false;
        if (!verdict.witness) verdict.witness = w;
    }
}
}  // namespace detail

/// Falsification search for both monotonicity inequalities at level C.
/// Coordinate-axis probes (unit offset from the origin along x, y, z) run
/// first, so an axis witness is always the reported one when it exists.
inline MonotonicityReport check_monotonicity(const CoefficientSet& cs, double C, const Box& box, std::size_t samples,
                                             std::uint64_t seed = 1) {
    if (!(C > 0.0)) fail(ErrorKind::domain, "monotonicity level C must be positive");
    box.validate();
    MonotonicityReport rep;
    rep.C = C;
    const double t0 = box.t_lo;
    const double v0 = std::clamp(0.0, box.v_lo, box.v_hi);
    const double axes[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (const auto& e : axes) {
        Witness w{t0, v0, e[0], 0.0, e[1], 0.0, e[2], 0.0};
        if (e[2] == 0.0) {
            w.lhs = drift_pair_lhs(cs, w);
            detail::record(rep.drift_pair, w, e[0] * e[0] + e[1] * e[1], C);
        }
        w.lhs = diffusion_lhs(cs, w);
        detail::record(rep.diffusion, w, e[0] * e[0] + e[1] * e[1] + e[2] * e[2], C);
    }
    Engine eng = make_engine(seed, 0, Stream::subordinator);
    for (std::size_t s = 0; s < samples; ++s) {
        const Point a = box.sample(eng);
        const Point b = box.sample(eng);
        Witness w{a.t, a.v, a.x, b.x, a.y, b.y, a.z, b.z};
        const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
        w.lhs = drift_pair_lhs(cs, w);
        detail::record(rep.drift_pair, w, dx * dx + dy * dy, C);
        w.lhs = diffusion_lhs(cs, w);
        detail::record(rep.diffusion, w, dx * dx + dy * dy + dz * dz, C);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Monotonicity (gradient form)

struct GradientMonotonicity {
    double drift_value = 0.0, drift_bound = 0.0;
    double diffusion_value = 0.0, diffusion_bound = 0.0;
    bool drift_pass = true, diffusion_pass = true;
};

/// Quadratic forms of the linearized inequalities at `at` in direction
/// (xi1, xi2, xi3) = (dx, dy, dz).
inline GradientMonotonicity check_gradient_monotonicity(const CoefficientSet& cs, const Point& at, double xi1,
                                                        double xi2, double xi3, double C) {
    const Gradient gb = cs.b.gradient(at), gf = cs.f.gradient(at);
    const Gradient gs = cs.sigma.gradient(at), gd = cs.delta.gradient(at), gh = cs.h_dL.gradient(at);
    for (const Gradient* g : {&gb, &gf, &gs, &gd, &gh})
        if (!std::isfinite(g->x) || !std::isfinite(g->y) || !std::isfinite(g->z))
            fail(ErrorKind::coefficient, "non-finite gradient at " + describe(at));
    GradientMonotonicity r;
    r.drift_value = xi2 * (gb.x * xi1 + gb.y * xi2) - xi1 * (gf.x * xi1 + gf.y * xi2);
    r.drift_bound = -C * (xi1 * xi1 + xi2 * xi2);
    r.diffusion_value = xi3 * (gs.x * xi1 + gs.y * xi2 + gs.z * xi3) + xi2 * (gd.x * xi1 + gd.y * xi2 + gd.z * xi3) -
                        xi1 * (gh.x * xi1 + gh.y * xi2 + gh.z * xi3);
    r.diffusion_bound = -C * (xi1 * xi1 + xi2 * xi2 + xi3 * xi3);
    r.drift_pass = r.drift_value <= r.drift_bound + kViolationTolerance;
    r.diffusion_pass = r.diffusion_value <= r.diffusion_bound + kViolationTolerance;
    return r;
}

// ---------------------------------------------------------------------------
// Gradient consistency

struct GradientMismatch {
    std::string role;
    Point at;
    double analytic = 0.0, numeric = 0.0;
};

/// Compares analytic partials with central differences; relative tolerance
/// measured against max(1, |value|).
inline std::vector<GradientMismatch> check_gradients(const CoefficientSet& cs, const Box& box, std::size_t samples,
                                                     double rel_tol = 1e-5, std::uint64_t seed = 1) {
    box.validate();
    std::vector<GradientMismatch> bad;
    Engine eng = make_engine(seed, 7, Stream::subordinator);
    for (std::size_t s = 0; s < samples; ++s) {
        const Point p = box.sample(eng);
        for (const auto& role : cs.roles()) {
            const Coefficient& c = *role.coeff;
            if (c.is_zero() || !c.has_analytic_gradient()) continue;
            const Gradient a = c.gradient(p), n = c.fd_gradient(p, kFdStep);
            const double pa[] = {a.x, a.y, a.z, a.v}, pn[] = {n.x, n.y, n.z, n.v};
            for (int k = 0; k < 4; ++k)
                if (std::abs(pa[k] - pn[k]) > rel_tol * std::max(1.0, std::abs(pa[k])))
                    bad.push_back({role.name, p, pa[k], pn[k]});
        }
    }
    return bad;
}

// ---------------------------------------------------------------------------
// Linear (cash-management) models and the built-in catalog

/// Parameters of dx = (-m1 x - n1 y + c1 v)dt - n2 z dB_L,
/// -dy = (-m1 y + m2 x + c2 v)dt - z dB_L, y(T) = a_slope x(T), with running
/// cost (v - l(t))^2 / 2 and gamma(y) = -y.
struct LinearModelSpec {
    double m1 = 0.1, m2 = 0.2, n1 = 0.3, n2 = 0.4, c1 = 0.5, c2 = 0.5, a_slope = 0.5;
    double l_const = 0.5;
    std::function<double(double)> l;  ///< overrides l_const when set
    double beta = 0.0;                ///< tanh coupling strength (0: linear)
    double sigma_x = 0.0;             ///< state noise: sigma = sigma_x x - n2 z

    [[nodiscard]] double target(double t) const { return l ? l(t) : l_const; }

    void validate() const {
        const double v[] = {m1, m2, n1, n2, c1, c2, a_slope};
        const char* names[] = {"m1", "m2", "n1", "n2", "c1", "c2", "a_slope"};
        for (int i = 0; i < 7; ++i)
            if (!(v[i] >= 0.0) || !std::isfinite(v[i]))
                fail(ErrorKind::parameter, std::string(names[i]) + " must be a finite value >= 0");
        if (!std::isfinite(l_const)) fail(ErrorKind::parameter, "l must be finite");
        if (!std::isfinite(beta)) fail(ErrorKind::parameter, "beta must be finite");
        if (!std::isfinite(sigma_x)) fail(ErrorKind::parameter, "sigma_x must be finite");
    }
};

inline void to_json(nlohmann::json& j, const LinearModelSpec& s) {
    j = nlohmann::json{{"m1", s.m1}, {"m2", s.m2}, {"n1", s.n1}, {"n2", s.n2}, {"c1", s.c1},
                       {"c2", s.c2}, {"a_slope", s.a_slope}, {"l", s.l_const}};
    if (s.beta != 0.0) j["beta"] = s.beta;
    if (s.sigma_x != 0.0) j["sigma_x"] = s.sigma_x;
}

/// Builds the cash-management coefficient set (with an optional tanh coupling:
/// b gains -beta tanh(y) and f gains +beta tanh(x); and optional state noise
/// sigma_x x in the diffusion). Gradients are analytic.
inline CoefficientSet cash_model(const LinearModelSpec& s) {
    s.validate();
    CoefficientSet cs;
    cs.name = s.beta != 0.0 ? "tanh-cash" : s.sigma_x != 0.0 ? "noisy-cash" : "cash-management";
    const double m1 = s.m1, m2 = s.m2, n1 = s.n1, n2 = s.n2, c1 = s.c1, c2 = s.c2, a = s.a_slope, beta = s.beta;
    const double sx = s.sigma_x;
    auto l = [s](double t) { return s.target(t); };
    auto sech2 = [](double u) {
        const double c = std::cosh(u);
        return 1.0 / (c * c);
    };
    cs.b = Coefficient(
        kControlled, [=](const Point& p) { return -m1 * p.x - n1 * p.y + c1 * p.v - beta * std::tanh(p.y); },
        [=](const Point& p) { return Gradient{-m1, -n1 - beta * sech2(p.y), 0.0, c1}; });
    cs.sigma = Coefficient(kNoise, [=](const Point& p) { return sx * p.x - n2 * p.z; },
                           [=](const Point&) { return Gradient{sx, 0.0, -n2, 0.0}; });
    cs.f = Coefficient(
        kControlled, [=](const Point& p) { return -m1 * p.y + m2 * p.x + c2 * p.v + beta * std::tanh(p.x); },
        [=](const Point& p) { return Gradient{m2 + beta * sech2(p.x), -m1, 0.0, c2}; });
    cs.phi = Coefficient(arg_x, [=](const Point& p) { return a * p.x; },
                         [=](const Point&) { return Gradient{a, 0.0, 0.0, 0.0}; });
    cs.g = Coefficient(
        kControlled,
        [=](const Point& p) {
            const double d = p.v - l(p.t);
            return 0.5 * d * d;
        },
        [=](const Point& p) { return Gradient{0.0, 0.0, 0.0, p.v - l(p.t)}; });
    cs.gamma = Coefficient(arg_y, [](const Point& p) { return -p.y; },
                           [](const Point&) { return Gradient{0.0, -1.0, 0.0, 0.0}; });
    return cs;
}

inline const std::vector<std::string>& catalog_names() {
    static const std::vector<std::string> names = {"cash-management", "tanh-cash", "noisy-cash",
                                                   "brownian-decoupled", "brownian-monotone"};
    return names;
}

/// Registered models. `brownian-decoupled`: b = sigma = f = 0, phi(x) = x (the
/// solution is constant); `brownian-monotone`: b = -y, f = x, sigma = -z,
/// phi(x) = x, cost (v^2 + x^2)/2.
inline CoefficientSet catalog_model(const std::string& name) {
    if (name == "cash-management") return cash_model(LinearModelSpec{});
    if (name == "tanh-cash") {
        LinearModelSpec s;
        s.beta = 0.5;
        return cash_model(s);
    }
    if (name == "noisy-cash") {
        LinearModelSpec s;
        s.sigma_x = 0.2;
        return cash_model(s);
    }
    if (name == "brownian-decoupled") {
        CoefficientSet cs;
        cs.name = name;
        cs.phi = Coefficient(arg_x, [](const Point& p) { return p.x; },
                             [](const Point&) { return Gradient{1.0, 0.0, 0.0, 0.0}; });
        return cs;
    }
    if (name == "brownian-monotone") {
        CoefficientSet cs;
        cs.name = name;
        cs.b = Coefficient(kControlled, [](const Point& p) { return -p.y + p.v; },
                           [](const Point&) { return Gradient{0.0, -1.0, 0.0, 1.0}; });
        cs.sigma = Coefficient(kNoise, [](const Point& p) { return -p.z; },
                               [](const Point&) { return Gradient{0.0, 0.0, -1.0, 0.0}; });
        cs.f = Coefficient(kControlled, [](const Point& p) { return p.x; },
                           [](const Point&) { return Gradient{1.0, 0.0, 0.0, 0.0}; });
        cs.phi = Coefficient(arg_x, [](const Point& p) { return p.x; },
                             [](const Point&) { return Gradient{1.0, 0.0, 0.0, 0.0}; });
        cs.g = Coefficient(kControlled, [](const Point& p) { return 0.5 * (p.v * p.v + p.x * p.x); },
                           [](const Point& p) { return Gradient{p.x, 0.0, 0.0, p.v}; });
        return cs;
    }
    fail(ErrorKind::parameter, "unknown catalog model '" + name + "'");
}

}  // namespace subdiff
