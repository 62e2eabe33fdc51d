#pragma once

// Driving noise: subordinators S_r = kappa*r + S0_r, their inverses L_t, the
// overshoot R_t and the time-changed Brownian increments of B_{L_t}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "subdiff/error.hpp"
#include "subdiff/grid.hpp"
#include "subdiff/io.hpp"
#include "subdiff/parallel.hpp"
#include "subdiff/rng.hpp"

namespace subdiff {

enum class LevyFamily { pure_drift, stable, tempered_stable, compound_poisson };

inline const char* to_string(LevyFamily f) noexcept {
    switch (f) {
        case LevyFamily::pure_drift: return "pure-drift";
        case LevyFamily::stable: return "stable";
        case LevyFamily::tempered_stable: return "tempered-stable";
        case LevyFamily::compound_poisson: return "compound-poisson";
    }
    return "unknown";
}

inline LevyFamily parse_family(const std::string& name) {
    if (name == "pure-drift") return LevyFamily::pure_drift;
    if (name == "stable") return LevyFamily::stable;
    if (name == "tempered-stable") return LevyFamily::tempered_stable;
    if (name == "compound-poisson") return LevyFamily::compound_poisson;
    fail(ErrorKind::parameter, "unknown subordinator family '" + name + "'");
}

/// Subordinator law: drift kappa plus a jump part from one of the shipped
/// families. Stable jumps are normalized so E exp(-s S0_r) = exp(-r s^alpha);
/// the tempered family has exponent (s + lambda)^alpha - lambda^alpha.
/// Compound-Poisson jumps are exponential with mean jump_scale.
struct LevySpec {
    LevyFamily family = LevyFamily::pure_drift;
    double kappa = 1.0;
    double alpha = 0.5;
    double lambda = 1.0;
    double rate = 1.0;
    double jump_scale = 1.0;

    static LevySpec pure_drift(double kappa) { return {LevyFamily::pure_drift, kappa}; }
    static LevySpec stable(double kappa, double alpha) {
        LevySpec s{LevyFamily::stable, kappa};
        s.alpha = alpha;
        return s;
    }
    static LevySpec tempered_stable(double kappa, double alpha, double lambda) {
        LevySpec s{LevyFamily::tempered_stable, kappa};
        s.alpha = alpha;
        s.lambda = lambda;
        return s;
    }
    static LevySpec compound_poisson(double kappa, double rate, double jump_scale) {
        LevySpec s{LevyFamily::compound_poisson, kappa};
        s.rate = rate;
        s.jump_scale = jump_scale;
        return s;
    }

    void validate() const {
        if (!(kappa > 0.0) || !std::isfinite(kappa))
            fail(ErrorKind::parameter, "kappa must be > 0 (the clock bound dL <= dt/kappa needs a positive drift)");
        if (family == LevyFamily::stable || family == LevyFamily::tempered_stable) {
            if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorKind::parameter, "alpha must lie in (0, 1)");
        }
        if (family == LevyFamily::tempered_stable && !(lambda > 0.0))
            fail(ErrorKind::parameter, "tempering lambda must be > 0");
        if (family == LevyFamily::compound_poisson) {
            if (!(rate >= 0.0) || !std::isfinite(rate)) fail(ErrorKind::parameter, "jump rate must be >= 0");
            if (!(jump_scale > 0.0)) fail(ErrorKind::parameter, "jump_scale must be > 0");
        }
    }
};

inline void to_json(nlohmann::json& j, const LevySpec& s) {
    j = nlohmann::json{{"family", to_string(s.family)}, {"kappa", s.kappa}};
    switch (s.family) {
        case LevyFamily::pure_drift: break;
        case LevyFamily::stable: j["alpha"] = s.alpha; break;
        case LevyFamily::tempered_stable:
            j["alpha"] = s.alpha;
            j["lambda"] = s.lambda;
            break;
        case LevyFamily::compound_poisson:
            j["rate"] = s.rate;
            j["jump_scale"] = s.jump_scale;
            break;
    }
}

inline void from_json(const nlohmann::json& j, LevySpec& s) {
    s = LevySpec{};
    s.family = parse_family(j.at("family").get<std::string>());
    s.kappa = j.at("kappa").get<double>();
    if (j.contains("alpha")) s.alpha = j.at("alpha").get<double>();
    if (j.contains("lambda")) s.lambda = j.at("lambda").get<double>();
    if (j.contains("rate")) s.rate = j.at("rate").get<double>();
    if (j.contains("jump_scale")) s.jump_scale = j.at("jump_scale").get<double>();
    s.validate();
}

/// Positive alpha-stable variate with E exp(-s X) = exp(-s^alpha), drawn by
/// Kanter's transform of a uniform angle and a unit exponential.
inline double sample_positive_stable(double alpha, Engine& engine) {
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    std::exponential_distribution<double> expo(1.0);
    double u = angle(engine);
    while (u == 0.0) u = angle(engine);
    const double e = expo(engine);
    const double head = std::sin(alpha * u) / std::pow(std::sin(u), 1.0 / alpha);
    const double tail = std::pow(std::sin((1.0 - alpha) * u) / e, (1.0 - alpha) / alpha);
    return head * tail;
}

/// Monotone drift-plus-jumps path S_r = kappa*r + sum_{r_k <= r} J_k on [0, horizon].
/// Infinite-activity families are represented by one aggregated jump at the end
/// of each operational cell.
struct SubordinatorPath {
    double kappa = 1.0;
    double horizon = 0.0;
    std::vector<double> jump_times;
    std::vector<double> jump_sizes;
    std::vector<double> cumulative;  ///< running jump sums, filled by seal()

    /// Validates the jump list and builds the prefix sums used by evaluation.
    void seal() {
        if (!(kappa > 0.0)) fail(ErrorKind::parameter, "kappa must be > 0");
        if (jump_times.size() != jump_sizes.size()) fail(ErrorKind::domain, "jump times and sizes differ in length");
        cumulative.resize(jump_sizes.size());
        double run = 0.0;
        for (std::size_t k = 0; k < jump_sizes.size(); ++k) {
            if (!(jump_sizes[k] >= 0.0)) fail(ErrorKind::domain, "jump sizes must be nonnegative");
            if (k > 0 && !(jump_times[k] >= jump_times[k - 1])) fail(ErrorKind::domain, "jump times must be sorted");
            run += jump_sizes[k];
            cumulative[k] = run;
        }
    }

    static SubordinatorPath make(double kappa, double horizon, std::vector<double> times, std::vector<double> sizes) {
        SubordinatorPath s{kappa, horizon, std::move(times), std::move(sizes), {}};
        s.seal();
        return s;
    }

    /// Right-continuous evaluation.
    [[nodiscard]] double operator()(double r) const {
        const auto k = static_cast<std::size_t>(
            std::upper_bound(jump_times.begin(), jump_times.end(), r) - jump_times.begin());
        return kappa * r + (k == 0 ? 0.0 : cumulative[k - 1]);
    }

    [[nodiscard]] double terminal() const { return (*this)(horizon); }
};

inline constexpr std::size_t kMaxJumps = 50'000'000;

/// Samples S on [0, horizon]; `steps` operational cells carry the increments of
/// the stable and tempered families.
inline SubordinatorPath sample_subordinator(const LevySpec& spec, double horizon, std::size_t steps,
                                            Engine& engine) {
    spec.validate();
    if (!(horizon > 0.0)) fail(ErrorKind::domain, "operational horizon must be positive");
    SubordinatorPath path{spec.kappa, horizon, {}, {}, {}};
    switch (spec.family) {
        case LevyFamily::pure_drift: break;
        case LevyFamily::compound_poisson: {
            if (spec.rate == 0.0) break;
            std::exponential_distribution<double> wait(spec.rate);
            std::exponential_distribution<double> size(1.0 / spec.jump_scale);
            double r = wait(engine);
            while (r <= horizon) {
                if (path.jump_times.size() >= kMaxJumps)
                    fail(ErrorKind::simulation_budget, "compound-Poisson jump budget exhausted");
                path.jump_times.push_back(r);
                path.jump_sizes.push_back(size(engine));
                r += wait(engine);
            }
            break;
        }
        case LevyFamily::stable:
        case LevyFamily::tempered_stable: {
            if (steps == 0) fail(ErrorKind::domain, "stable sampling needs at least one operational cell");
            if (steps > kMaxJumps) fail(ErrorKind::simulation_budget, "operational refinement too large");
            const double dr = horizon / static_cast<double>(steps);
            const double scale = std::pow(dr, 1.0 / spec.alpha);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            path.jump_times.reserve(steps);
            path.jump_sizes.reserve(steps);
            for (std::size_t j = 0; j < steps; ++j) {
                double x = scale * sample_positive_stable(spec.alpha, engine);
                if (spec.family == LevyFamily::tempered_stable) {
                    // Exact tempering: accept the stable proposal with prob exp(-lambda x).
                    std::size_t tries = 1;
                    while (unit(engine) > std::exp(-spec.lambda * x)) {
                        if (++tries > 1'000'000)
                            fail(ErrorKind::simulation_budget, "tempered-stable rejection budget exhausted");
                        x = scale * sample_positive_stable(spec.alpha, engine);
                    }
                }
                path.jump_times.push_back(j + 1 == steps ? horizon : dr * static_cast<double>(j + 1));
                path.jump_sizes.push_back(x);
            }
            break;
        }
    }
    path.seal();
    return path;
}

/// Samples S over an operational horizon that provably reaches clock level
/// `level` (S_r >= kappa*r), so no extension loop is required.
inline SubordinatorPath sample_covering_subordinator(const LevySpec& spec, double level, std::size_t steps,
                                                     Engine& engine) {
    spec.validate();
    const double horizon = (level / spec.kappa) * (1.0 + 1e-9) + 1e-12;
    auto path = sample_subordinator(spec, horizon, steps, engine);
    if (!(path.terminal() > level))
        fail(ErrorKind::simulation_budget, "subordinator path failed to exceed the clock horizon");
    return path;
}

struct Inversion {
    std::vector<double> L;   ///< L_{(t_i - a)+}, nodes 0..N
    std::vector<double> dL;  ///< clamped increments, cells 0..N-1
};

inline constexpr double kFlatTolerance = 1e-14;

/// L_i = inf{r : S_r > (t_i - a)+}. Increments are clamped into [0, dt_i/kappa]
/// and increments below kFlatTolerance become exact zeros.
inline Inversion invert_subordinator(const SubordinatorPath& s, const TimeGrid& grid, double a) {
    if (!(a >= 0.0)) fail(ErrorKind::domain, "overshoot start a must be >= 0");
    const double top = std::max(grid.horizon() - a, 0.0);
    if (!(s.terminal() > top)) fail(ErrorKind::domain, "subordinator path does not cover the clock horizon");
    Inversion out;
    out.L.resize(grid.size());
    out.dL.resize(grid.steps());
    std::size_t k = 0;
    double jumps_before = 0.0;
    const std::size_t count = s.jump_times.size();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double level = std::max(grid[i] - a, 0.0);
        double value = 0.0;
        for (;;) {
            if (k < count) {
                const double pre = s.kappa * s.jump_times[k] + jumps_before;
                if (level < pre) {
                    value = std::min((level - jumps_before) / s.kappa, s.jump_times[k]);
                    break;
                }
                if (level < pre + s.jump_sizes[k]) {
                    value = s.jump_times[k];
                    break;
                }
                jumps_before += s.jump_sizes[k];
                ++k;
                continue;
            }
            value = (level - jumps_before) / s.kappa;
            break;
        }
        if (i > 0) value = std::max(value, out.L[i - 1]);
        out.L[i] = value;
    }
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        double d = out.L[i + 1] - out.L[i];
        d = std::clamp(d, 0.0, grid.dt(i) / s.kappa);
        if (d < kFlatTolerance) d = 0.0;
        out.dL[i] = d;
    }
    return out;
}

/// R_i = a + S_{L_i} - t_i. Values within rounding of zero snap to exactly 0
/// (diffusion active); clearly negative values signal inconsistent inputs.
inline std::vector<double> overshoot_process(const SubordinatorPath& s, const TimeGrid& grid,
                                             const std::vector<double>& L, double a) {
    if (L.size() != grid.size()) fail(ErrorKind::domain, "L must have one value per grid node");
    std::vector<double> R(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double r = a + s(L[i]) - grid[i];
        const double tol = 1e-12 * std::max(1.0, std::abs(grid[i]) + a);
        if (r < -tol) fail(ErrorKind::consistency, "negative overshoot " + io::fmt(r) + " at node " + std::to_string(i));
        R[i] = r <= tol ? 0.0 : r;
    }
    return R;
}

/// dBL_i ~ N(0, dL_i), conditionally independent given the clock. One normal is
/// consumed per cell regardless of dL so streams align across clock laws.
inline std::vector<double> sample_subdiffusion(const std::vector<double>& dL, Engine& engine) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> dBL(dL.size());
    for (std::size_t i = 0; i < dL.size(); ++i) {
        if (dL[i] < 0.0) fail(ErrorKind::domain, "clock increments must be nonnegative");
        const double g = normal(engine);
        dBL[i] = dL[i] > 0.0 ? std::sqrt(dL[i]) * g : 0.0;
    }
    return dBL;
}

/// One simulated scenario on the clock grid.
struct PathBundle {
    GridPtr grid;
    double r0 = 0.0;
    std::uint64_t seed = 0;
    std::size_t path_id = 0;
    std::vector<double> L, dL, R, dBL;

    [[nodiscard]] bool active(std::size_t cell) const noexcept { return dL[cell] > 0.0; }
};

struct Ensemble {
    GridPtr grid;
    LevySpec spec;
    double r0 = 0.0;
    std::uint64_t seed = 0;
    std::size_t refinement = 10;
    bool classical = false;  ///< plain Brownian motion, no time change
    std::vector<PathBundle> paths;

    [[nodiscard]] std::size_t size() const noexcept { return paths.size(); }
    [[nodiscard]] const TimeGrid& time() const noexcept { return *grid; }
};

inline PathBundle simulate_path(const LevySpec& spec, const GridPtr& grid, double r0, std::uint64_t seed,
                                std::size_t path_id, std::size_t refinement) {
    if (!(r0 >= 0.0)) fail(ErrorKind::domain, "overshoot start r0 must be >= 0");
    Engine clock_rng = make_engine(seed, path_id, Stream::subordinator);
    Engine noise_rng = make_engine(seed, path_id, Stream::brownian);
    const double level = std::max(grid->horizon() - r0, 0.0) + grid->horizon() * 1e-9;
    const std::size_t cells = std::max<std::size_t>(1, refinement) * grid->steps();
    const SubordinatorPath s = sample_covering_subordinator(spec, std::max(level, 1e-12), cells, clock_rng);
    Inversion inv = invert_subordinator(s, *grid, r0);
    PathBundle out;
    out.grid = grid;
    out.r0 = r0;
    out.seed = seed;
    out.path_id = path_id;
    out.R = overshoot_process(s, *grid, inv.L, r0);
    out.dBL = sample_subdiffusion(inv.dL, noise_rng);
    out.L = std::move(inv.L);
    out.dL = std::move(inv.dL);
    return out;
}

/// Path `p` of the ensemble is a pure function of (spec, grid, r0, seed, p).
inline Ensemble simulate_ensemble(const LevySpec& spec, const GridPtr& grid, double r0, std::uint64_t seed,
                                  std::size_t paths, std::size_t refinement = 10, unsigned threads = 1) {
    spec.validate();
    if (paths == 0) fail(ErrorKind::domain, "ensemble needs at least one path");
    Ensemble e{grid, spec, r0, seed, refinement, false, std::vector<PathBundle>(paths)};
    parallel_for(paths, threads,
                 [&](std::size_t p) { e.paths[p] = simulate_path(spec, grid, r0, seed, p, refinement); });
    return e;
}

/// Classical Brownian scenarios: L_t = t, R = 0, dBL ~ N(0, dt), drawn from the
/// same per-path Brownian stream as the time-changed ensembles.
inline Ensemble brownian_ensemble(const GridPtr& grid, std::uint64_t seed, std::size_t paths,
                                  unsigned threads = 1) {
    if (paths == 0) fail(ErrorKind::domain, "ensemble needs at least one path");
    Ensemble e{grid, LevySpec::pure_drift(1.0), 0.0, seed, 1, true, std::vector<PathBundle>(paths)};
    parallel_for(paths, threads, [&](std::size_t p) {
        PathBundle b;
        b.grid = grid;
        b.seed = seed;
        b.path_id = p;
        b.L = grid->nodes();
        b.dL.resize(grid->steps());
        for (std::size_t i = 0; i < grid->steps(); ++i) b.dL[i] = grid->dt(i);
        b.R.assign(grid->size(), 0.0);
        Engine noise_rng = make_engine(seed, p, Stream::brownian);
        std::normal_distribution<double> normal(0.0, 1.0);
        b.dBL.resize(grid->steps());
        for (std::size_t i = 0; i < grid->steps(); ++i) b.dBL[i] = std::sqrt(grid->dt(i)) * normal(noise_rng);
        e.paths[p] = std::move(b);
    });
    return e;
}

struct ActivitySide {
    std::size_t count = 0;
    double mean = 0.0;    ///< mean of dL_i / dt_i
    double radius = 0.0;  ///< three standard errors
};

struct ActivityRate {
    std::optional<ActivitySide> active;    ///< paths with R_i = 0
    std::optional<ActivitySide> inactive;  ///< paths with R_i > 0
};

/// Conditional clock speed over cell `node`, split by whether the diffusion is
/// active at t_i. Expected: 1/kappa on the active side and ~0 on the other.
inline ActivityRate empirical_activity_rate(const Ensemble& e, std::size_t node) {
    if (e.paths.empty()) fail(ErrorKind::domain, "empty ensemble");
    if (node >= e.grid->steps()) fail(ErrorKind::domain, "activity node must index a cell");
    const double dt = e.grid->dt(node);
    double sum[2] = {0, 0}, sq[2] = {0, 0};
    std::size_t n[2] = {0, 0};
    for (const auto& p : e.paths) {
        const int side = p.R[node] == 0.0 ? 0 : 1;
        const double v = p.dL[node] / dt;
        sum[side] += v;
        sq[side] += v * v;
        ++n[side];
    }
    ActivityRate out;
    for (int side = 0; side < 2; ++side) {
        if (n[side] == 0) continue;
        ActivitySide s;
        s.count = n[side];
        s.mean = sum[side] / static_cast<double>(n[side]);
        const double var = n[side] > 1
                               ? std::max(0.0, (sq[side] - n[side] * s.mean * s.mean) / static_cast<double>(n[side] - 1))
                               : 0.0;
        s.radius = 3.0 * std::sqrt(var / static_cast<double>(n[side]));
        (side == 0 ? out.active : out.inactive) = s;
    }
    return out;
}

/// Long-format dump: path_id,t,L,dL,R,dBL. Increment columns hold the cell that
/// starts at t (0 on the final node).
inline void write_paths_csv(std::ostream& os, const Ensemble& e, std::size_t max_paths,
                            const std::string& config_hash = {}) {
    if (!config_hash.empty()) os << "# config_hash=" << config_hash << '\n';
    os << "path_id,t,L,dL,R,dBL\n";
    const std::size_t n = std::min(max_paths, e.paths.size());
    const auto& g = *e.grid;
    for (std::size_t p = 0; p < n; ++p) {
        const auto& b = e.paths[p];
        for (std::size_t i = 0; i < g.size(); ++i) {
            const bool cell = i < g.steps();
            os << p << ',' << io::fmt(g[i]) << ',' << io::fmt(b.L[i]) << ',' << io::fmt(cell ? b.dL[i] : 0.0) << ','
               << io::fmt(b.R[i]) << ',' << io::fmt(cell ? b.dBL[i] : 0.0) << '\n';
        }
    }
}

}  // namespace subdiff
