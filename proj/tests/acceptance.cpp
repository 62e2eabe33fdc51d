// Acceptance run: evaluates the thirteen acceptance criteria at their stated
// sizes and tolerances and prints one verdict line per criterion. The exit code
// is 0 whenever the run completes; the verdicts are the result.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "subdiff/casestudy.hpp"
#include "subdiff/cli.hpp"
#include "subdiff/constrained.hpp"
#include "subdiff/control.hpp"
#include "subdiff/model.hpp"
#include "subdiff/subordination.hpp"

using namespace subdiff;

namespace {

struct Verdict {
    Verdict(int i, std::string n) : id(i), name(std::move(n)) {}
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

void print(const Verdict& v) {
    std::printf("criterion %2d: %s  %s | %s | %.1f s\n", v.id, v.pass ? "PASS" : "FAIL", v.name.c_str(),
                v.detail.c_str(), v.seconds);
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------

Verdict clock_bound() {
    Verdict v{1, "clock bound 0 <= dL <= dt/kappa"};
    const auto t0 = Clock::now();
    const GridPtr g = make_grid(1.0, 100);
    std::size_t violations = 0, checked = 0;
    std::ostringstream d;
    for (const auto& spec : {LevySpec::pure_drift(1.0), LevySpec::stable(1.0, 0.5),
                             LevySpec::tempered_stable(1.0, 0.7, 1.0), LevySpec::compound_poisson(1.0, 1.0, 0.5)}) {
        const Ensemble e = simulate_ensemble(spec, g, 0.0, 1, 10000);
        std::size_t bad = 0;
        for (const auto& p : e.paths)
            for (std::size_t i = 0; i < g->steps(); ++i) {
                ++checked;
                if (!(p.dL[i] >= 0.0 && p.dL[i] <= g->dt(i) / spec.kappa)) ++bad;
            }
        violations += bad;
        d << to_string(spec.family) << " " << bad << "; ";
    }
    v.seconds = since(t0);
    v.pass = violations == 0 && v.seconds < 10.0;
    d << "violations " << violations << " of " << checked << " increments";
    v.detail = d.str();
    return v;
}

Verdict activity_rate() {
    Verdict v{2, "activity rate on {R=0} and {R>0}"};
    const auto t0 = Clock::now();
    const GridPtr g = make_grid(1.0, 1000);
    const Ensemble e = simulate_ensemble(LevySpec::compound_poisson(1.0, 1.0, 1.0), g, 0.0, 2, 10000);
    const ActivityRate r = empirical_activity_rate(e, 500);
    v.seconds = since(t0);
    const bool active_ok = r.active && std::abs(r.active->mean - 1.0) <= 0.05;
    const bool inactive_ok = r.inactive && r.inactive->mean < 0.02;
    v.pass = active_ok && inactive_ok && v.seconds < 60.0;
    std::ostringstream d;
    if (r.active) d << "active mean " << num(r.active->mean, 4) << " (n=" << r.active->count << ")";
    if (r.inactive) d << ", inactive mean " << num(r.inactive->mean, 4) << " (n=" << r.inactive->count << ")";
    d << "; targets |mean-1|<=0.05 and <0.02";
    v.detail = d.str();
    return v;
}

Verdict quadratic_variation() {
    Verdict v{3, "quadratic variation of B_L equals L_T"};
    const auto t0 = Clock::now();
    const GridPtr g = make_grid(1.0, 100);
    const Ensemble e = simulate_ensemble(LevySpec::stable(1.0, 0.5), g, 0.0, 3, 10000);
    std::vector<double> gap(e.size());
    for (std::size_t p = 0; p < e.size(); ++p) {
        double s = 0.0;
        for (double b : e.paths[p].dBL) s += b * b;
        gap[p] = s - e.paths[p].L.back();
    }
    const Estimate est = estimate(gap);
    v.seconds = since(t0);
    v.pass = std::abs(est.mean) <= 3.0 * est.se && v.seconds < 30.0;
    v.detail = "mean " + num(est.mean) + ", se " + num(est.se) + ", |mean|/se " + num(std::abs(est.mean) / est.se);
    return v;
}

CashStudyConfig cash_config(std::size_t paths) {
    CashStudyConfig c;
    c.paths = paths;
    c.solver.tol = 1e-10;
    c.solver.picard_max = 100;
    return c;
}

Verdict brownian_reduction() {
    Verdict v{4, "pure-drift kappa=1 cash demo equals classical Brownian run"};
    const auto t0 = Clock::now();
    CashStudyConfig c = cash_config(2000);
    c.levy = LevySpec::pure_drift(1.0);
    const auto probes = probe_grid(-2.0, 2.0, 41);
    const CashDemo a = run_cash_demo(c, cash_ensemble(c), probes);
    c.classical = true;
    const CashDemo b = run_cash_demo(c, cash_ensemble(c), probes);
    bool same = a.trajectory.x == b.trajectory.x && a.trajectory.y == b.trajectory.y &&
                a.trajectory.z == b.trajectory.z && a.adjoint.x == b.adjoint.x && a.adjoint.y == b.adjoint.y &&
                a.adjoint.z == b.adjoint.z && a.smp.min_margin == b.smp.min_margin;
    for (std::size_t k = 0; k < a.optimality.entries.size(); ++k)
        same = same && a.optimality.entries[k].J.mean == b.optimality.entries[k].J.mean &&
               a.optimality.entries[k].gap.mean == b.optimality.entries[k].gap.mean;
    v.seconds = since(t0);
    v.pass = same && v.seconds < 60.0;
    v.detail = std::string(same ? "trajectory, adjoint, SMP margin and costs identical" : "outputs differ") +
               " (2000 paths, N=100)";
    return v;
}

struct CashRun {
    CashDemo demo;
    double seconds = 0.0;
};

CashRun cash_run() {
    const auto t0 = Clock::now();
    const CashStudyConfig c = cash_config(10000);
    CashRun r{run_cash_demo(c, cash_ensemble(c), probe_grid(-2.0, 2.0, 41), 1e-6), 0.0};
    r.seconds = since(t0);
    return r;
}

Verdict oracle_equivalence(const CashRun& run) {
    Verdict v{5, "Monte Carlo (x, y, p, q) means vs BVP oracle within 3 SE"};
    bool pass = true;
    std::ostringstream d;
    for (const auto& o : run.demo.oracle_checks) {
        double dev = 0.0, se = 0.0;
        for (std::size_t i = 0; i < o.mean.size(); ++i) {
            dev = std::max(dev, std::abs(o.mean[i] - o.oracle[i]));
            se = std::max(se, o.se[i]);
        }
        pass = pass && o.pass(3.0);
        d << o.name << ": max|dev| " << num(dev) << " max se " << num(se) << " max z " << num(o.max_z) << "; ";
    }
    v.seconds = run.seconds;
    v.pass = pass && v.seconds < 300.0;
    d << "10^4 paths";
    v.detail = d.str();
    return v;
}

Verdict first_order(const CashRun& run) {
    Verdict v{6, "first-order condition on oracle p, q"};
    v.pass = run.demo.first_order <= 1e-10;
    v.detail = "max residual " + num(run.demo.first_order) + " (tol 1e-10)";
    return v;
}

Verdict maximum_principle(const CashRun& run) {
    Verdict v{7, "maximum condition H(v) - H(u*) >= -1e-6 and exact margin"};
    const SmpReport& s = run.demo.smp;
    v.pass = s.pass() && run.demo.quadratic_error <= 1e-10;
    v.detail = "min margin " + num(s.min_margin) + " over " + std::to_string(s.checked) + " probes, " +
               std::to_string(s.violations) + " violations; max |margin - (v-u*)^2/2| " +
               num(run.demo.quadratic_error) + " (tol 1e-10)";
    return v;
}

Verdict optimality_gap(const CashRun& run) {
    Verdict v{8, "optimality-gap identity and gap(u*+1) = T/2"};
    const OptimalityReport& r = run.demo.optimality;
    bool pass = true;
    std::ostringstream d;
    for (const auto& e : r.entries) {
        const double combined = std::sqrt(e.J.se * e.J.se + r.J_u.se * r.J_u.se);
        const double disc = std::abs(e.discrepancy.mean);
        pass = pass && disc <= 3.0 * combined;
        d << e.name << ": |gap-identity| " << num(disc) << " vs 3SE " << num(3.0 * combined) << "; ";
    }
    const GapEntry& one = r.entry("u*+1");
    const bool half = std::abs(one.gap.mean - 0.5) <= 3.0 * one.gap.se;
    d << "gap(u*+1) " << num(one.gap.mean, 8) << " se " << num(one.gap.se);
    v.seconds = run.seconds;
    v.pass = pass && half && v.seconds < 300.0;
    v.detail = d.str();
    return v;
}

SpikeReport spike(const LinearModelSpec& m, std::size_t paths, double tol) {
    const GridPtr g = make_grid(1.0, 100);
    const Ensemble e = simulate_ensemble(LevySpec::compound_poisson(1.0, 1.0, 0.5), g, 0.0, 3, paths);
    SpikeSetup s;
    s.problem = {cash_model(m), ControlProcess::constant(0.5), 1.0};
    s.donor = ControlProcess::constant(1.5);
    SolverOptions o;
    o.tol = tol;
    o.picard_max = 200;
    return estimate_orders(s, e, o);
}

struct SpikeRuns {
    SpikeReport cash, tanh, noisy;
    double seconds = 0.0;
};

SpikeRuns spike_runs() {
    const auto t0 = Clock::now();
    SpikeRuns r;
    r.cash = spike(LinearModelSpec{}, 2000, 1e-10);
    LinearModelSpec t;
    t.beta = 0.5;
    r.tanh = spike(t, 2000, 1e-10);
    LinearModelSpec n;
    n.sigma_x = 0.2;
    r.noisy = spike(n, 4000, 1e-6);
    r.seconds = since(t0);
    return r;
}

std::string slope(const SpikeReport& r, const std::string& q) {
    const SpikeQuantity& s = r.quantity(q);
    return s.censored() ? "censored" : num(s.fit.slope);
}

bool meets(const SpikeReport& r, const std::string& q) {
    const SpikeQuantity& s = r.quantity(q);
    return !s.censored() && s.fit.slope >= s.required_slope;
}

Verdict spike_orders(const SpikeRuns& s) {
    Verdict v{9, "spike orders eps, eps^3 and remainder o(eps^2)"};
    const bool leading = meets(s.cash, "int_E_x1_sq") && meets(s.cash, "int_E_y1_sq") &&
                         meets(s.cash, "sup_E_x1_4");
    const bool nonlinear = meets(s.tanh, "int_E_x1_sq") && meets(s.tanh, "int_E_y1_sq") &&
                           meets(s.tanh, "sup_E_x1_4") && meets(s.tanh, "rem_sup_E_x_sq") &&
                           meets(s.tanh, "rem_sup_E_y_sq");
    v.seconds = s.seconds;
    v.pass = leading && nonlinear && v.seconds < 900.0;
    v.detail = "cash: x1 " + slope(s.cash, "int_E_x1_sq") + ", y1 " + slope(s.cash, "int_E_y1_sq") + ", x1^4 " +
               slope(s.cash, "sup_E_x1_4") + ", remainders " + slope(s.cash, "rem_sup_E_x_sq") +
               "; tanh-cash: x1 " + slope(s.tanh, "int_E_x1_sq") + ", y1 " + slope(s.tanh, "int_E_y1_sq") +
               ", x1^4 " + slope(s.tanh, "sup_E_x1_4") + ", remainder x " + slope(s.tanh, "rem_sup_E_x_sq") +
               ", remainder y " + slope(s.tanh, "rem_sup_E_y_sq");
    return v;
}

Verdict duality(const SpikeRuns& s) {
    Verdict v{10, "adjoint duality within 3 SE on every spike experiment"};
    bool pass = true;
    std::ostringstream d;
    auto one = [&](const char* name, const SpikeReport& r) {
        double worst = 0.0, diff = 0.0;
        bool ok = true;
        for (const auto& c : r.duality) {
            ok = ok && c.within(3.0);
            const double z = c.difference.se > 0 ? std::abs(c.difference.mean) / c.difference.se
                                                 : std::numeric_limits<double>::infinity();
            worst = std::max(worst, z);
            diff = std::max(diff, std::abs(c.difference.mean));
        }
        pass = pass && ok;
        d << name << (ok ? " ok" : " fails") << " (max|diff| " << num(diff) << ", max |diff|/se " << num(worst)
          << "); ";
    };
    one("cash", s.cash);
    one("tanh-cash", s.tanh);
    one("noisy-cash", s.noisy);
    v.pass = pass;
    v.detail = d.str();
    v.detail.resize(v.detail.size() - 2);
    return v;
}

Verdict constrained_reduction() {
    Verdict v{11, "zero constraints with psi=(0,0,1) reproduce the unconstrained run"};
    const auto t0 = Clock::now();
    nlohmann::json j = nlohmann::json::parse(R"({
        "model": "cash-management",
        "levy": {"family": "compound-poisson", "kappa": 1.0, "rate": 1.0, "jump_scale": 0.5},
        "grid": {"T": 1.0, "N": 1000},
        "monte_carlo": {"paths": 200, "seed": 4, "tol": 1e-10, "picard_max": 100},
        "constraints": {"G1": {"a": 0.0, "b": 0.0}, "G0": {"a": 0.0, "b": 0.0}, "rho": 0.01, "eps": 0.001}
    })");
    const cli::RunConfig c = cli::validate_config(j);
    const Ensemble ens = cli::detail::ensemble(c);
    const cli::ConstrainedDemo d = cli::run_constrained_demo(c, ens);
    const CoefficientSet cs = c.model();
    const ControlProcess u = cli::detail::base_control(c, ens.grid);
    const FbsdeSolution traj = solve_fbsde({cs, u, c.x0}, ens, c.solver());
    const AdjointSolution adj = solve_adjoint(cs, traj, ens, c.solver());
    const auto& m = d.multipliers.normalized;
    const bool psi = m.psi1 == 0.0 && m.psi2 == 0.0 && std::abs(m.psi3) == 1.0;
    const bool same = adj.x == d.adjoint.x && adj.y == d.adjoint.y && adj.z == d.adjoint.z;
    const SmpReport plain = check_smp(cs, traj, adj, adjoint_feedback_table(adj, *c.linear), c.probes(), ens, 1e-6);
    const bool smp_same = plain.min_margin == d.smp.smp.min_margin && plain.violations == d.smp.smp.violations;
    v.seconds = since(t0);
    v.pass = psi && same && smp_same;
    v.detail = "psi = (" + num(m.psi1) + ", " + num(m.psi2) + ", " + num(m.psi3) + "); adjoint " +
               (same ? "bitwise equal" : "differs") + "; SMP report " + (smp_same ? "equal" : "differs");
    return v;
}

Verdict monotonicity() {
    Verdict v{12, "drift pair certified at C=min(m2,n1); diffusion witness (1,0,0)"};
    const auto t0 = Clock::now();
    const LinearModelSpec s;
    const MonotonicityReport r = check_monotonicity(cash_model(s), std::min(s.m2, s.n1), Box{}, 10000);
    bool witness = false;
    std::string w = "none";
    if (r.diffusion.witness) {
        const Witness& x = *r.diffusion.witness;
        witness = x.x1 - x.x2 == 1.0 && x.y1 - x.y2 == 0.0 && x.z1 - x.z2 == 0.0;
        w = "(" + num(x.x1 - x.x2) + "," + num(x.y1 - x.y2) + "," + num(x.z1 - x.z2) + ") lhs " + num(x.lhs) +
            " > bound " + num(x.bound);
    }
    v.seconds = since(t0);
    v.pass = r.drift_pair.pass && !r.diffusion.pass && witness;
    v.detail = std::string("drift pair ") + (r.drift_pair.pass ? "holds" : "fails") + " (sharp C " +
               num(r.drift_pair.best_constant) + "); diffusion witness " + w;
    return v;
}

Verdict determinism() {
    namespace fs = std::filesystem;
    Verdict v{13, "byte-identical artifacts on rerun with threads 1 and 4"};
    const auto t0 = Clock::now();
    const fs::path root = fs::temp_directory_path() / "subdiff_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const nlohmann::json cfg = nlohmann::json::parse(R"({
        "model": "cash-management",
        "levy": {"family": "stable", "kappa": 1.0, "alpha": 0.5},
        "grid": {"T": 1.0, "N": 40},
        "monte_carlo": {"paths": 300, "seed": 21, "tol": 1e-8},
        "spike": {"eps": [0.05, 0.1, 0.2, 0.4], "tau": 0.3},
        "constraints": {"eps": 0.025},
        "output": {"dump_paths": 20}
    })");
    const fs::path file = root / "config.json";
    std::ofstream(file) << cfg.dump(2);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    };
    std::ostringstream log;
    std::size_t compared = 0, differing = 0;
    for (const auto& sub : cli::subcommands()) {
        std::vector<fs::path> dirs;
        for (const char* t : {"1", "4", "1"}) {
            dirs.push_back(root / (sub + "-" + t + "-" + std::to_string(dirs.size())));
            cli::run({sub, "--config", file.string(), "--out", dirs.back().string(), "--threads", t}, log);
        }
        for (const auto& entry : fs::directory_iterator(dirs[0])) {
            const auto name = entry.path().filename();
            if (name == "run_manifest.json") continue;
            const std::string a = slurp(entry.path());
            for (std::size_t k = 1; k < dirs.size(); ++k) {
                ++compared;
                if (a != slurp(dirs[k] / name)) ++differing;
            }
        }
    }
    fs::remove_all(root);
    v.seconds = since(t0);
    v.pass = compared > 0 && differing == 0;
    v.detail = std::to_string(compared) + " artifact comparisons over " + std::to_string(cli::subcommands().size()) +
               " subcommands, " + std::to_string(differing) + " differ";
    return v;
}

}  // namespace

int main() {
    std::vector<Verdict> all;
    auto record = [&](Verdict v) {
        print(v);
        all.push_back(std::move(v));
    };
    record(clock_bound());
    record(activity_rate());
    record(quadratic_variation());
    record(brownian_reduction());
    {
        const CashRun run = cash_run();
        record(oracle_equivalence(run));
        record(first_order(run));
        record(maximum_principle(run));
        record(optimality_gap(run));
    }
    {
        const SpikeRuns s = spike_runs();
        record(spike_orders(s));
        record(duality(s));
    }
    record(constrained_reduction());
    record(monotonicity());
    record(determinism());
    std::size_t passed = 0;
    for (const auto& v : all) passed += v.pass;
    std::printf("acceptance: %zu of %zu criteria passed\n", passed, all.size());
    return 0;
}
