// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "rbsde_lab/scenario.hpp"
#include "rbsde_lab/stopping.hpp"
#include "support.hpp"

using namespace rbsde;
using testing_support::jump_tree;
using testing_support::tree;
using testing_support::uniform;

namespace {

constexpr std::uint64_t kSeed = 20240611;

struct Instance {
    Lattice lattice;
    Driver driver;
    LadlagProcess xi;
};

struct Tally {
    std::size_t checked = 0;
    std::size_t failed = 0;
    double worst = 0.0;
    std::string first_failure;

    void record(bool ok, double value, const std::string& where) {
        ++checked;
        if (std::isfinite(value)) worst = std::max(worst, value);
        if (ok) return;
        if (failed++ == 0) first_failure = where;
    }
    bool pass() const { return failed == 0 && checked > 0; }
};

struct Line {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Line> g_lines;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    g_lines.push_back({id, name, pass, detail});
    std::printf("[%s] criterion %2d %-28s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string summary(const Tally& t, const char* what) {
    char buffer[256];
    std::snprintf(buffer, sizeof buffer, "checks=%zu failed=%zu max %s=%.3e", t.checked, t.failed, what, t.worst);
    std::string s = buffer;
    if (t.failed > 0) s += " first=" + t.first_failure;
    return s;
}

std::string label(const char* set, std::size_t index, const Instance& inst) {
    return std::string(set) + "#" + std::to_string(index) + "/" + inst.driver.name;
}

std::vector<Driver> base_drivers() { return {Driver::zero(), Driver::linear(-1.0, 0.0, 0.0), Driver::abs_z(1.0)}; }

// Depth-3 binary trees with right-continuous obstacles, one per driver.
std::vector<Instance> right_continuous_set() {
    std::vector<Instance> out;
    for (std::size_t i = 0; i < 100; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed, i));
        const Lattice l = tree(3.0 * uniform(rng, 0.1, 0.3), 3);
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.0);
        for (const Driver& d : base_drivers()) out.push_back({l, d, xi});
    }
    return out;
}

// Same shape with xi_plus < xi injected at random nodes.
std::vector<Instance> right_jump_set() {
    std::vector<Instance> out;
    for (std::size_t i = 0; i < 100; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed + 1, i));
        const Lattice l = tree(3.0 * uniform(rng, 0.1, 0.3), 3);
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.4);
        const auto drivers = base_drivers();
        out.push_back({l, drivers[i % drivers.size()], xi});
    }
    return out;
}

Driver jump_driver(double lambda, double theta) {
    return make_driver("custom:jump_linear", {{"a", -0.5}, {"b", 0.3}, {"g", theta * lambda}, {"c", 0.1}},
                       std::nullopt, lambda);
}

// Depth-3 ternary trees with lambda dt <= 0.2 and right jumps.
std::vector<Instance> jump_set(bool& monotone) {
    std::vector<Instance> out;
    monotone = true;
    for (std::size_t i = 0; i < 100; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed + 2, i));
        const double dt = uniform(rng, 0.1, 0.3);
        const double lambda = uniform(rng, 0.1, 0.2 / dt);
        const Lattice l = jump_tree(3.0 * dt, 3, lambda, uniform(rng, -1.0, 1.0));
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.3);
        const Driver d = jump_driver(lambda, uniform(rng, -1.0, 1.0));
        SamplingBox box;
        box.t_max = l.grid().horizon();
        monotone = monotone && check_jump_monotonicity(d, lambda, 500, detail::mix_seed(kSeed + 3, i), box).ok;
        out.push_back({l, d, xi});
    }
    return out;
}

double max_push(const Lattice& l, const RBSDESolution& s) {
    double m = 0.0;
    for (NodeId n = 0; n < l.level_begin(l.steps()); ++n) m = std::max({m, s.d_a[n], s.d_c[n]});
    return m;
}

// Oracle equivalence from the given start level: library value vs library
// brute force and vs the test-side enumeration.
void check_oracle(const Instance& inst, int start_level, const std::string& where, Tally& t) {
    const Lattice& l = inst.lattice;
    const StoppingRule s = StoppingRule::at_level(l, start_level);
    const StoppingReport v = value_and_risk(l, inst.driver, inst.xi, s);
    const BruteForceResult bf = brute_force_value(l, inst.driver, inst.xi, s);
    double diff = 0.0;
    for (NodeId n = l.level_begin(start_level); n < l.level_end(start_level); ++n) {
        std::vector<std::vector<std::uint8_t>> rules;
        testing_support::subtree_rules(l, n, rules);
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& stop : rules) {
            best = std::max(best, testing_support::bsde_recursive(l, inst.driver, stop, inst.xi.point, n));
        }
        diff = std::max({diff, std::abs(v.value[n] - bf.value[n]), std::abs(v.value[n] - best)});
    }
    t.record(diff <= 1e-10, diff, where);
}

void check_skorokhod_exact(const Instance& inst, const RBSDESolution& s, const std::string& where, Tally& t) {
    const SkorokhodReport r = check_skorokhod(inst.lattice, s, inst.xi);
    t.record(r.ok && r.max_budget_residual <= 1e-12, r.max_budget_residual, where);
}

void check_gl(const Lattice& l, const RBSDESolution& s, const std::string& where, Tally& t) {
    const DiscreteSemimartingale semi = to_semimartingale(l, s);
    for (double beta : {0.0, 2.0}) {
        const double r = galchouk_lenglart_check(l, semi, beta);
        t.record(r <= 1e-10, r, where + "/beta=" + std::to_string(beta));
    }
}

void check_mertens(const Instance& inst, const RBSDESolution& s, const std::string& where, Tally& round_trip,
                   Tally& negation) {
    const Lattice& l = inst.lattice;
    const MertensDecomposition m = mertens_decompose(l, inst.driver, LadlagProcess{s.y, s.y_plus});
    NodeValues a = l.make_values(0.0), c = l.make_values(0.0);
    double diff = 0.0;
    for (int k = 0; k < l.steps(); ++k) {
        for (NodeId n = l.level_begin(k); n < l.level_end(k); ++n) {
            diff = std::max({diff, std::abs(m.z[n] - s.z[n]), std::abs(m.d_a[n] - s.d_a[n]),
                             std::abs(m.d_c[n] - s.d_c[n])});
            if (l.has_jumps()) diff = std::max(diff, std::abs(m.jump[n] - s.jump[n]));
            c[n] += m.d_c[n];
            for (NodeId child : l.children(n)) {
                a[child] = a[n] + m.d_a[n];
                c[child] = c[n];
            }
        }
    }
    for (NodeId n = 0; n < l.size(); ++n) diff = std::max({diff, std::abs(a[n] - s.a[n]), std::abs(c[n] - s.c[n])});
    round_trip.record(diff <= 1e-12, diff, where);

    if (max_push(l, s) <= 1e-9) return;
    LadlagProcess neg{s.y, s.y_plus};
    for (double& v : neg.point) v = -v;
    for (double& v : neg.right_limit) v = -v;
    bool rejected = false;
    try {
        mertens_decompose(l, inst.driver, neg);
    } catch (const Error& e) {
        rejected = e.code() == ErrorCode::NotSupermartingale;
    }
    negation.record(rejected, 0.0, where);
}

Driver shifted(const Driver& base, double shift) {
    Driver d = base;
    d.name = base.name + "+shift";
    const Driver::Function f = base.function;
    d.function = [f, shift](double t, double y, double z, double k) { return f(t, y, z, k) + shift; };
    d.kind = DriverKind::custom;
    return d;
}

// Dominated pair: (xi2, f2) <= (xi1, f1); checks Y2 <= Y1 + 1e-12.
void check_comparison(const Lattice& l, const Driver& base, const LadlagProcess& xi, std::mt19937_64& rng,
                      const std::string& where, Tally& t, Tally& gl) {
    LadlagProcess lower = xi;
    for (NodeId n = 0; n < l.size(); ++n) {
        lower.point[n] -= uniform(rng, 0.0, 0.3);
        if (!l.is_terminal(n)) lower.right_limit[n] = std::min(xi.right_limit[n], lower.point[n]);
    }
    const Driver upper = shifted(base, uniform(rng, 0.0, 0.5));
    const RBSDESolution s1 = solve_rbsde(l, upper, xi).solution;
    const RBSDESolution s2 = solve_rbsde(l, base, lower).solution;
    double excess = -std::numeric_limits<double>::infinity();
    for (NodeId n = 0; n < l.size(); ++n) excess = std::max(excess, s2.y[n] - s1.y[n]);
    bool ok = excess <= 1e-12;
    try {
        ok = ok && compare_solutions(l, upper, s1, base, s2).pass;
    } catch (const Error&) {
        ok = false;
    }
    t.record(ok, std::max(excess, 0.0), where);
    check_gl(l, s1, where, gl);
    check_gl(l, s2, where, gl);
}

}  // namespace

int main() {
    Tally c1, c2, c4, c5, c6, c7, c8a, c8b, c9, c9neg, c10, c12_oracle, c12_skorokhod, c12_comparison;

    const std::vector<Instance> rc = right_continuous_set();
    const std::vector<Instance> rj = right_jump_set();

    // (1), (2), (7), (8), (9), (10) on the right-continuous set.
    for (std::size_t i = 0; i < rc.size(); ++i) {
        const Instance& inst = rc[i];
        const Lattice& l = inst.lattice;
        const std::string where = label("rc", i, inst);
        check_oracle(inst, 0, where, c1);

        const RBSDESolution s = solve_rbsde(l, inst.driver, inst.xi).solution;
        check_skorokhod_exact(inst, s, where, c2);
        check_mertens(inst, s, where, c9, c9neg);
        check_gl(l, s, where, c10);

        const StoppingRule s0 = StoppingRule::at_level(l, 0);
        const double big_l = default_epsilon_constant(inst.driver.lipschitz, l.grid().horizon());
        for (double eps : {0.5, 0.1, 0.01}) {
            const StoppingRule tau = epsilon_optimal_time(l, s, inst.xi, s0, eps);
            const double achieved = f_expectation(l, inst.driver, s0, tau, inst.xi.point)[0];
            c7.record(achieved >= s.y[0] - big_l * eps - 1e-12, s.y[0] - achieved, where);
        }

        const BruteForceResult bf = brute_force_value(l, inst.driver, inst.xi, s0);
        c8a.record(check_optimality(l, inst.driver, inst.xi, s, bf.best, s0).pass, 0.0, where);
        const StoppingRule terminal = StoppingRule::terminal(l);
        const double terminal_value = f_expectation(l, inst.driver, s0, terminal, inst.xi.point)[0];
        if (bf.value[0] > terminal_value + 1e-10) {
            c8b.record(!check_optimality(l, inst.driver, inst.xi, s, terminal, s0).pass, 0.0, where);
        }
    }
    report(1, "oracle_equivalence", c1.pass(), summary(c1, "|diff|"));

    for (std::size_t i = 0; i < rj.size(); ++i) {
        const Instance& inst = rj[i];
        const std::string where = label("rj", i, inst);
        const RBSDESolution s = solve_rbsde(inst.lattice, inst.driver, inst.xi).solution;
        check_skorokhod_exact(inst, s, where, c2);
        check_mertens(inst, s, where, c9, c9neg);
        check_gl(inst.lattice, s, where, c10);
    }
    report(2, "skorokhod_exactness", c2.pass(), summary(c2, "budget residual"));

    // (3) deterministic spike.
    {
        const Lattice l = tree(1.0, 2);
        LadlagProcess xi = LadlagProcess::constant(l, 0.0);
        for (NodeId n = l.level_begin(1); n < l.level_end(1); ++n) xi.point[n] = 1.0;
        const RBSDESolution s = solve_rbsde(l, Driver::zero(), xi).solution;
        bool ok = s.y[0] == 1.0;
        double total_c = 0.0;
        for (NodeId n = 0; n < l.size(); ++n) {
            ok = ok && s.a[n] == 0.0;
            if (l.is_terminal(n)) {
                ok = ok && s.c[n] == 1.0;
                total_c += l.probability(n) * s.c[n];
                continue;
            }
            ok = ok && s.z[n] == 0.0 && s.d_a[n] == 0.0;
        }
        ok = ok && total_c == 1.0;
        check_gl(l, s, "spike", c10);
        char detail[128];
        std::snprintf(detail, sizeof detail, "Y0=%.17g E[C_T]=%.17g", s.y[0], total_c);
        report(3, "right_jump_capture", ok, detail);
    }

    // (4) dominated pairs, depth 1..6.
    for (std::size_t i = 0; i < 100; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed + 4, i));
        const int n = 1 + static_cast<int>(i % 6);
        const Lattice l = tree(n * uniform(rng, 0.05, 0.3), n);
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.3);
        const Driver base = base_drivers()[i % 3];
        check_comparison(l, base, xi, rng, "cmp#" + std::to_string(i), c4, c10);
    }
    report(4, "comparison", c4.pass(), summary(c4, "excess"));

    // (5) Picard contraction with K <= 0.5 and dt <= 0.1.
    for (std::size_t i = 0; i < 50; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed + 5, i));
        const int n = 4 + static_cast<int>(i % 5);
        const Lattice l = tree(n * uniform(rng, 0.05, 0.1), n);
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.3);
        const double k = uniform(rng, 0.1, 0.5);
        const Driver d = i % 2 == 0 ? make_driver("custom:mixed", {{"scale", k}, {"c", 0.2}}, std::nullopt)
                                    : Driver::linear(uniform(rng, -k, k), uniform(rng, -k, k), 0.1);
        PicardOptions o;
        o.tolerance = 1e-9;
        o.max_iterations = 50;
        const RBSDEResult r = solve_rbsde(l, d, xi, o);
        double worst = 0.0;
        for (double ratio : r.diagnostics.ratios) worst = std::max(worst, ratio);
        const bool ok = r.diagnostics.converged && r.diagnostics.iterations <= 50 && worst < 1.0;
        c5.record(ok, worst, "picard#" + std::to_string(i));
        check_gl(l, r.solution, "picard#" + std::to_string(i), c10);
    }
    report(5, "picard_contraction", c5.pass(), summary(c5, "ratio"));

    // (6) a priori Z estimate on frozen-driver pairs.
    for (std::size_t i = 0; i < 100; ++i) {
        std::mt19937_64 rng(detail::mix_seed(kSeed + 6, i));
        const int n = 1 + static_cast<int>(i % 5);
        const Lattice l = tree(n * uniform(rng, 0.1, 0.3), n);
        const LadlagProcess xi = testing_support::random_obstacle(l, rng, -1.0, 1.0, 0.3);
        NodeValues f1 = l.make_values(), f2 = l.make_values();
        for (NodeId m = 0; m < l.level_begin(n); ++m) {
            f1[m] = uniform(rng, -1.0, 1.0);
            f2[m] = uniform(rng, -1.0, 1.0);
        }
        const RBSDESolution s1 = solve_rbsde_frozen(l, f1, xi);
        const RBSDESolution s2 = solve_rbsde_frozen(l, f2, xi);
        const AprioriReport a = apriori_z_check(l, s1, s2, 1.0, 1.0);
        c6.record(a.lhs <= 1.05 * a.rhs, a.rhs > 0.0 ? a.lhs / a.rhs : 0.0, "apriori#" + std::to_string(i));
    }
    report(6, "apriori_z_estimate", c6.pass(), summary(c6, "lhs/rhs"));

    report(7, "epsilon_optimality", c7.pass(), summary(c7, "Y0-value"));
    report(8, "optimality_round_trip", c8a.pass() && c8b.pass(),
           "argmax: " + summary(c8a, "-") + "; terminal rejected: " + summary(c8b, "-"));
    report(9, "mertens_round_trip", c9.pass() && c9neg.pass(),
           summary(c9, "|diff|") + "; negations rejected=" + std::to_string(c9neg.checked - c9neg.failed) + "/" +
               std::to_string(c9neg.checked));

    // (12) jump mode; its outputs also feed (10).
    bool monotone = false;
    const std::vector<Instance> js = jump_set(monotone);
    for (std::size_t i = 0; i < js.size(); ++i) {
        const Instance& inst = js[i];
        const std::string where = label("jump", i, inst);
        check_oracle(inst, 1, where, c12_oracle);
        const RBSDESolution s = solve_rbsde(inst.lattice, inst.driver, inst.xi).solution;
        check_skorokhod_exact(inst, s, where, c12_skorokhod);
        check_gl(inst.lattice, s, where, c10);
        std::mt19937_64 rng(detail::mix_seed(kSeed + 7, i));
        check_comparison(inst.lattice, inst.driver, inst.xi, rng, where, c12_comparison, c10);
    }

    report(10, "galchouk_lenglart", c10.pass(), summary(c10, "residual"));

    // (11) linear driver, obstacle never binding, T = 1: Y0(N) -> e^{-1}.
    {
        ScenarioConfig config;
        config.horizon = 1.0;
        config.steps = 10;
        config.driver_kind = "linear";
        config.driver_params = {{"a", -1.0}};
        config.obstacle.kind = "constant";
        config.obstacle.value = 0.0;
        config.obstacle.terminal = 1.0;
        const ConvergenceTable table = convergence_study(config, {10, 20, 40, 80});
        bool ok = table.rows.size() == 4;
        std::string detail = "errors:";
        std::vector<double> errors;
        for (const ConvergenceRow& r : table.rows) {
            errors.push_back(std::abs(r.y0 - std::exp(-1.0)));
            char buffer[48];
            std::snprintf(buffer, sizeof buffer, " %.4e", errors.back());
            detail += buffer;
        }
        detail += " ratios:";
        for (std::size_t i = 1; i < errors.size(); ++i) {
            const double ratio = errors[i - 1] / errors[i];
            ok = ok && ratio >= 1.7 && ratio <= 2.3;
            char buffer[32];
            std::snprintf(buffer, sizeof buffer, " %.3f", ratio);
            detail += buffer;
        }
        report(11, "linear_convergence", ok, detail);
    }

    report(12, "jump_mode", monotone && c12_oracle.pass() && c12_skorokhod.pass() && c12_comparison.pass(),
           std::string("monotone=") + (monotone ? "yes" : "no") + "; oracle " + summary(c12_oracle, "|diff|") +
               "; skorokhod " + summary(c12_skorokhod, "residual") + "; comparison " +
               summary(c12_comparison, "excess"));

    const auto failed = std::count_if(g_lines.begin(), g_lines.end(), [](const Line& l) { return !l.pass; });
    std::printf("%zu/%zu criteria passed\n", g_lines.size() - static_cast<std::size_t>(failed), g_lines.size());
    return failed == 0 ? 0 : 1;
}
