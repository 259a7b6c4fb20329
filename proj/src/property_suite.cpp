#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <thread>

#include "detail/random.hpp"
#include "rbsde_lab/scenario.hpp"

namespace rbsde {

namespace {

using nlohmann::json;

constexpr double kExact = 1e-12;
constexpr double kCriterion = 1e-10;
constexpr std::size_t kMaxWitnesses = 100;
constexpr int kMaxOracleDepth = 4;

struct Instance {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    int steps = 0;
    double dt = 0.0;
    LatticeMode mode = LatticeMode::diffusion;
    double lambda = 0.0;
    double mark = 0.0;
};

struct Outcome {
    std::string property;
    std::string driver;
    bool pass = true;
    std::string node;
    std::string detail;
};

struct InstanceResult {
    Instance instance;
    std::vector<Outcome> outcomes;
};

class Recorder {
public:
    explicit Recorder(const Lattice& lattice) : lattice_(lattice) {}

    void check(const std::string& property, const std::string& driver, bool pass,
               std::optional<NodeId> node = std::nullopt, std::string detail = {}) {
        Outcome o{property, driver, pass, {}, {}};
        if (!pass) {
            if (node) o.node = lattice_.path_word(*node);
            o.detail = std::move(detail);
        }
        outcomes.push_back(std::move(o));
    }

    std::vector<Outcome> outcomes;

private:
    const Lattice& lattice_;
};

std::string fmt(double x) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.17g", x);
    return buffer;
}

Instance make_instance(std::uint64_t suite_seed, std::size_t index, int depth, LatticeMode mode) {
    Instance inst;
    inst.index = index;
    inst.seed = detail::mix_seed(suite_seed, index);
    inst.steps = depth;
    inst.mode = mode;
    std::mt19937_64 rng(inst.seed);
    inst.dt = detail::uniform(rng, 0.1, 0.3);
    if (mode == LatticeMode::diffusion_plus_jump) {
        inst.lambda = detail::uniform(rng, 0.1, 0.2 / inst.dt);
        inst.mark = detail::uniform(rng, -1.0, 1.0);
    }
    return inst;
}

std::vector<Driver> suite_drivers(const Instance& inst, std::mt19937_64& rng) {
    std::vector<Driver> drivers{Driver::zero(), Driver::linear(-1.0, 0.0, 0.0), Driver::abs_z(1.0)};
    if (inst.mode == LatticeMode::diffusion_plus_jump) {
        const double theta = detail::uniform(rng, -1.0, 1.0);
        drivers.push_back(make_driver("custom:jump_linear",
                                      DriverParams{{"a", -0.5}, {"b", 0.3}, {"g", theta * inst.lambda}, {"c", 0.1}},
                                      std::nullopt, inst.lambda));
    }
    return drivers;
}

Driver shifted(const Driver& base, double shift) {
    const Driver::Function f = base.function;
    Driver d = Driver::custom(base.name + "+" + fmt(shift),
                              [f, shift](double t, double y, double z, double k) { return f(t, y, z, k) + shift; },
                              base.lipschitz, base.depends_on);
    d.jump_monotonicity = base.jump_monotonicity;
    return d;
}

// Nonnegative strong E^f-supermartingale increment for candidate X = Y + M.
LadlagProcess supermartingale_bump(const Lattice& lattice, const Driver& d, std::mt19937_64& rng) {
    LadlagProcess m{lattice.make_values(), lattice.make_values()};
    const int steps = lattice.steps();
    const double dt = lattice.dt();
    const double k = d.lipschitz;
    const double weight = std::sqrt(lattice.jump_intensity());
    for (NodeId n = lattice.level_begin(steps); n < lattice.level_end(steps); ++n) m.point[n] = detail::uniform01(rng);
    for (int level = steps - 1; level >= 0; --level) {
        for (NodeId n = lattice.level_begin(level); n < lattice.level_end(level); ++n) {
            const MartingaleComponent mc = martingale_component(lattice, m.point, n);
            const double push = k * (std::abs(mc.z) + weight * std::abs(mc.jump)) * dt + detail::uniform(rng, 0.0, 0.5);
            m.right_limit[n] = (mc.mean + push) / (1.0 - k * dt);
            m.point[n] = m.right_limit[n] + (detail::uniform01(rng) < 0.5 ? detail::uniform(rng, 0.0, 0.5) : 0.0);
        }
    }
    return m;
}

void mutate(RBSDESolution& sol) { sol.y[0] += 1e-3; }

void run_instance(const Instance& inst, bool mutation, Recorder& rec) {
    Lattice::Options options;
    options.mode = inst.mode;
    options.jump_intensity = inst.lambda;
    options.jump_mark = inst.mark;
    const Lattice lattice = Lattice::build(TimeGrid(inst.dt * inst.steps, inst.steps), options);
    std::mt19937_64 rng(detail::mix_seed(inst.seed, 1));
    const LadlagProcess xi = random_obstacle(lattice, rng, -1.0, 1.0, 0.3);
    const std::vector<Driver> drivers = suite_drivers(inst, rng);
    const double horizon = lattice.grid().horizon();
    const NodeId root = lattice.root();

    const StoppingRule start0 = StoppingRule::at_level(lattice, 0);
    const int depth_limit = max_enumeration_depth(lattice.branching());
    const StoppingRule oracle_start = StoppingRule::at_level(lattice, std::max(0, inst.steps - depth_limit));

    for (const Driver& d : drivers) {
        const std::string& name = d.name;
        RBSDEResult solved;
        try {
            solved = solve_rbsde(lattice, d, xi);
        } catch (const Error& e) {
            rec.check("solve", name, false, std::nullopt, e.what());
            continue;
        }
        RBSDESolution& sol = solved.solution;
        if (mutation) mutate(sol);

        // Oracle equivalence and optimality criterion.
        std::optional<BruteForceResult> brute;
        if (inst.steps <= kMaxOracleDepth) {
            try {
                brute = brute_force_value(lattice, d, xi, oracle_start);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::CountOverflow) throw;
            }
        }
        if (brute) {
            std::optional<NodeId> worst;
            double gap = 0.0;
            for (NodeId n : oracle_start.stopping_nodes()) {
                const double g = std::abs(brute->value[n] - sol.y[n]);
                if (g > gap) {
                    gap = g;
                    worst = n;
                }
            }
            rec.check("oracle_equivalence", name, gap <= kCriterion, worst,
                      "|Y - brute force| = " + fmt(gap) + " over " + std::to_string(brute->rules) + " rules");

            const OptimalityReport best = check_optimality(lattice, d, xi, sol, brute->best, oracle_start);
            rec.check("optimality_argmax", name, best.pass, best.witness, to_string(best.reason));

            const StoppingRule terminal = StoppingRule::terminal(lattice);
            const NodeValues terminal_value = f_expectation(lattice, d, oracle_start, terminal, xi.point);
            bool improves = false;
            for (NodeId n : oracle_start.stopping_nodes()) {
                improves = improves || brute->value[n] > terminal_value[n] + kCriterion;
            }
            if (improves) {
                const OptimalityReport t = check_optimality(lattice, d, xi, sol, terminal, oracle_start);
                rec.check("optimality_terminal_rejected", name, !t.pass, root,
                          "always-terminal rule accepted although brute force improves on it");
            }
        }

        // Epsilon-optimality with L = e^{KT}.
        const double big_l = default_epsilon_constant(d.lipschitz, horizon);
        for (double eps : {0.5, 0.1, 0.01}) {
            const StoppingRule tau = epsilon_optimal_time(lattice, sol, xi, start0, eps);
            const double v = f_expectation(lattice, d, start0, tau, xi.point)[root];
            rec.check("epsilon_optimality", name, v >= sol.y[root] - big_l * eps - kExact, root,
                      "eps = " + fmt(eps) + ": value " + fmt(v) + " < Y0 - L eps = " + fmt(sol.y[root] - big_l * eps));
        }

        // Skorokhod conditions and budget identity.
        const SkorokhodReport sk = check_skorokhod(lattice, sol, xi);
        std::optional<NodeId> sk_node;
        for (const auto* list : {&sk.interval_violations, &sk.point_violations, &sk.barrier_violations,
                                 &sk.sign_violations}) {
            if (!sk_node && !list->empty()) sk_node = list->front();
        }
        rec.check("skorokhod", name, sk.ok, sk_node, "budget residual " + fmt(sk.max_budget_residual));

        // Mertens round trip and rejection of the negated process.
        const LadlagProcess as_process{sol.y, sol.y_plus};
        const MertensAttempt attempt = try_mertens_decompose(lattice, d, as_process);
        if (!attempt.decomposition) {
            rec.check("mertens_roundtrip", name, false, attempt.witness, attempt.reason);
        } else {
            double err = 0.0;
            std::optional<NodeId> where;
            for (NodeId n = 0; n < lattice.size(); ++n) {
                if (lattice.is_terminal(n)) continue;
                double e = std::max({std::abs(attempt.decomposition->z[n] - sol.z[n]),
                                     std::abs(attempt.decomposition->d_a[n] - sol.d_a[n]),
                                     std::abs(attempt.decomposition->d_c[n] - sol.d_c[n])});
                if (lattice.has_jumps()) e = std::max(e, std::abs(attempt.decomposition->jump[n] - sol.jump[n]));
                if (e > err) {
                    err = e;
                    where = n;
                }
            }
            rec.check("mertens_roundtrip", name, err <= kExact, where, "max deviation " + fmt(err));
        }
        double largest_push = 0.0;
        for (NodeId n = 0; n < lattice.size(); ++n) {
            if (!lattice.is_terminal(n)) largest_push = std::max({largest_push, sol.d_a[n], sol.d_c[n]});
        }
        if (largest_push > 1e-9) {
            LadlagProcess negated{sol.y, sol.y_plus};
            for (double& v : negated.point) v = -v;
            for (double& v : negated.right_limit) v = -v;
            bool rejected = false;
            try {
                mertens_decompose(lattice, d, negated);
            } catch (const Error& e) {
                rejected = e.code() == ErrorCode::NotSupermartingale;
            }
            rec.check("mertens_rejects_negation", name, rejected, root, "negated solution was decomposed");
        }

        // Change-of-variables identity.
        const DiscreteSemimartingale semi = to_semimartingale(lattice, sol);
        for (double beta : {0.0, 2.0}) {
            double residual = 0.0;
            std::string detail;
            try {
                residual = galchouk_lenglart_check(lattice, semi, beta);
            } catch (const Error& e) {
                residual = std::numeric_limits<double>::infinity();
                detail = e.what();
            }
            rec.check("galchouk_lenglart", name, residual <= kCriterion, std::nullopt,
                      "beta = " + fmt(beta) + ": residual " + fmt(residual) + " " + detail);
        }

        // Strong supermartingale and Snell minimality.
        const SupermartingaleReport super = check_strong_supermartingale(lattice, d, as_process);
        rec.check("supermartingale", name, super.pass, super.witness, super.reason);
        const LadlagProcess bump = supermartingale_bump(lattice, d, rng);
        LadlagProcess candidate = as_process;
        for (NodeId n = 0; n < lattice.size(); ++n) {
            candidate.point[n] += bump.point[n];
            if (!lattice.is_terminal(n)) candidate.right_limit[n] += bump.right_limit[n];
        }
        try {
            const MinimalityReport minimal = snell_minimality_check(lattice, d, xi, candidate);
            rec.check("snell_minimality", name, minimal.pass, minimal.witness, "margin " + fmt(minimal.min_margin));
            const MinimalityReport tight = snell_minimality_check(lattice, d, xi, as_process);
            rec.check("snell_minimality", name, tight.pass && std::abs(tight.min_margin) <= kExact, tight.witness,
                      "solution as candidate: margin " + fmt(tight.min_margin));
        } catch (const Error& e) {
            rec.check("snell_minimality", name, false, std::nullopt, e.what());
        }

        // Comparison on a dominated pair (xi2 <= xi1, f2 <= f1).
        LadlagProcess xi2 = xi;
        for (NodeId n = 0; n < lattice.size(); ++n) {
            xi2.point[n] -= detail::uniform(rng, 0.0, 0.3);
            if (!lattice.is_terminal(n)) {
                xi2.right_limit[n] = std::min(xi.right_limit[n] - detail::uniform(rng, 0.0, 0.3), xi2.point[n]);
            }
        }
        const Driver upper = shifted(d, detail::uniform(rng, 0.0, 0.5));
        try {
            RBSDESolution first = solve_rbsde(lattice, upper, xi).solution;
            RBSDESolution second = solve_rbsde(lattice, d, xi2).solution;
            if (mutation) mutate(second);
            const ComparisonReport cmp = compare_solutions(lattice, upper, first, d, second, 256, inst.seed);
            rec.check("comparison", name, cmp.pass, cmp.witness, "max Y2 - Y1 = " + fmt(cmp.max_excess));
        } catch (const Error& e) {
            rec.check("comparison", name, false, std::nullopt, e.what());
        }

        // Bitwise independence of the sweep order.
        PicardOptions shuffled;
        shuffled.order = SweepOrder{SweepOrder::Kind::shuffled, inst.seed};
        const RBSDESolution again = solve_rbsde(lattice, d, xi, shuffled).solution;
        bool identical = true;
        std::optional<NodeId> differs;
        for (NodeId n = 0; n < lattice.size() && identical; ++n) {
            if (again.y[n] != sol.y[n]) {
                identical = false;
                differs = n;
            }
        }
        rec.check("order_invariance", name, identical, differs, "shuffled sweep changed Y");
    }

    // A priori Z-estimate on frozen drivers.
    NodeValues f1 = lattice.make_values();
    NodeValues f2 = lattice.make_values();
    for (NodeId n = 0; n < lattice.size(); ++n) {
        if (lattice.is_terminal(n)) continue;
        f1[n] = detail::uniform(rng, -1.0, 1.0);
        f2[n] = detail::uniform(rng, -1.0, 1.0);
    }
    RBSDESolution s1 = solve_rbsde_frozen(lattice, f1, xi);
    RBSDESolution s2 = solve_rbsde_frozen(lattice, f2, xi);
    if (mutation) {
        for (NodeId n = 0; n < lattice.size(); ++n) {
            if (!lattice.is_terminal(n)) s1.z[n] += 10.0;
        }
    }
    const AprioriReport apriori = apriori_z_check(lattice, s1, s2, 1.0, 1.0);
    rec.check("apriori_z", "frozen", apriori.pass, std::nullopt,
              "lhs " + fmt(apriori.lhs) + " > 1.05 rhs " + fmt(1.05 * apriori.rhs));

    // Picard contraction for K = 0.5.
    const Driver mixed = make_driver("custom:mixed", DriverParams{{"scale", 0.5}, {"c", 0.2}}, std::nullopt);
    PicardOptions picard;
    picard.tolerance = 1e-9;
    picard.max_iterations = 50;
    try {
        RBSDEResult result = solve_rbsde(lattice, mixed, xi, picard);
        double worst = 0.0;
        for (double r : result.diagnostics.ratios) worst = std::max(worst, r);
        if (mutation) worst += 1.0;
        rec.check("picard_contraction", mixed.name, result.diagnostics.converged && worst < 1.0, std::nullopt,
                  "iterations " + std::to_string(result.diagnostics.iterations) + ", worst ratio " + fmt(worst));
    } catch (const Error& e) {
        rec.check("picard_contraction", mixed.name, false, std::nullopt, e.what());
    }
}

json instance_json(const Instance& inst) {
    json j{{"index", inst.index},
           {"instance_seed", inst.seed},
           {"T", inst.dt * inst.steps},
           {"N", inst.steps},
           {"dt", inst.dt},
           {"mode", inst.mode == LatticeMode::diffusion ? "diffusion" : "jump"}};
    if (inst.mode == LatticeMode::diffusion_plus_jump) {
        j["lambda"] = inst.lambda;
        j["mark"] = inst.mark;
    }
    return j;
}

}  // namespace

unsigned worker_count_from_env() {
    unsigned hardware = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("RBSDE_LAB_THREADS")) {
        char* end = nullptr;
        const long requested = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && requested >= 1) {
            return std::min(hardware, static_cast<unsigned>(std::min<long>(requested, 1024)));
        }
    }
    return hardware;
}

PropertySuiteResult property_suite(const PropertySuiteOptions& options) {
    PropertySuiteResult result;
    json& report = result.report;
    const bool jump = options.mode == LatticeMode::diffusion_plus_jump;
    report["seed"] = options.seed;
    report["count"] = options.count;
    report["depth"] = options.depth;
    report["mode"] = jump ? "jump" : "diffusion";
    report["mutate"] = options.mutate;
    if (options.depth < 1 || options.depth > 6) {
        result.exit_code = kExitValidation;
        report["error"] = "depth must lie in [1, 6]";
        return result;
    }

    std::vector<std::size_t> indices;
    if (options.only_instance) {
        indices.push_back(*options.only_instance);
    } else {
        for (std::size_t i = 0; i < options.count; ++i) indices.push_back(i);
    }

    std::vector<InstanceResult> results(indices.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t slot = next++; slot < indices.size(); slot = next++) {
            const Instance inst = make_instance(options.seed, indices[slot], options.depth, options.mode);
            Lattice::Options lo;
            lo.mode = inst.mode;
            lo.jump_intensity = inst.lambda;
            lo.jump_mark = inst.mark;
            const Lattice lattice = Lattice::build(TimeGrid(inst.dt * inst.steps, inst.steps), lo);
            Recorder rec(lattice);
            try {
                run_instance(inst, options.mutate, rec);
            } catch (const std::exception& e) {
                rec.check("instance", "", false, std::nullopt, e.what());
            }
            results[slot] = InstanceResult{inst, std::move(rec.outcomes)};
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(indices.size())));
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    std::map<std::string, std::pair<std::size_t, std::size_t>> counts;
    json witnesses = json::array();
    std::size_t failures = 0;
    for (const InstanceResult& r : results) {
        for (const Outcome& o : r.outcomes) {
            auto& [checked, failed] = counts[o.property];
            ++checked;
            if (o.pass) continue;
            ++failed;
            ++failures;
            if (witnesses.size() >= kMaxWitnesses) continue;
            json w{{"property", o.property},
                   {"driver", o.driver},
                   {"instance", instance_json(r.instance)},
                   {"detail", o.detail},
                   {"replay", {{"seed", options.seed},
                               {"depth", options.depth},
                               {"mode", jump ? "jump" : "diffusion"},
                               {"only", r.instance.index}}}};
            w["node"] = o.node.empty() ? json(nullptr) : json(o.node);
            witnesses.push_back(std::move(w));
        }
    }
    json properties = json::object();
    for (const auto& [name, c] : counts) {
        properties[name] = {{"checked", c.first}, {"passed", c.first - c.second}, {"failed", c.second}};
    }
    report["properties"] = std::move(properties);
    report["failures"] = failures;
    report["witnesses"] = std::move(witnesses);
    result.exit_code = failures == 0 ? kExitOk : kExitFailures;
    return result;
}

}  // namespace rbsde
