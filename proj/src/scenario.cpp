#include "rbsde_lab/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "detail/random.hpp"

namespace rbsde {

namespace {

using nlohmann::json;

[[noreturn]] void parse_error(const std::string& field, const std::string& what) {
    throw Error(ErrorCode::ConfigParseError, "config field '" + field + "': " + what);
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
    if (!j.is_object()) parse_error(where, "expected an object");
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) parse_error(where.empty() ? key : where + "." + key, "unknown key");
    }
}

std::string qualified(const std::string& where, const char* key) {
    return where.empty() ? std::string(key) : where + "." + key;
}

double read_number(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_number()) parse_error(qualified(where, key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) parse_error(qualified(where, key), "expected a finite number");
    return x;
}

std::optional<double> optional_number(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) return std::nullopt;
    return read_number(j, where, key);
}

int read_int(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_number_integer()) parse_error(qualified(where, key), "expected an integer");
    return v.get<int>();
}

std::string read_string(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_string()) parse_error(qualified(where, key), "expected a string");
    return v.get<std::string>();
}

// "auto" or a number; nullopt for "auto".
std::optional<double> auto_or_number(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (v.is_string()) {
        if (v.get<std::string>() != "auto") parse_error(qualified(where, key), "expected \"auto\" or a number");
        return std::nullopt;
    }
    return read_number(j, where, key);
}

std::vector<double> read_numbers(const json& j, const std::string& where, const char* key) {
    const json& v = j.at(key);
    if (!v.is_array()) parse_error(qualified(where, key), "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) parse_error(qualified(where, key) + "[" + std::to_string(i) + "]", "expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

DriverParams read_params(const json& j, const std::string& where) {
    if (!j.is_object()) parse_error(where, "expected an object of numbers");
    DriverParams out;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number()) parse_error(where + "." + key, "expected a number");
        out[key] = value.get<double>();
    }
    return out;
}

ObstacleConfig parse_obstacle(const json& j) {
    const std::string where = "obstacle";
    reject_unknown(j, where,
                   {"kind", "value", "terminal", "point", "right_limit", "payoff", "statistic", "params", "seed",
                    "low", "high", "right_jump_probability", "right_jumps"});
    ObstacleConfig o;
    if (!j.contains("kind")) parse_error("obstacle.kind", "missing");
    o.kind = read_string(j, where, "kind");
    if (o.kind == "constant") {
        if (!j.contains("value")) parse_error("obstacle.value", "missing");
        o.value = read_number(j, where, "value");
        o.terminal = optional_number(j, where, "terminal");
    } else if (o.kind == "deterministic_table") {
        if (!j.contains("point")) parse_error("obstacle.point", "missing");
        o.point_table = read_numbers(j, where, "point");
        if (j.contains("right_limit")) o.right_limit_table = read_numbers(j, where, "right_limit");
    } else if (o.kind == "functional") {
        if (!j.contains("payoff")) parse_error("obstacle.payoff", "missing");
        o.payoff = read_string(j, where, "payoff");
        static const std::set<std::string> payoffs{"put", "call", "digital", "identity"};
        if (!payoffs.count(o.payoff)) parse_error("obstacle.payoff", "unknown payoff '" + o.payoff + "'");
        if (j.contains("statistic")) o.statistic = read_string(j, where, "statistic");
        static const std::set<std::string> statistics{"state", "running_max", "running_mean"};
        if (!statistics.count(o.statistic)) {
            parse_error("obstacle.statistic", "unknown statistic '" + o.statistic + "'");
        }
        if (j.contains("params")) o.payoff_params = read_params(j.at("params"), "obstacle.params");
    } else if (o.kind == "random") {
        if (j.contains("seed")) {
            if (!j.at("seed").is_number_unsigned()) parse_error("obstacle.seed", "expected a nonnegative integer");
            o.seed = j.at("seed").get<std::uint64_t>();
        }
        if (j.contains("low")) o.low = read_number(j, where, "low");
        if (j.contains("high")) o.high = read_number(j, where, "high");
        if (!(o.low <= o.high)) parse_error("obstacle.low", "must not exceed obstacle.high");
        if (j.contains("right_jump_probability")) {
            o.right_jump_probability = read_number(j, where, "right_jump_probability");
            if (o.right_jump_probability < 0.0 || o.right_jump_probability > 1.0) {
                parse_error("obstacle.right_jump_probability", "must lie in [0, 1]");
            }
        }
    } else {
        parse_error("obstacle.kind", "unknown kind '" + o.kind + "'");
    }
    if (j.contains("right_jumps")) {
        const json& list = j.at("right_jumps");
        if (!list.is_array()) parse_error("obstacle.right_jumps", "expected an array");
        for (std::size_t i = 0; i < list.size(); ++i) {
            const std::string w = "obstacle.right_jumps[" + std::to_string(i) + "]";
            reject_unknown(list[i], w, {"level", "time", "point", "right_limit"});
            RightJumpSpec r;
            if (list[i].contains("level")) r.level = read_int(list[i], w, "level");
            if (list[i].contains("time")) r.time = read_number(list[i], w, "time");
            if (r.level.has_value() == r.time.has_value()) parse_error(w, "give exactly one of level and time");
            if (!list[i].contains("point")) parse_error(w + ".point", "missing");
            if (!list[i].contains("right_limit")) parse_error(w + ".right_limit", "missing");
            r.point = read_number(list[i], w, "point");
            r.right_limit = read_number(list[i], w, "right_limit");
            o.right_jumps.push_back(r);
        }
    }
    return o;
}

int resolve_level(const RightJumpSpec& r, const TimeGrid& grid, std::size_t index) {
    const std::string w = "obstacle.right_jumps[" + std::to_string(index) + "]";
    int level = 0;
    if (r.level) {
        level = *r.level;
    } else {
        const double position = *r.time / grid.dt();
        level = static_cast<int>(std::lround(position));
        if (std::abs(position - level) > 1e-9) parse_error(w + ".time", "does not fall on the time grid");
    }
    if (level < 0 || level >= grid.steps()) parse_error(w, "must lie strictly before the horizon");
    return level;
}

double payoff_value(const std::string& payoff, double s, double strike) {
    if (payoff == "put") return std::max(strike - s, 0.0);
    if (payoff == "call") return std::max(s - strike, 0.0);
    if (payoff == "digital") return s >= strike ? 1.0 : 0.0;
    return s;
}

json words_json(const Lattice& lattice, const std::vector<NodeId>& nodes, std::size_t limit = 64) {
    json words = json::array();
    for (std::size_t i = 0; i < nodes.size() && i < limit; ++i) words.push_back(lattice.path_word(nodes[i]));
    return json{{"count", nodes.size()}, {"words", words}, {"truncated", nodes.size() > limit}};
}

bool is_validation(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigParseError:
        case ErrorCode::ObstacleInvalid:
        case ErrorCode::InvalidGrid:
        case ErrorCode::JumpProbabilityOverflow:
        case ErrorCode::LatticeTooLarge:
        case ErrorCode::HypothesisViolated: return true;
        default: return false;
    }
}

std::string describe(const Error& e) {
    std::string out = e.what();
    if (!e.witness().empty()) out += " at node '" + e.witness() + "'";
    return out;
}

}  // namespace

bool ObstacleConfig::is_markov() const {
    if (kind == "constant" || kind == "deterministic_table") return true;
    return kind == "functional" && statistic == "state";
}

ScenarioConfig ScenarioConfig::from_json(const json& j) {
    reject_unknown(j, "", {"grid", "lattice", "driver", "obstacle", "solver", "outputs"});
    ScenarioConfig c;

    if (!j.contains("grid")) parse_error("grid", "missing");
    const json& grid = j.at("grid");
    reject_unknown(grid, "grid", {"T", "N"});
    if (!grid.contains("T")) parse_error("grid.T", "missing");
    if (!grid.contains("N")) parse_error("grid.N", "missing");
    c.horizon = read_number(grid, "grid", "T");
    c.steps = read_int(grid, "grid", "N");

    if (j.contains("lattice")) {
        const json& l = j.at("lattice");
        reject_unknown(l, "lattice", {"mode", "lambda", "mark", "topology"});
        if (l.contains("mode")) {
            const std::string mode = read_string(l, "lattice", "mode");
            if (mode == "diffusion") {
                c.mode = LatticeMode::diffusion;
            } else if (mode == "jump" || mode == "diffusion_plus_jump") {
                c.mode = LatticeMode::diffusion_plus_jump;
            } else {
                parse_error("lattice.mode", "expected \"diffusion\" or \"jump\"");
            }
        }
        if (l.contains("lambda")) c.jump_intensity = read_number(l, "lattice", "lambda");
        if (l.contains("mark")) c.jump_mark = read_number(l, "lattice", "mark");
        if (l.contains("topology")) {
            const std::string t = read_string(l, "lattice", "topology");
            if (t == "tree") {
                c.topology = Topology::path_tree;
            } else if (t == "recombining") {
                c.topology = Topology::recombining;
            } else {
                parse_error("lattice.topology", "expected \"tree\" or \"recombining\"");
            }
        }
    }

    if (j.contains("driver")) {
        const json& d = j.at("driver");
        reject_unknown(d, "driver", {"kind", "params", "K"});
        if (!d.contains("kind")) parse_error("driver.kind", "missing");
        c.driver_kind = read_string(d, "driver", "kind");
        if (d.contains("params")) c.driver_params = read_params(d.at("params"), "driver.params");
        c.driver_k = optional_number(d, "driver", "K");
    }

    if (!j.contains("obstacle")) parse_error("obstacle", "missing");
    c.obstacle = parse_obstacle(j.at("obstacle"));

    if (j.contains("solver")) {
        const json& s = j.at("solver");
        reject_unknown(s, "solver", {"beta", "tol", "max_iter", "epsilon", "L", "oracle"});
        if (s.contains("beta")) c.beta = auto_or_number(s, "solver", "beta");
        if (s.contains("tol")) c.tolerance = read_number(s, "solver", "tol");
        if (s.contains("max_iter")) c.max_iterations = read_int(s, "solver", "max_iter");
        if (s.contains("epsilon")) c.epsilon = read_number(s, "solver", "epsilon");
        if (s.contains("L")) c.epsilon_constant = auto_or_number(s, "solver", "L");
        if (s.contains("oracle")) {
            if (!s.at("oracle").is_boolean()) parse_error("solver.oracle", "expected a boolean");
            c.oracle = s.at("oracle").get<bool>();
        }
        if (!(c.tolerance > 0.0)) parse_error("solver.tol", "must be positive");
        if (c.max_iterations < 1) parse_error("solver.max_iter", "must be at least 1");
        if (!(c.epsilon > 0.0)) parse_error("solver.epsilon", "must be positive");
        if (c.beta && *c.beta < 0.0) parse_error("solver.beta", "must be nonnegative");
    }

    if (j.contains("outputs")) {
        const json& o = j.at("outputs");
        reject_unknown(o, "outputs", {"solution_csv", "report_json"});
        if (o.contains("solution_csv")) c.solution_csv = read_string(o, "outputs", "solution_csv");
        if (o.contains("report_json")) c.report_json = read_string(o, "outputs", "report_json");
    }
    return c;
}

ScenarioConfig ScenarioConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigParseError, "cannot open config file '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigParseError, "config file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

Lattice build_lattice(const ScenarioConfig& config) {
    Lattice::Options options;
    options.mode = config.mode;
    options.jump_intensity = config.jump_intensity;
    options.jump_mark = config.jump_mark;
    options.topology = config.topology;
    return Lattice::build(TimeGrid(config.horizon, config.steps), options);
}

Driver build_driver(const ScenarioConfig& config) {
    return make_driver(config.driver_kind, config.driver_params, config.driver_k, config.jump_intensity);
}

LadlagProcess random_obstacle(const Lattice& lattice, std::mt19937_64& rng, double low, double high,
                              double right_jump_probability) {
    LadlagProcess xi{lattice.make_values(), lattice.make_values()};
    const double width = high - low;
    for (NodeId n = 0; n < lattice.size(); ++n) {
        xi.point[n] = detail::uniform(rng, low, high);
        if (lattice.is_terminal(n)) continue;
        xi.right_limit[n] = xi.point[n];
        if (detail::uniform01(rng) < right_jump_probability) {
            xi.right_limit[n] = xi.point[n] - (0.05 + 0.45 * detail::uniform01(rng)) * std::max(width, 1.0);
        }
    }
    return xi;
}

LadlagProcess build_obstacle(const Lattice& lattice, const ObstacleConfig& config) {
    const int steps = lattice.steps();
    LadlagProcess xi{lattice.make_values(), lattice.make_values()};

    if (config.kind == "constant") {
        xi = LadlagProcess::constant(lattice, config.value);
        if (config.terminal) {
            for (NodeId n = lattice.level_begin(steps); n < lattice.level_end(steps); ++n) xi.point[n] = *config.terminal;
        }
    } else if (config.kind == "deterministic_table") {
        if (config.point_table.size() != static_cast<std::size_t>(steps) + 1) {
            parse_error("obstacle.point", "expected " + std::to_string(steps + 1) + " entries (levels 0..N)");
        }
        const std::vector<double>& right = config.right_limit_table.empty() ? config.point_table : config.right_limit_table;
        if (!config.right_limit_table.empty() && config.right_limit_table.size() != static_cast<std::size_t>(steps) &&
            config.right_limit_table.size() != static_cast<std::size_t>(steps) + 1) {
            parse_error("obstacle.right_limit", "expected " + std::to_string(steps) + " entries (levels 0..N-1)");
        }
        for (NodeId n = 0; n < lattice.size(); ++n) {
            const int k = lattice.level(n);
            xi.point[n] = config.point_table[k];
            if (k < steps) xi.right_limit[n] = right[k];
        }
    } else if (config.kind == "functional") {
        auto param = [&](const char* key, double fallback) {
            auto it = config.payoff_params.find(key);
            return it == config.payoff_params.end() ? fallback : it->second;
        };
        const double s0 = param("s0", 1.0);
        const double strike = param("strike", 1.0);
        const double sigma = param("sigma", 0.2);
        if (config.statistic != "state" && !lattice.is_tree()) {
            parse_error("obstacle.statistic", "path statistics require the path tree topology");
        }
        auto price = [&](NodeId n) {
            const double t = lattice.time_of(n);
            return s0 * std::exp(sigma * lattice.state(n) - 0.5 * sigma * sigma * t);
        };
        NodeValues stat = lattice.make_values();
        stat[lattice.root()] = price(lattice.root());
        for (int k = 0; k < steps; ++k) {
            for (NodeId n = lattice.level_begin(k); n < lattice.level_end(k); ++n) {
                for (NodeId child : lattice.children(n)) {
                    const double s = price(child);
                    if (config.statistic == "running_max") {
                        stat[child] = std::max(stat[n], s);
                    } else if (config.statistic == "running_mean") {
                        stat[child] = (stat[n] * (k + 1) + s) / (k + 2);
                    } else {
                        stat[child] = s;
                    }
                }
            }
        }
        for (NodeId n = 0; n < lattice.size(); ++n) {
            xi.point[n] = payoff_value(config.payoff, stat[n], strike);
            if (!lattice.is_terminal(n)) xi.right_limit[n] = xi.point[n];
        }
    } else if (config.kind == "random") {
        std::mt19937_64 rng(config.seed);
        xi = random_obstacle(lattice, rng, config.low, config.high, config.right_jump_probability);
    } else {
        parse_error("obstacle.kind", "unknown kind '" + config.kind + "'");
    }

    for (std::size_t i = 0; i < config.right_jumps.size(); ++i) {
        const int level = resolve_level(config.right_jumps[i], lattice.grid(), i);
        for (NodeId n = lattice.level_begin(level); n < lattice.level_end(level); ++n) {
            xi.point[n] = config.right_jumps[i].point;
            xi.right_limit[n] = config.right_jumps[i].right_limit;
        }
    }
    return xi;
}

RunOutcome run_scenario(const ScenarioConfig& config, const RunOptions& options) {
    RunOutcome out;
    json& report = out.report;
    const auto started = std::chrono::steady_clock::now();

    std::optional<Lattice> lattice;
    std::optional<Driver> driver;
    LadlagProcess xi;
    try {
        lattice.emplace(build_lattice(config));
        driver.emplace(build_driver(config));
        xi = build_obstacle(*lattice, config.obstacle);
    } catch (const Error& e) {
        out.exit_code = kExitValidation;
        out.messages.push_back(describe(e));
        report = json{{"status", "validation_error"}, {"error", describe(e)}};
        return out;
    }

    report["lattice"] = {{"T", config.horizon},
                         {"N", config.steps},
                         {"dt", lattice->dt()},
                         {"mode", lattice->has_jumps() ? "jump" : "diffusion"},
                         {"topology", lattice->is_tree() ? "tree" : "recombining"},
                         {"nodes", lattice->size()}};
    if (lattice->has_jumps()) {
        report["lattice"]["lambda"] = lattice->jump_intensity();
        report["lattice"]["mark"] = lattice->jump_mark();
    }

    const LadlagReport rusc = validate_ladlag(*lattice, xi);
    if (!rusc.ok) {
        out.exit_code = kExitValidation;
        json violations = json::array();
        auto list = [&](const std::vector<NodeId>& nodes, const char* what) {
            for (NodeId n : nodes) {
                json v{{"node", lattice->path_word(n)}, {"level", lattice->level(n)}, {"problem", what}};
                v["xi"] = xi.point[n];
                if (!lattice->is_terminal(n)) v["xi_plus"] = xi.right_limit[n];
                out.messages.push_back(std::string(what) + " at node '" + lattice->path_word(n) + "'");
                violations.push_back(std::move(v));
            }
        };
        list(rusc.non_finite, "non-finite obstacle value");
        list(rusc.violations, "right limit exceeds point value (xi_plus > xi)");
        report["status"] = "validation_error";
        report["error"] = "ObstacleInvalid: obstacle is not right upper-semicontinuous";
        report["violations"] = std::move(violations);
        return out;
    }

    const double lipschitz = driver->lipschitz;
    SamplingBox box;
    box.t_max = config.horizon;
    box.jump_weight = std::sqrt(config.jump_intensity);
    json driver_json{{"name", driver->name}, {"kind", config.driver_kind}, {"K", lipschitz}};
    try {
        const DriverReport check = validate_driver(*driver, 2000, 1, box);
        driver_json["validation"] = {{"ok", check.ok},
                                     {"samples", check.samples},
                                     {"empirical_K", check.empirical_k},
                                     {"violations", check.violation_count}};
        if (!check.ok) {
            out.exit_code = kExitValidation;
            out.messages.push_back("driver '" + driver->name + "' violates its declared Lipschitz constant " +
                                   std::to_string(lipschitz) + " (empirical " + std::to_string(check.empirical_k) + ")");
            report["status"] = "validation_error";
            report["driver"] = driver_json;
            report["error"] = out.messages.back();
            return out;
        }
        if (lattice->has_jumps()) {
            const JumpMonotonicityReport mono = check_jump_monotonicity(*driver, config.jump_intensity, 2000, 2, box);
            driver_json["jump_monotonicity"] = {{"ok", mono.ok},
                                                {"samples", mono.samples},
                                                {"theta_out_of_range", mono.theta_out_of_range},
                                                {"inequality_violations", mono.inequality_violations}};
            if (!mono.ok) out.messages.push_back("warning: driver fails the jump-monotonicity check");
        }
    } catch (const Error& e) {
        out.exit_code = kExitValidation;
        out.messages.push_back(describe(e));
        report["status"] = "validation_error";
        report["error"] = describe(e);
        return out;
    }
    report["driver"] = driver_json;

    PicardOptions picard;
    picard.beta = config.beta;
    picard.tolerance = config.tolerance;
    picard.max_iterations = config.max_iterations;
    const StoppingRule start = StoppingRule::at_level(*lattice, 0);

    try {
        StoppingReport solved = value_and_risk(*lattice, *driver, xi, start, picard);
        const RBSDESolution& sol = solved.solution;
        const NodeId root = lattice->root();
        report["status"] = "ok";
        report["Y0"] = sol.y[root];
        report["risk"] = solved.risk[root];

        const PicardDiagnostics& diag = solved.diagnostics;
        report["picard"] = {{"iterations", diag.iterations},
                            {"beta", diag.beta},
                            {"beta_automatic", diag.beta_automatic},
                            {"beta_restarts", diag.beta_restarts},
                            {"tolerance", config.tolerance},
                            {"converged", diag.converged},
                            {"final_residual", diag.final_residual},
                            {"differences", diag.differences},
                            {"ratios", diag.ratios}};

        const SkorokhodReport sk = check_skorokhod(*lattice, sol, xi);
        report["skorokhod"] = {{"ok", sk.ok},
                               {"interval_pushes", sk.interval_pushes},
                               {"point_pushes", sk.point_pushes},
                               {"max_budget_residual", sk.max_budget_residual},
                               {"interval_violations", words_json(*lattice, sk.interval_violations)},
                               {"point_violations", words_json(*lattice, sk.point_violations)},
                               {"barrier_violations", words_json(*lattice, sk.barrier_violations)},
                               {"sign_violations", words_json(*lattice, sk.sign_violations)}};
        double total_a = 0.0;
        double total_c = 0.0;
        for (NodeId n = 0; n < lattice->size(); ++n) {
            if (lattice->is_terminal(n)) continue;
            total_a += lattice->probability(n) * sol.d_a[n];
            total_c += lattice->probability(n) * sol.d_c[n];
        }
        report["pushes"] = {{"expected_total_dA", total_a}, {"expected_total_dC", total_c}};

        const double big_l = config.epsilon_constant.value_or(default_epsilon_constant(lipschitz, config.horizon));
        const StoppingRule tau_eps = epsilon_optimal_time(*lattice, sol, xi, start, config.epsilon);
        const double value_eps = f_expectation(*lattice, *driver, start, tau_eps, xi.point)[root];
        const StoppingRule tau_star = optimal_time(*lattice, sol, xi, start);
        const OptimalityReport optimality = check_optimality(*lattice, *driver, xi, sol, tau_star, start);
        json tau_star_json = words_json(*lattice, tau_star.stopping_nodes());
        tau_star_json["optimality"] = {{"pass", optimality.pass},
                                       {"reason", to_string(optimality.reason)},
                                       {"deviation", optimality.deviation}};
        if (optimality.witness) tau_star_json["optimality"]["witness"] = lattice->path_word(*optimality.witness);
        json tau_eps_json = words_json(*lattice, tau_eps.stopping_nodes());
        tau_eps_json["value"] = value_eps;
        tau_eps_json["lower_bound"] = sol.y[root] - big_l * config.epsilon;
        tau_eps_json["bound_holds"] = value_eps >= sol.y[root] - big_l * config.epsilon - 1e-12;
        report["stopping"] = {{"epsilon", config.epsilon},
                              {"L", big_l},
                              {"L_automatic", !config.epsilon_constant.has_value()},
                              {"tau_epsilon", tau_eps_json},
                              {"tau_star", tau_star_json}};

        const DiscreteSemimartingale semi = to_semimartingale(*lattice, sol);
        report["galchouk_lenglart"] = {{"beta_0", galchouk_lenglart_check(*lattice, semi, 0.0)},
                                       {"beta_resolved", galchouk_lenglart_check(*lattice, semi, diag.beta)}};

        if (config.oracle) {
            json oracle{{"enabled", true}};
            const int depth_limit = max_enumeration_depth(lattice->branching());
            if (!lattice->is_tree()) {
                oracle["status"] = "skipped";
                oracle["reason"] = "enumeration requires the path tree";
            } else if (lattice->steps() > depth_limit) {
                oracle["status"] = "skipped";
                oracle["reason"] = "depth " + std::to_string(lattice->steps()) + " exceeds the enumeration limit " +
                                   std::to_string(depth_limit);
            } else {
                const BruteForceResult brute = brute_force_value(*lattice, *driver, xi, start);
                const double diff = std::abs(brute.value[root] - sol.y[root]);
                oracle["status"] = "ran";
                oracle["value"] = brute.value[root];
                oracle["rules"] = brute.rules;
                oracle["difference"] = diff;
                oracle["agrees"] = diff <= 1e-10;
            }
            report["oracle"] = std::move(oracle);
        }

        std::ostringstream csv;
        write_solution_csv(csv, *lattice, sol);
        out.solution_csv = csv.str();
    } catch (const Error& e) {
        out.exit_code = is_validation(e.code()) ? kExitValidation : kExitSolver;
        out.messages.push_back(describe(e));
        report["status"] = out.exit_code == kExitSolver ? "solver_error" : "validation_error";
        report["error"] = describe(e);
        return out;
    }

    if (options.include_timing) {
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
        report["timing"] = {{"seconds", elapsed.count()}};
    }
    return out;
}

int run_scenario_file(const std::filesystem::path& config_path, const RunOptions& options, std::ostream& diagnostics) {
    ScenarioConfig config;
    try {
        config = ScenarioConfig::load(config_path);
    } catch (const Error& e) {
        diagnostics << "error: " << describe(e) << '\n';
        return kExitValidation;
    }
    RunOutcome out = run_scenario(config, options);
    for (const std::string& m : out.messages) diagnostics << (m.rfind("warning", 0) == 0 ? "" : "error: ") << m << '\n';

    if (!config.solution_csv.empty() && !out.solution_csv.empty()) {
        std::ofstream csv(config.solution_csv, std::ios::binary);
        if (!csv) {
            diagnostics << "error: cannot write '" << config.solution_csv << "'\n";
            return kExitValidation;
        }
        csv << out.solution_csv;
    }
    if (!config.report_json.empty()) {
        std::ofstream rep(config.report_json, std::ios::binary);
        if (!rep) {
            diagnostics << "error: cannot write '" << config.report_json << "'\n";
            return kExitValidation;
        }
        rep << out.report.dump(2) << '\n';
    }
    if (out.exit_code == kExitOk && out.report.contains("Y0")) {
        diagnostics << "Y0 = " << out.report["Y0"].get<double>() << "  risk = " << out.report["risk"].get<double>()
                    << '\n';
    }
    return out.exit_code;
}

ConvergenceTable convergence_study(const ScenarioConfig& config, const std::vector<int>& steps) {
    if (steps.empty()) parse_error("grid", "at least one N is required");
    if (config.obstacle.kind == "deterministic_table" || config.obstacle.kind == "random") {
        parse_error("obstacle.kind", "a '" + config.obstacle.kind + "' obstacle is tied to a single grid");
    }
    for (std::size_t i = 0; i < config.obstacle.right_jumps.size(); ++i) {
        if (config.obstacle.right_jumps[i].level) {
            parse_error("obstacle.right_jumps[" + std::to_string(i) + "].level",
                        "use 'time' so the jump stays at a shared grid time");
        }
    }

    std::vector<int> sorted = steps;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    const Driver driver = build_driver(config);
    PicardOptions picard;
    picard.beta = config.beta;
    picard.tolerance = config.tolerance;
    picard.max_iterations = config.max_iterations;

    ConvergenceTable table;
    bool pushed = false;
    std::vector<double> terminal_means;
    for (int n : sorted) {
        ScenarioConfig c = config;
        c.steps = n;
        c.topology = config.obstacle.is_markov() ? Topology::recombining : Topology::path_tree;
        const Lattice lattice = build_lattice(c);
        const LadlagProcess xi = build_obstacle(lattice, c.obstacle);
        const LadlagReport rusc = validate_ladlag(lattice, xi);
        if (!rusc.ok) {
            const NodeId w = rusc.non_finite.empty() ? rusc.violations.front() : rusc.non_finite.front();
            throw Error(ErrorCode::ObstacleInvalid, "obstacle is not right upper-semicontinuous at N = " +
                                                        std::to_string(n), lattice.path_word(w));
        }
        const RBSDEResult solved = solve_rbsde(lattice, driver, xi, picard);
        for (NodeId node = 0; node < lattice.size(); ++node) {
            if (lattice.is_terminal(node)) continue;
            if (solved.solution.d_a[node] > 0.0 || solved.solution.d_c[node] > 0.0) pushed = true;
        }
        double mean = 0.0;
        const int last = lattice.steps();
        for (NodeId node = lattice.level_begin(last); node < lattice.level_end(last); ++node) {
            mean += lattice.probability(node) * xi.point[node];
        }
        terminal_means.push_back(mean);
        table.rows.push_back(ConvergenceRow{n, solved.solution.y[lattice.root()], 0.0, 0.0});
    }

    const bool linear = driver.kind == DriverKind::zero ||
                        (driver.kind == DriverKind::linear && driver.coefficients[1] == 0.0);
    if (linear && !pushed) {
        table.reference_kind = "closed_form";
        const double a = driver.kind == DriverKind::linear ? driver.coefficients[0] : 0.0;
        const double c = driver.kind == DriverKind::linear ? driver.coefficients[2] : 0.0;
        const double growth = std::exp(a * config.horizon);
        const double drift = a == 0.0 ? c * config.horizon : c * (growth - 1.0) / a;
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            table.rows[i].reference = growth * terminal_means[i] + drift;
        }
    } else {
        table.reference_kind = "finest";
        for (ConvergenceRow& row : table.rows) row.reference = table.rows.back().y0;
    }
    for (ConvergenceRow& row : table.rows) row.error = std::abs(row.y0 - row.reference);
    return table;
}

void write_convergence_csv(std::ostream& out, const ConvergenceTable& table) {
    out << "N,Y0,error\n";
    char buffer[128];
    for (const ConvergenceRow& row : table.rows) {
        std::snprintf(buffer, sizeof buffer, "%d,%.17g,%.17g\n", row.steps, row.y0, row.error);
        out << buffer;
    }
}

}  // namespace rbsde
