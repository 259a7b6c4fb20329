#ifndef RBSDE_LAB_SCENARIO_HPP
#define RBSDE_LAB_SCENARIO_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbsde_lab/expectation.hpp"
#include "rbsde_lab/lattice.hpp"
#include "rbsde_lab/rbsde.hpp"
#include "rbsde_lab/stopping.hpp"

namespace rbsde {

/// Process exit codes shared by the CLI verbs.
enum ExitCode : int { kExitOk = 0, kExitFailures = 1, kExitValidation = 2, kExitSolver = 3 };

struct RightJumpSpec {
    std::optional<int> level;
    std::optional<double> time;  // alternative to level; must fall on the grid
    double point = 0.0;
    double right_limit = 0.0;
};

struct ObstacleConfig {
    std::string kind = "constant";  // constant | deterministic_table | functional | random
    double value = 0.0;
    std::optional<double> terminal;
    std::vector<double> point_table;        // per level 0..N
    std::vector<double> right_limit_table;  // per level 0..N-1
    std::string payoff;                     // put | call | digital | identity
    std::string statistic = "state";        // state | running_max | running_mean
    DriverParams payoff_params;             // s0, strike, sigma
    std::uint64_t seed = 0;
    double low = 0.0;
    double high = 1.0;
    double right_jump_probability = 0.0;
    std::vector<RightJumpSpec> right_jumps;

    bool is_markov() const;
};

struct ScenarioConfig {
    double horizon = 1.0;
    int steps = 1;
    LatticeMode mode = LatticeMode::diffusion;
    double jump_intensity = 0.0;
    double jump_mark = 0.0;
    Topology topology = Topology::path_tree;

    std::string driver_kind = "zero";
    DriverParams driver_params;
    std::optional<double> driver_k;

    ObstacleConfig obstacle;

    std::optional<double> beta;  // nullopt means "auto"
    double tolerance = 1e-10;
    int max_iterations = 50;
    double epsilon = 0.1;
    std::optional<double> epsilon_constant;  // L; nullopt means "auto"
    bool oracle = false;

    std::string solution_csv;
    std::string report_json;

    /// Throws ConfigParseError with a field-qualified message.
    static ScenarioConfig from_json(const nlohmann::json& j);
    static ScenarioConfig load(const std::filesystem::path& path);
};

Lattice build_lattice(const ScenarioConfig& config);
Driver build_driver(const ScenarioConfig& config);

/// Obstacle on the lattice; r.u.s.c. is not checked here (see validate_ladlag).
LadlagProcess build_obstacle(const Lattice& lattice, const ObstacleConfig& config);

/// Point values uniform in [low, high]; with the given probability a node
/// gets a right limit strictly below its point value.
LadlagProcess random_obstacle(const Lattice& lattice, std::mt19937_64& rng, double low, double high,
                              double right_jump_probability);

struct RunOptions {
    bool include_timing = false;
};

struct RunOutcome {
    int exit_code = kExitOk;
    nlohmann::json report;
    std::string solution_csv;
    std::vector<std::string> messages;  // validation or solver diagnostics
};

/**
 * Single solve: validates the obstacle and driver, solves the reflected
 * BSDE, checks Skorokhod conditions and builds tau^eps and tau*. Exit code
 * 2 on validation errors, 3 on solver errors.
 */
RunOutcome run_scenario(const ScenarioConfig& config, const RunOptions& options = {});

/// Loads the config, runs it and writes the CSV/JSON outputs named in it.
int run_scenario_file(const std::filesystem::path& config_path, const RunOptions& options,
                      std::ostream& diagnostics);

struct ConvergenceRow {
    int steps = 0;
    double y0 = 0.0;
    double reference = 0.0;
    double error = 0.0;
};

struct ConvergenceTable {
    std::string reference_kind;  // closed_form | finest
    std::vector<ConvergenceRow> rows;
};

/**
 * Solves the scenario for each N. The reference is the closed form
 * e^{aT} E[xi_N] (+ c (e^{aT} - 1)/a) for a linear driver with b = 0 when no
 * solve pushes, else the value at the finest N. Markov obstacles run on the
 * recombining lattice.
 */
ConvergenceTable convergence_study(const ScenarioConfig& config, const std::vector<int>& steps);
void write_convergence_csv(std::ostream& out, const ConvergenceTable& table);

struct PropertySuiteOptions {
    std::uint64_t seed = 42;
    std::size_t count = 100;
    int depth = 3;
    LatticeMode mode = LatticeMode::diffusion;
    unsigned threads = 1;
    std::optional<std::size_t> only_instance;
    /// Mutation-testing hook: perturbs every solver output before checks.
    bool mutate = false;
};

struct PropertySuiteResult {
    int exit_code = kExitOk;
    nlohmann::json report;
};

/// Worker count from RBSDE_LAB_THREADS, capped by the hardware.
unsigned worker_count_from_env();

/**
 * Runs every checker on seeded random instances. Exit code 0 iff no
 * property failed; 2 if the depth is out of range (max 6).
 */
PropertySuiteResult property_suite(const PropertySuiteOptions& options);

}  // namespace rbsde

#endif  // RBSDE_LAB_SCENARIO_HPP
