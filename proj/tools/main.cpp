#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rbsde_lab/scenario.hpp"

namespace {

int error_exit(const rbsde::Error& e) {
    std::cerr << "error: " << e.what();
    if (!e.witness().empty()) std::cerr << " at node '" << e.witness() << "'";
    std::cerr << '\n';
    switch (e.code()) {
        case rbsde::ErrorCode::ConfigParseError:
        case rbsde::ErrorCode::ObstacleInvalid:
        case rbsde::ErrorCode::InvalidGrid:
        case rbsde::ErrorCode::JumpProbabilityOverflow:
        case rbsde::ErrorCode::LatticeTooLarge:
        case rbsde::ErrorCode::HypothesisViolated: return rbsde::kExitValidation;
        default: return rbsde::kExitSolver;
    }
}

int write_text(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return rbsde::kExitOk;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "error: cannot write '" << path << "'\n";
        return rbsde::kExitValidation;
    }
    out << text;
    return rbsde::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reflected BSDE lab: solver, convergence study and property suite"};
    app.require_subcommand(1);

    std::string solve_config;
    bool timing = false;
    CLI::App* solve = app.add_subcommand("solve", "Solve one scenario and write its CSV/JSON outputs");
    solve->add_option("config", solve_config, "Scenario JSON file")->required();
    solve->add_flag("--timing", timing, "Include wall-clock timing in the report");

    std::string converge_config;
    std::vector<int> grid;
    std::string converge_output;
    CLI::App* converge = app.add_subcommand("converge", "Solve a scenario for several N and tabulate Y0 errors");
    converge->add_option("config", converge_config, "Scenario JSON file")->required();
    converge->add_option("--grid", grid, "Comma-separated step counts")
        ->required()
        ->delimiter(',')
        ->check(CLI::PositiveNumber);
    converge->add_option("-o,--output", converge_output, "CSV output path (default: stdout)");

    std::uint64_t seed = 42;
    std::size_t count = 100;
    int depth = 3;
    std::string mode = "diffusion";
    std::int64_t only = -1;
    bool mutate = false;
    std::string props_output;
    CLI::App* props = app.add_subcommand("props", "Run every property checker on seeded random instances");
    props->add_option("--seed", seed, "Suite seed");
    props->add_option("--count", count, "Number of instances");
    props->add_option("--depth", depth, "Tree depth N (at most 6)");
    props->add_option("--mode", mode, "diffusion or jump")->check(CLI::IsMember({"diffusion", "jump"}));
    props->add_option("--only", only, "Replay a single instance index");
    props->add_flag("--mutate", mutate, "Corrupt solver outputs (harness sanity check)");
    props->add_option("-o,--output", props_output, "JSON report path (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return rbsde::kExitValidation;
    }

    try {
        if (*solve) {
            rbsde::RunOptions options;
            options.include_timing = timing;
            return rbsde::run_scenario_file(solve_config, options, std::cerr);
        }
        if (*converge) {
            const rbsde::ScenarioConfig config = rbsde::ScenarioConfig::load(converge_config);
            const rbsde::ConvergenceTable table = rbsde::convergence_study(config, grid);
            std::ostringstream csv;
            rbsde::write_convergence_csv(csv, table);
            std::cerr << "reference: " << table.reference_kind << '\n';
            return write_text(converge_output, csv.str());
        }
        rbsde::PropertySuiteOptions options;
        options.seed = seed;
        options.count = count;
        options.depth = depth;
        options.mode = mode == "jump" ? rbsde::LatticeMode::diffusion_plus_jump : rbsde::LatticeMode::diffusion;
        options.threads = rbsde::worker_count_from_env();
        options.mutate = mutate;
        if (only >= 0) options.only_instance = static_cast<std::size_t>(only);
        const rbsde::PropertySuiteResult result = rbsde::property_suite(options);
        const int written = write_text(props_output, result.report.dump(2) + "\n");
        if (written != rbsde::kExitOk) return written;
        if (result.report.contains("error")) {
            std::cerr << "error: " << result.report["error"].get<std::string>() << '\n';
        } else {
            std::cerr << "failures: " << result.report["failures"].get<std::size_t>() << '\n';
        }
        return result.exit_code;
    } catch (const rbsde::Error& e) {
        return error_exit(e);
    }
}
