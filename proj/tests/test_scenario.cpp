#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <sstream>

#include "rbsde_lab/scenario.hpp"

using namespace rbsde;
using nlohmann::json;

namespace {

std::string parse_error(const json& j) {
    try {
        ScenarioConfig::from_json(j);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::ConfigParseError);
        return e.what();
    }
    FAIL("expected a parse error");
    return {};
}

ScenarioConfig spike_config() {
    return ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2},
        "obstacle": {"kind": "constant", "value": 0.0,
                     "right_jumps": [{"level": 1, "point": 1.0, "right_limit": 0.0}]},
        "solver": {"oracle": true}
    })"));
}

}  // namespace

TEST_CASE("config parsing") {
    const ScenarioConfig c = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 2.0, "N": 8},
        "lattice": {"mode": "jump", "lambda": 0.5, "mark": -0.2, "topology": "recombining"},
        "driver": {"kind": "linear", "params": {"a": -1.0, "c": 0.5}, "K": 2.0},
        "obstacle": {"kind": "functional", "payoff": "put", "params": {"s0": 1.0, "strike": 1.1, "sigma": 0.2}},
        "solver": {"beta": 4.0, "tol": 1e-9, "max_iter": 30, "epsilon": 0.2, "L": "auto"}
    })"));
    CHECK(c.horizon == 2.0);
    CHECK(c.steps == 8);
    CHECK(c.mode == LatticeMode::diffusion_plus_jump);
    CHECK(c.topology == Topology::recombining);
    CHECK(c.driver_kind == "linear");
    CHECK(c.driver_params.at("c") == 0.5);
    CHECK(c.driver_k == 2.0);
    CHECK(c.beta == 4.0);
    CHECK(c.max_iterations == 30);
    CHECK_FALSE(c.epsilon_constant.has_value());
    CHECK(c.obstacle.is_markov());

    CHECK(parse_error(json::parse(R"({"grid": {"T": 1.0}})")).find("grid.N") != std::string::npos);
    CHECK(parse_error(json::parse(R"({"grid": {"T": 1.0, "N": 2}, "colour": 1})")).find("colour") !=
          std::string::npos);
    CHECK(parse_error(json::parse(R"({"grid": {"T": "one", "N": 2}})")).find("grid.T") != std::string::npos);
    CHECK(parse_error(json::parse(R"({"grid": {"T": 1.0, "N": 2}, "lattice": {"mode": "levy"}})"))
              .find("lattice.mode") != std::string::npos);
    CHECK(parse_error(json::parse(R"({"grid": {"T": 1.0, "N": 2}, "obstacle": {"kind": "lookback"}})"))
              .find("obstacle.kind") != std::string::npos);
}

TEST_CASE("solve: constant obstacle") {
    ScenarioConfig c = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 4}, "obstacle": {"kind": "constant", "value": 1.0}, "solver": {"oracle": true}
    })"));
    const RunOutcome out = run_scenario(c);
    CHECK(out.exit_code == kExitOk);
    CHECK(out.report["status"] == "ok");
    CHECK(out.report["Y0"].get<double>() == 1.0);
    CHECK(out.report["risk"].get<double>() == -1.0);
    CHECK(out.report["oracle"]["rules"].get<int>() == 677);
    CHECK(out.report["oracle"]["agrees"].get<bool>());
    CHECK(out.report["pushes"]["expected_total_dA"].get<double>() == 0.0);
    CHECK_FALSE(out.report.contains("timing"));
    CHECK(out.solution_csv.rfind("level,path_word,t,xi,xi_plus,Y,Y_plus,Z,dA,dC\n", 0) == 0);
}

TEST_CASE("solve: deterministic spike") {
    const RunOutcome out = run_scenario(spike_config());
    REQUIRE(out.exit_code == kExitOk);
    CHECK(out.report["Y0"].get<double>() == 1.0);
    CHECK(out.report["pushes"]["expected_total_dC"].get<double>() == 1.0);
    CHECK(out.report["pushes"]["expected_total_dA"].get<double>() == 0.0);
    CHECK(out.report["skorokhod"]["ok"].get<bool>());
    CHECK(out.report["oracle"]["rules"].get<int>() == 5);
    CHECK(out.report["stopping"]["tau_star"]["optimality"]["pass"].get<bool>());
    CHECK(out.report["galchouk_lenglart"]["beta_0"].get<double>() <= 1e-10);
}

TEST_CASE("solve: reports are byte-identical across runs") {
    const RunOutcome a = run_scenario(spike_config());
    const RunOutcome b = run_scenario(spike_config());
    CHECK(a.report.dump() == b.report.dump());
    CHECK(a.solution_csv == b.solution_csv);
}

TEST_CASE("solve: validation and solver errors") {
    const ScenarioConfig bad = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2},
        "obstacle": {"kind": "deterministic_table", "point": [0, 1, 0], "right_limit": [0, 2]}
    })"));
    const RunOutcome out = run_scenario(bad);
    CHECK(out.exit_code == kExitValidation);
    CHECK(out.report["status"] == "validation_error");
    REQUIRE(out.report["violations"].size() == 2);
    CHECK(out.report["violations"][0]["node"] == "u");

    const ScenarioConfig steep = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2}, "driver": {"kind": "linear", "params": {"a": -1.0}},
        "obstacle": {"kind": "constant", "value": 0.0}
    })"));
    CHECK(run_scenario(steep).exit_code == kExitSolver);

    const ScenarioConfig overflow = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2}, "lattice": {"mode": "jump", "lambda": 3.0},
        "obstacle": {"kind": "constant", "value": 0.0}
    })"));
    CHECK(run_scenario(overflow).exit_code == kExitValidation);
}

TEST_CASE("convergence: linear driver halves its error") {
    const ScenarioConfig c = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 10}, "driver": {"kind": "linear", "params": {"a": -1.0}},
        "obstacle": {"kind": "constant", "value": 0.0, "terminal": 1.0}
    })"));
    const ConvergenceTable t = convergence_study(c, {10, 20, 40, 80});
    CHECK(t.reference_kind == "closed_form");
    REQUIRE(t.rows.size() == 4);
    for (std::size_t i = 1; i < t.rows.size(); ++i) {
        const double ratio = t.rows[i - 1].error / t.rows[i].error;
        CHECK(ratio >= 1.7);
        CHECK(ratio <= 2.3);
    }
    std::ostringstream csv;
    write_convergence_csv(csv, t);
    CHECK(csv.str().rfind("N,Y0,error\n10,", 0) == 0);
}

TEST_CASE("convergence: exact cases") {
    const ScenarioConfig zero = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 4}, "obstacle": {"kind": "constant", "value": 0.0, "terminal": 1.0}
    })"));
    for (const ConvergenceRow& r : convergence_study(zero, {4, 8, 16}).rows) CHECK(r.error == 0.0);

    const ScenarioConfig spike = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2},
        "obstacle": {"kind": "constant", "value": 0.0,
                     "right_jumps": [{"time": 0.5, "point": 1.0, "right_limit": 0.0}]}
    })"));
    for (const ConvergenceRow& r : convergence_study(spike, {2, 4, 8}).rows) CHECK(r.y0 == 1.0);

    const ScenarioConfig table = ScenarioConfig::from_json(json::parse(R"({
        "grid": {"T": 1.0, "N": 2},
        "obstacle": {"kind": "deterministic_table", "point": [0, 1, 0], "right_limit": [0, 0]}
    })"));
    CHECK_THROWS_AS(convergence_study(table, {2, 4}), Error);
}

TEST_CASE("property suite") {
    PropertySuiteOptions o;
    const PropertySuiteResult r = property_suite(o);
    CHECK(r.exit_code == kExitOk);
    CHECK(r.report["failures"].get<int>() == 0);
    CHECK(r.report["properties"]["oracle_equivalence"]["checked"].get<int>() > 0);

    PropertySuiteOptions threaded = o;
    threaded.threads = 3;
    threaded.count = 20;
    PropertySuiteOptions serial = threaded;
    serial.threads = 1;
    CHECK(property_suite(threaded).report.dump() == property_suite(serial).report.dump());

    PropertySuiteOptions empty = o;
    empty.count = 0;
    CHECK(property_suite(empty).exit_code == kExitOk);

    PropertySuiteOptions mutated = o;
    mutated.count = 10;
    mutated.mutate = true;
    const PropertySuiteResult m = property_suite(mutated);
    CHECK(m.exit_code == kExitFailures);
    CHECK(m.report["failures"].get<int>() > 0);
    CHECK(m.report["witnesses"][0].contains("replay"));

    PropertySuiteOptions deep = o;
    deep.depth = 7;
    CHECK(property_suite(deep).exit_code == kExitValidation);

    PropertySuiteOptions jump = o;
    jump.mode = LatticeMode::diffusion_plus_jump;
    jump.count = 30;
    CHECK(property_suite(jump).exit_code == kExitOk);
}
