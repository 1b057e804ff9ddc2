#pragma once

#include "fedoed/scenario.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace fedoed {

enum ExitCode { kOk = 0, kValidation = 2, kNotConverged = 3, kPrecondition = 4 };

struct CommandResult {
    int code = kOk;
    json report;
    std::string message;  // for failures
};

struct SweepSpec {
    std::string param;
    double lo = 0, hi = 1;
    int steps = 2;
    std::vector<MechanismKind> mechanisms{MechanismKind::Fed};
};

SweepSpec parse_sweep(const std::string& param, const std::string& range, const std::string& mechanisms);

CommandResult cmd_design_solve(const Scenario& sc);
CommandResult cmd_game_solve(const Scenario& sc);
CommandResult cmd_game_verify(const Scenario& sc, const Vec<double>& w);
CommandResult cmd_analyze(const Scenario& sc, const std::string& which);

// Writes the CSV to `out`; the returned report holds the row count and the failed rows.
CommandResult cmd_sweep(const json& scenario_doc, const SweepSpec& spec, std::ostream& out);
std::vector<std::string> sweep_header(Index n, Index K);

// Runs `f` and maps library exceptions to exit codes.
template <class F>
CommandResult guarded(F&& f) {
    try {
        return f();
    } catch (const ValidationError& e) {
        return {kValidation, json(), e.what()};
    } catch (const ZeroMass& e) {
        return {kValidation, json(), e.what()};
    } catch (const json::exception& e) {
        return {kValidation, json(), e.what()};
    } catch (const DegenerateOutsideMass& e) {
        return {kPrecondition, json(), e.what()};
    } catch (const Error& e) {
        return {kNotConverged, json(), e.what()};
    }
}

}  // namespace fedoed
