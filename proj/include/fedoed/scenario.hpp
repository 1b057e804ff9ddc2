#pragma once

#include "fedoed/game.hpp"

#include "json.hpp"

#include <map>
#include <string>

namespace fedoed {

using json = nlohmann::json;

struct MechanismRequest {
    MechanismKind kind = MechanismKind::Fed;
    bool publish = false;  // parameters computed from the game rather than given
    MechanismSpec<double> spec;
};

enum class StartKind { Standalone, Random, Given };

struct Scenario {
    DesignSpace<double> space;
    std::vector<AgentProfile<double>> agents;
    MechanismRequest mechanism;
    GameOptions options;
    std::uint64_t seed = 0;
    StartKind start = StartKind::Standalone;
    Vec<double> start_w;
    json source;  // the document the scenario was read from
};

// Throws ValidationError on malformed input or unknown fields.
Scenario parse_scenario(const json& doc);
Scenario read_scenario(const std::string& path);

MechanismSpec<double> resolve_mechanism(const Scenario& sc);
json mechanism_to_json(const MechanismSpec<double>& spec);

// The source document with the mechanism replaced by explicit published parameters.
json published_scenario(const Scenario& sc, const MechanismSpec<double>& spec);

// Set a sweep parameter: "costs[i]" or the name of an entry in "params".
json with_parameter(json doc, const std::string& path, double value);

GameConfig<double> game_config(const Scenario& sc, const MechanismSpec<double>& spec);
std::optional<Vec<double>> start_point(const Scenario& sc, const GameConfig<double>& cfg);

}  // namespace fedoed
