#include "fedoed/commands.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

using namespace fedoed;

namespace {

struct Common {
    std::string scenario;
    std::string out;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--scenario", c.scenario, "scenario file (JSON)")->required();
    app->add_option("--out", c.out, "output path (default: stdout)");
    app->add_option("--seed", c.seed, "override the scenario seed");
}

json load_doc(const Common& c) {
    std::ifstream in(c.scenario);
    if (!in) throw ValidationError("cannot open scenario file " + c.scenario);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("scenario is not valid JSON: ") + e.what());
    }
    if (c.seed) doc["seed"] = *c.seed;
    return doc;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot write " + path);
    f << text;
}

int finish(const CommandResult& r, const std::string& out) {
    if (!r.report.is_null()) emit(out, r.report.dump(2) + "\n");
    if (!r.message.empty()) std::cerr << "fedoed: " << r.message << "\n";
    return r.code;
}

Vec<double> parse_weights(const std::string& list) {
    std::vector<double> xs;
    std::istringstream is(list);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            xs.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ValidationError("--w must be a comma-separated list of numbers");
        }
    }
    return Eigen::Map<Vec<double>>(xs.data(), static_cast<Index>(xs.size()));
}

Vec<double> weights_from_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open report " + path);
    const json doc = json::parse(in);
    const json& w = doc.contains("equilibrium") ? doc["equilibrium"]["w"] : doc.at("w");
    const auto xs = w.get<std::vector<double>>();
    return Eigen::Map<const Vec<double>>(xs.data(), static_cast<Index>(xs.size()));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-agent optimal experiment design: designs, equilibria, mechanisms and analyses"};
    app.require_subcommand(1);

    Common common;
    auto* design = app.add_subcommand("design", "optimal designs");
    design->require_subcommand(1);
    auto* design_solve = design->add_subcommand("solve", "D-optimal design with its certificate");
    add_common(design_solve, common);

    auto* game = app.add_subcommand("game", "equilibria");
    game->require_subcommand(1);
    auto* game_solve = game->add_subcommand("solve", "best-response dynamics to an equilibrium");
    add_common(game_solve, common);
    auto* game_verify = game->add_subcommand("verify", "check a design for profitable deviations");
    add_common(game_verify, common);
    std::string w_list, report_path;
    game_verify->add_option("--w", w_list, "comma-separated design weights");
    game_verify->add_option("--report", report_path, "take the weights from a game report");

    auto* sweep = app.add_subcommand("sweep", "parameter sweep to CSV");
    add_common(sweep, common);
    std::string param, range, mechanisms = "fed";
    sweep->add_option("--param", param, "costs[i] or a name under params")->required();
    sweep->add_option("--range", range, "lo:hi:steps")->required();
    sweep->add_option("--mechanisms", mechanisms, "comma-separated mechanisms");

    auto* analyze = app.add_subcommand("analyze", "post-hoc analyses");
    std::string which;
    analyze->add_option("which", which, "poa | fairness | freeride | efficiency")
        ->required()
        ->check(CLI::IsMember({"poa", "fairness", "freeride", "efficiency"}));
    add_common(analyze, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kValidation;
    }

    const CommandResult r = guarded([&]() -> CommandResult {
        const json doc = load_doc(common);
        if (*sweep) {
            const auto spec = parse_sweep(param, range, mechanisms);
            std::ostringstream csv;
            auto res = cmd_sweep(doc, spec, csv);
            if (res.code == kOk) emit(common.out, csv.str());
            res.report = json();
            return res;
        }
        const Scenario sc = parse_scenario(doc);
        if (*design_solve) return cmd_design_solve(sc);
        if (*game_solve) return cmd_game_solve(sc);
        if (*game_verify) {
            if (w_list.empty() == report_path.empty()) throw ValidationError("give exactly one of --w and --report");
            return cmd_game_verify(sc, w_list.empty() ? weights_from_report(report_path) : parse_weights(w_list));
        }
        return cmd_analyze(sc, which);
    });
    try {
        return finish(r, common.out);
    } catch (const ValidationError& e) {
        std::cerr << "fedoed: " << e.what() << "\n";
        return kValidation;
    }
}
