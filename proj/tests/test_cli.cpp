#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedoed/commands.hpp"

#include <fstream>
#include <set>
#include <sstream>

using namespace fedoed;
using V = Vec<double>;

namespace {

json load(const std::string& name) {
    std::ifstream in(std::string(FEDOED_TEST_DATA) + "/" + name);
    REQUIRE(in);
    return json::parse(in);
}

V from_json(const json& j) {
    const auto xs = j.get<std::vector<double>>();
    return Eigen::Map<const V>(xs.data(), static_cast<Index>(xs.size()));
}

double maxdiff(const V& a, const V& b) { return (a - b).cwiseAbs().maxCoeff(); }

struct Csv {
    std::vector<std::string> header;
    std::vector<std::map<std::string, std::string>> rows;
};

Csv parse_csv(const std::string& text) {
    Csv out;
    std::istringstream is(text);
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::istringstream ls(l);
        std::string c;
        while (std::getline(ls, c, ',')) cells.push_back(c);
        return cells;
    };
    std::getline(is, line);
    out.header = split(line);
    while (std::getline(is, line)) {
        const auto cells = split(line);
        REQUIRE(cells.size() == out.header.size());
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < cells.size(); ++i) row[out.header[i]] = cells[i];
        out.rows.push_back(row);
    }
    return out;
}

Csv run_sweep(const json& doc, const std::string& param, const std::string& range, const std::string& mechs) {
    std::ostringstream os;
    const auto r = cmd_sweep(doc, parse_sweep(param, range, mechs), os);
    REQUIRE(r.code == kOk);
    return parse_csv(os.str());
}

// Two-agent federated equilibrium at angle θ; agent 1 owns the polar point, agent 2 the basis.
V two_agent_closed_form(double theta, double c1, double c2) {
    const double s = std::sin(theta) * std::sin(theta) - std::cos(theta) * std::cos(theta);
    V w(3);
    if (c2 < c1) w << 0, 1 / c2, 1 / c2;
    else if (c1 + c2 * s < 0) w << 1 / c1, 0, 1 / c2;
    else if (c1 - c2 * s < 0) w << 1 / c1, 1 / c2, 0;
    else {
        const double den = 2 * c1 * c2 - c1 * c1 - c2 * c2 * s * s;
        const double cs = std::cos(theta) * std::cos(theta), sn = 1 - cs;
        w << 2 * (c2 - c1) / den, 2 * cs * (c1 + c2 * s) / den, 2 * sn * (c1 - c2 * s) / den;
    }
    return w;
}

}  // namespace

TEST_CASE("design solve") {
    SUBCASE("basis of R^3") {
        const auto r = cmd_design_solve(parse_scenario(load("basis3.json")));
        REQUIRE(r.code == kOk);
        CHECK(r.report["certificate"].get<double>() == doctest::Approx(3).epsilon(1e-6));
        CHECK(maxdiff(from_json(r.report["pi"]), V::Constant(3, 1.0 / 3)) < 1e-6);
    }
    SUBCASE("two-agent space at pi/4") {
        const auto r = cmd_design_solve(parse_scenario(load("two_agent.json")));
        REQUIRE(r.code == kOk);
        CHECK(r.report["certificate"].get<double>() == doctest::Approx(2).epsilon(1e-6));
    }
}

TEST_CASE("validation errors map to exit code 2") {
    const auto r = guarded([] { return cmd_design_solve(parse_scenario(load("rank_deficient.json"))); });
    CHECK(r.code == kValidation);
    CHECK(r.message.find("span") != std::string::npos);

    const auto u = guarded([] { return cmd_game_solve(parse_scenario(load("unknown_field.json"))); });
    CHECK(u.code == kValidation);
    CHECK(u.message.find("budget") != std::string::npos);

    json doc = load("two_agent.json");
    doc["mechanism"] = {{"name", "infomax"}, {"w_max", {1, 2}}};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc["mechanism"] = {{"name", "eff"}, {"pi_star", {0, 0.5, 0.5}}};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc["mechanism"] = "auction";
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc = load("two_agent.json");
    doc["solver"] = {{"damping", 1.0}};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc = load("two_agent.json");
    doc["points"][0] = {{"polar", "phi"}};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc = load("two_agent.json");
    doc["costs"] = {2, -1};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
}

TEST_CASE("game solve") {
    SUBCASE("fed at pi/4") {
        const auto r = cmd_game_solve(parse_scenario(load("two_agent.json")));
        REQUIRE(r.code == kOk);
        CHECK(maxdiff(from_json(r.report["w"]), V::Constant(3, 0.25)) < 1e-6);
        CHECK(r.report["mechanism"]["name"] == "fed");
    }
    SUBCASE("infomax publishes w_max and the agents reach it") {
        json doc = load("two_agent.json");
        doc["mechanism"] = "auto-infomax";
        const auto r = cmd_game_solve(parse_scenario(doc));
        REQUIRE(r.code == kOk);
        const V w_max = from_json(r.report["mechanism"]["w_max"]);
        CHECK(maxdiff(from_json(r.report["w"]), w_max) < 1e-4);
        for (const auto& a : r.report["agents"]) CHECK(std::abs(a["ir_slack"].get<double>()) <= 1e-5);
    }
    SUBCASE("free riding") {
        const auto r = cmd_game_solve(parse_scenario(load("free_riding.json")));
        REQUIRE(r.code == kOk);
        CHECK(r.report["w"][3].get<double>() <= 1e-7);
        REQUIRE(r.report["free_riders"].size() == 1);
        CHECK(r.report["free_riders"][0]["agent"] == 3);
        CHECK_FALSE(r.report["agents"][3]["contributes"].get<bool>());
    }
    SUBCASE("an agent left without outside mass fails the mechanism precondition") {
        // π* puts nothing on agent 1's point, so agent 2 is alone under Eff
        json doc = load("two_agent.json");
        doc["mechanism"] = "eff";
        const auto r = cmd_game_solve(parse_scenario(doc));
        CHECK(r.code == kPrecondition);
        CHECK(r.message.find("outside") != std::string::npos);
    }
}

TEST_CASE("round trip through the published scenario is bit-for-bit") {
    for (const char* mech : {"fed", "infomax", "pureeff"}) {
        CAPTURE(mech);
        json doc = load("free_riding.json");
        doc["mechanism"] = mech;
        doc["start"] = "random";
        doc["seed"] = 17;
        const auto first = cmd_game_solve(parse_scenario(doc));
        REQUIRE(first.code == kOk);
        const json published = json::parse(first.report["scenario"].dump());
        CHECK(published["mechanism"].is_object());
        const auto second = cmd_game_solve(parse_scenario(published));
        REQUIRE(second.code == kOk);
        const auto a = first.report["w"].get<std::vector<double>>();
        const auto b = second.report["w"].get<std::vector<double>>();
        CHECK(a == b);
        CHECK(first.report["mechanism"] == second.report["mechanism"]);
    }
}

TEST_CASE("game verify") {
    const Scenario sc = parse_scenario(load("two_agent.json"));
    auto r = cmd_game_verify(sc, V::Constant(3, 0.25));
    REQUIRE(r.code == kOk);
    CHECK(r.report["equilibrium"].get<bool>());
    V off(3);
    off << 0.5, 1, 1;
    r = cmd_game_verify(sc, off);
    CHECK_FALSE(r.report["equilibrium"].get<bool>());
    CHECK(guarded([&] { return cmd_game_verify(sc, V::Constant(2, 0.25)); }).code == kValidation);
}

TEST_CASE("sweep over the angle") {
    const auto csv = run_sweep(load("two_agent.json"), "theta", "0.1:1.47:20", "fed,infomax");
    REQUIRE(csv.rows.size() == 40);
    for (std::size_t i = 0; i < csv.rows.size(); i += 2) {
        const auto& fed = csv.rows[i];
        const auto& im = csv.rows[i + 1];
        REQUIRE(fed.at("mechanism") == "fed");
        REQUIRE(im.at("mechanism") == "infomax");
        CHECK(fed.at("param") == im.at("param"));
        CHECK(fed.at("converged") == "true");
        CHECK(im.at("converged") == "true");
        CHECK(std::stod(im.at("total_information")) >= std::stod(fed.at("total_information")));
    }
}

TEST_CASE("sweep over the second cost follows the branch structure") {
    const double theta = std::atan(1.0);
    const auto csv = run_sweep(load("two_agent.json"), "costs[1]", "1.5:6:19", "fed");
    REQUIRE(csv.rows.size() == 19);
    std::set<int> branches;
    for (const auto& row : csv.rows) {
        const double c2 = std::stod(row.at("param"));
        const V want = two_agent_closed_form(theta, 2, c2);
        V got(3);
        got << std::stod(row.at("w_1")), std::stod(row.at("w_2")), std::stod(row.at("w_3"));
        CAPTURE(c2);
        CHECK(maxdiff(got, want) < 1e-5);
        branches.insert(c2 < 2 ? 0 : 1);
    }
    CHECK(branches.size() == 2);
}

TEST_CASE("sweep edge cases") {
    const json doc = load("two_agent.json");
    SUBCASE("nearly degenerate range") {
        const auto csv = run_sweep(doc, "theta", "0.7:0.7000001:2", "fed,infomax,pureeff");
        CHECK(csv.rows.size() == 6);
    }
    SUBCASE("failed rows are kept") {
        const auto csv = run_sweep(doc, "costs[1]", "2:3:3", "fed,eff");
        REQUIRE(csv.rows.size() == 6);
        for (const auto& row : csv.rows)
            if (row.at("mechanism") == "eff") {
                CHECK(row.at("converged") == "false");
                CHECK(row.at("w_1") == "nan");
            }
    }
    SUBCASE("column set depends on n and K only") {
        const auto a = run_sweep(doc, "theta", "0.2:0.3:2", "fed");
        const auto b = run_sweep(doc, "costs[0]", "1:4:2", "infomax,eff");
        CHECK(a.header == b.header);
        CHECK(a.header == sweep_header(3, 2));
        const auto c = run_sweep(load("free_riding.json"), "costs[3]", "2:3:2", "fed");
        CHECK(c.header == sweep_header(4, 4));
    }
    SUBCASE("bad specs") {
        CHECK_THROWS_AS(parse_sweep("theta", "1:0:3", "fed"), ValidationError);
        CHECK_THROWS_AS(parse_sweep("theta", "0:1:1", "fed"), ValidationError);
        CHECK_THROWS_AS(parse_sweep("theta", "0:1", "fed"), ValidationError);
        CHECK_THROWS_AS(parse_sweep("theta", "0:1:3", "fed,nope"), ValidationError);
        std::ostringstream os;
        CHECK(cmd_sweep(doc, parse_sweep("alpha", "0:1:3", "fed"), os).code == kValidation);
        CHECK(cmd_sweep(doc, parse_sweep("costs[5]", "0:1:3", "fed"), os).code == kValidation);
    }
}

TEST_CASE("analyze") {
    SUBCASE("efficiency with equal costs") {
        json doc = load("basis3.json");
        doc["points"] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0.6, 0.8, 0}};
        doc["groups"] = {{0, 3}, {1, 2}};
        const auto r = cmd_analyze(parse_scenario(doc), "efficiency");
        REQUIRE(r.code == kOk);
        CHECK(r.report["proportional"].get<bool>());
        CHECK(r.report["gap"].get<double>() <= 1e-3);
    }
    SUBCASE("freeride on the twin space") {
        const auto r = cmd_analyze(parse_scenario(load("twins.json")), "freeride");
        REQUIRE(r.code == kOk);
        REQUIRE(r.report["free_riders"].size() == 1);
        CHECK(r.report["free_riders"][0]["agent"] == 1);
        CHECK(r.report["free_riders"][0]["mass"].get<double>() <= 1e-7);
    }
    SUBCASE("poa on a single agent") {
        json doc = load("basis3.json");
        doc["groups"] = {{0, 1, 2}};
        doc["costs"] = {2};
        const auto r = cmd_analyze(parse_scenario(doc), "poa");
        REQUIRE(r.code == kOk);
        CHECK(r.report["ratio"].get<double>() == doctest::Approx(1).epsilon(1e-6));
    }
    SUBCASE("fairness") {
        const auto ok = cmd_analyze(parse_scenario(load("exchangeable.json")), "fairness");
        REQUIRE(ok.code == kOk);
        CHECK(ok.report["violations"] == 0);
        CHECK(cmd_analyze(parse_scenario(load("two_agent.json")), "fairness").code == kPrecondition);
    }
    SUBCASE("unknown analysis") {
        CHECK(cmd_analyze(parse_scenario(load("basis3.json")), "welfare").code == kValidation);
    }
}

TEST_CASE("seed and start handling") {
    json doc = load("free_riding.json");
    doc["start"] = "random";
    doc["seed"] = 3;
    const auto a = cmd_game_solve(parse_scenario(doc));
    const auto b = cmd_game_solve(parse_scenario(doc));
    CHECK(a.report["w"] == b.report["w"]);
    doc["start"] = {1, 1, 1, 1};
    CHECK(cmd_game_solve(parse_scenario(doc)).code == kOk);
    doc["start"] = {1, 1, 1};
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc["start"] = "middle";
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
    doc["start"] = "random";
    doc["seed"] = -1;
    CHECK(guarded([&] { return cmd_game_solve(parse_scenario(doc)); }).code == kValidation);
}
