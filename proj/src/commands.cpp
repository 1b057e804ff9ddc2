#include "fedoed/commands.hpp"

#include "fedoed/analysis.hpp"
#include "fedoed/design_solver.hpp"

#include <iomanip>
#include <sstream>

namespace fedoed {

namespace {

json arr(const Vec<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json score(const Score<double>& s) { return s ? json(s.value()) : json(nullptr); }

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json equilibrium_json(const EquilibriumReport<double>& rep) {
    json j;
    j["w"] = arr(rep.w);
    j["total_contribution"] = rep.w.sum();
    j["total_information"] = score(rep.total_information);
    j["converged"] = rep.converged;
    j["rounds"] = rep.rounds;
    j["auto_damped"] = rep.auto_damped;
    j["oscillation"] = rep.oscillation;
    j["cycle"] = json::array();
    for (const auto& c : rep.cycle) j["cycle"].push_back(arr(c));
    j["agents"] = json::array();
    for (std::size_t k = 0; k < rep.agents.size(); ++k) {
        const auto& a = rep.agents[k];
        j["agents"].push_back({{"agent", k},
                               {"utility", score(a.utility)},
                               {"scaling", num(a.scaling)},
                               {"ir_slack", num(a.ir_slack)},
                               {"kkt", num(a.kkt)},
                               {"mass", a.mass},
                               {"contributes", a.contributes}});
    }
    return j;
}

struct Solved {
    MechanismSpec<double> mech;
    EquilibriumReport<double> rep;
};

Solved solve(const Scenario& sc) {
    Solved s;
    s.mech = resolve_mechanism(sc);
    const auto cfg = game_config(sc, s.mech);
    s.rep = solve_equilibrium(cfg, start_point(sc, cfg));
    return s;
}

int status(const EquilibriumReport<double>& rep) { return rep.converged ? kOk : kNotConverged; }

std::string fmt(double x) {
    if (!std::isfinite(x)) return "nan";
    std::ostringstream os;
    os << std::setprecision(12) << x;
    return os.str();
}

}  // namespace

CommandResult cmd_design_solve(const Scenario& sc) {
    return guarded([&] {
        const auto opt = solve_optimal_design(Criterion<double>::D(), sc.space);
        CommandResult r;
        r.report = {{"pi", arr(opt.pi)},
                    {"value", opt.value},
                    {"certificate", opt.certificate},
                    {"d", sc.space.d()},
                    {"iterations", opt.iterations},
                    {"converged", opt.converged}};
        if (!opt.converged) {
            r.code = kNotConverged;
            r.message = "optimal design did not reach its certificate tolerance";
        }
        return r;
    });
}

CommandResult cmd_game_solve(const Scenario& sc) {
    return guarded([&] {
        const auto s = solve(sc);
        CommandResult r;
        r.report = equilibrium_json(s.rep);
        r.report["free_riders"] = json::array();
        for (const auto& f : free_riders(sc.agents, s.rep.w, sc.options.support))
            r.report["free_riders"].push_back({{"agent", f.agent}, {"mass", f.mass}});
        r.report["mechanism"] = mechanism_to_json(s.mech);
        r.report["scenario"] = published_scenario(sc, s.mech);
        r.code = status(s.rep);
        if (s.rep.oscillation) r.message = "best-response dynamics oscillate; the cycle is in the report";
        else if (!s.rep.converged) r.message = "best-response dynamics did not converge";
        return r;
    });
}

CommandResult cmd_game_verify(const Scenario& sc, const Vec<double>& w) {
    return guarded([&] {
        const auto mech = resolve_mechanism(sc);
        const auto cfg = game_config(sc, mech);
        check_measure(sc.space, w);
        const auto checks = verify_equilibrium(cfg, w);
        CommandResult r;
        bool eq = true;
        r.report["w"] = arr(w);
        r.report["mechanism"] = mechanism_to_json(mech);
        r.report["agents"] = json::array();
        for (std::size_t k = 0; k < checks.size(); ++k) {
            const auto& c = checks[k];
            eq = eq && c.improvement <= 1e-6;
            r.report["agents"].push_back({{"agent", k},
                                          {"improvement", num(c.improvement)},
                                          {"ir_slack", num(c.ir_slack)},
                                          {"contributes", c.contributes},
                                          {"ir_violated", c.ir_violated},
                                          {"best_block", arr(c.best_block)}});
        }
        r.report["equilibrium"] = eq;
        return r;
    });
}

CommandResult cmd_analyze(const Scenario& sc, const std::string& which) {
    return guarded([&]() -> CommandResult {
        CommandResult r;
        if (which == "poa") {
            std::optional<Vec<double>> wm;
            if (sc.mechanism.kind == MechanismKind::InfoMax && !sc.mechanism.publish) wm = sc.mechanism.spec.w_max;
            const auto p = price_of_anarchy(sc.space, sc.agents, wm);
            r.report = {{"ratio", p.ratio},
                        {"bound", p.bound_applicable ? json(p.bound) : json(nullptr)},
                        {"bound_applicable", p.bound_applicable},
                        {"social_good_max", p.sg_max},
                        {"social_good_w_max", p.sg_w_max},
                        {"argmax", arr(p.argmax)},
                        {"benefit", arr(p.benefit)},
                        {"converged", p.converged}};
            if (!p.converged) r.code = kNotConverged;
            return r;
        }
        if (which == "fairness" && !exchangeable(sc.space))
            return {kPrecondition, json(), "fairness analysis needs identical design points"};
        if (which != "efficiency" && which != "freeride" && which != "fairness")
            return {kValidation, json(), "unknown analysis '" + which + "'"};
        const auto s = solve(sc);
        r.report["equilibrium"] = equilibrium_json(s.rep);
        r.report["mechanism"] = mechanism_to_json(s.mech);
        r.code = status(s.rep);
        if (which == "efficiency") {
            const auto opt = solve_optimal_design(Criterion<double>::D(), sc.space);
            const auto e = efficiency_check(sc.space, s.rep.w, opt.pi);
            r.report["pi_star"] = arr(opt.pi);
            r.report["proportional"] = e.proportional;
            r.report["gap"] = e.gap;
        } else if (which == "freeride") {
            r.report["free_riders"] = json::array();
            for (const auto& f : free_riders(sc.agents, s.rep.w, sc.options.support))
                r.report["free_riders"].push_back({{"agent", f.agent}, {"mass", f.mass}});
        } else {
            const auto f = fairness_check(sc.space, sc.agents, s.mech, s.rep.w);
            r.report["violations"] = f.violations;
            r.report["utilities"] = f.utilities;
            r.report["masses"] = f.masses;
            r.report["pairs"] = json::array();
            for (const auto& p : f.pairs)
                r.report["pairs"].push_back({{"k", p.k},
                                             {"l", p.l},
                                             {"utility_geq", p.utility_geq},
                                             {"mass_geq", p.mass_geq},
                                             {"violation", p.violation}});
        }
        return r;
    });
}

SweepSpec parse_sweep(const std::string& param, const std::string& range, const std::string& mechanisms) {
    SweepSpec s;
    if (param.empty()) throw ValidationError("--param is required");
    s.param = param;
    std::istringstream rs(range);
    std::string lo, hi, steps;
    if (!std::getline(rs, lo, ':') || !std::getline(rs, hi, ':') || !std::getline(rs, steps) )
        throw ValidationError("--range must be lo:hi:steps");
    try {
        s.lo = std::stod(lo);
        s.hi = std::stod(hi);
        s.steps = std::stoi(steps);
    } catch (const std::exception&) {
        throw ValidationError("--range must be lo:hi:steps");
    }
    if (s.steps < 2) throw ValidationError("sweep needs at least 2 steps");
    if (!(s.lo < s.hi)) throw ValidationError("sweep range needs lo < hi");
    s.mechanisms.clear();
    std::istringstream ms(mechanisms);
    std::string m;
    while (std::getline(ms, m, ','))
        if (!m.empty()) s.mechanisms.push_back(mechanism_from_string(m));
    if (s.mechanisms.empty()) throw ValidationError("no mechanisms given");
    return s;
}

std::vector<std::string> sweep_header(Index n, Index K) {
    std::vector<std::string> h{"param", "mechanism"};
    for (Index i = 1; i <= n; ++i) h.push_back("w_" + std::to_string(i));
    h.push_back("total_contribution");
    h.push_back("total_information");
    for (Index k = 1; k <= K; ++k) h.push_back("u_" + std::to_string(k));
    h.push_back("converged");
    return h;
}

CommandResult cmd_sweep(const json& scenario_doc, const SweepSpec& spec, std::ostream& out) {
    return guarded([&] {
        const Scenario base = parse_scenario(scenario_doc);
        with_parameter(scenario_doc, spec.param, spec.lo);  // unknown parameters fail before any row
        const Index n = base.space.n(), K = base.space.K();
        const auto header = sweep_header(n, K);
        for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
        out << "\n";
        CommandResult r;
        int rows = 0, failed = 0;
        for (int j = 0; j < spec.steps; ++j) {
            const double value = spec.lo + (spec.hi - spec.lo) * j / (spec.steps - 1);
            for (MechanismKind mk : spec.mechanisms) {
                std::vector<std::string> cells{fmt(value), to_string(mk)};
                bool ok = false;
                try {
                    json doc = with_parameter(scenario_doc, spec.param, value);
                    doc["mechanism"] = to_string(mk);
                    const auto s = solve(parse_scenario(doc));
                    for (Index i = 0; i < n; ++i) cells.push_back(fmt(s.rep.w(i)));
                    cells.push_back(fmt(s.rep.w.sum()));
                    cells.push_back(fmt(s.rep.total_information.value_or(NAN)));
                    for (const auto& a : s.rep.agents) cells.push_back(fmt(a.utility.value_or(NAN)));
                    ok = s.rep.converged;
                } catch (const Error&) {
                    cells.resize(2);
                    for (Index i = 0; i < n + 2 + K; ++i) cells.push_back("nan");
                }
                cells.push_back(ok ? "true" : "false");
                for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
                out << "\n";
                ++rows;
                failed += !ok;
            }
        }
        r.report = {{"rows", rows}, {"failed", failed}};
        return r;
    });
}

}  // namespace fedoed
