#include "fedoed/scenario.hpp"

#include <fstream>
#include <regex>
#include <set>

namespace fedoed {

namespace {

void allow_only(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!ok.count(it.key())) throw ValidationError("unknown field '" + it.key() + "' in " + where);
}

double number(const json& v, const std::string& what) {
    if (!v.is_number()) throw ValidationError(what + " must be a number");
    return v.get<double>();
}

Vec<double> vector_of(const json& v, const std::string& what) {
    if (!v.is_array()) throw ValidationError(what + " must be an array of numbers");
    Vec<double> out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = number(v[i], what);
    return out;
}

double param_value(const json& p, const std::map<std::string, double>& params, const std::string& what) {
    if (p.is_number()) return p.get<double>();
    if (p.is_string()) {
        auto it = params.find(p.get<std::string>());
        if (it == params.end()) throw ValidationError(what + " refers to unknown parameter '" + p.get<std::string>() + "'");
        return it->second;
    }
    throw ValidationError(what + " must be a number or a parameter name");
}

// A point is an array of coordinates or {"polar": angle, "radius": r} in the plane.
Vec<double> parse_point(const json& p, const std::map<std::string, double>& params, std::size_t i) {
    const std::string what = "points[" + std::to_string(i) + "]";
    if (p.is_array()) return vector_of(p, what);
    if (p.is_object()) {
        allow_only(p, {"polar", "radius"}, what);
        if (!p.contains("polar")) throw ValidationError(what + " needs 'polar'");
        const double a = param_value(p["polar"], params, what);
        const double r = p.contains("radius") ? param_value(p["radius"], params, what) : 1.0;
        Vec<double> x(2);
        x << r * std::cos(a), r * std::sin(a);
        return x;
    }
    throw ValidationError(what + " must be an array or a polar point");
}

Criterion<double> parse_criterion(const json& c, std::size_t k) {
    const std::string what = "criteria[" + std::to_string(k) + "]";
    if (c.is_string()) return Criterion<double>{criterion_from_string(c.get<std::string>()), {}};
    if (c.is_object()) {
        allow_only(c, {"name", "weights"}, what);
        if (!c.contains("name") || !c["name"].is_string()) throw ValidationError(what + " needs a name");
        Criterion<double> out{criterion_from_string(c["name"].get<std::string>()), {}};
        if (c.contains("weights")) {
            if (out.tag != CriterionTag::V) throw ValidationError(what + ": weights apply to V only");
            out.p = vector_of(c["weights"], what + ".weights");
        }
        return out;
    }
    throw ValidationError(what + " must be a name or an object");
}

MechanismRequest parse_mechanism(const json& m, Index n) {
    MechanismRequest req;
    if (m.is_string()) {
        std::string name = m.get<std::string>();
        if (name.rfind("auto-", 0) == 0) name = name.substr(5);
        req.kind = mechanism_from_string(name);
        req.publish = req.kind != MechanismKind::Fed;
        return req;
    }
    if (!m.is_object()) throw ValidationError("mechanism must be a name or an object");
    allow_only(m, {"name", "w_max", "pi_star", "n_max"}, "mechanism");
    if (!m.contains("name") || !m["name"].is_string()) throw ValidationError("mechanism needs a name");
    req.kind = mechanism_from_string(m["name"].get<std::string>());
    auto& s = req.spec;
    s.kind = req.kind;
    auto vec_n = [&](const char* key) {
        Vec<double> v = vector_of(m[key], std::string("mechanism.") + key);
        if (v.size() != n) throw ValidationError(std::string("mechanism.") + key + " must have one entry per point");
        if ((v.array() < 0).any()) throw ValidationError(std::string("mechanism.") + key + " must be nonnegative");
        return v;
    };
    switch (req.kind) {
        case MechanismKind::Fed:
            if (m.size() > 1) throw ValidationError("the fed mechanism takes no parameters");
            break;
        case MechanismKind::InfoMax:
            if (m.contains("pi_star") || m.contains("n_max")) throw ValidationError("infomax takes only w_max");
            req.publish = !m.contains("w_max");
            if (!req.publish) s.w_max = vec_n("w_max");
            break;
        case MechanismKind::PureEff:
            if (m.contains("w_max") || m.contains("n_max")) throw ValidationError("pureeff takes only pi_star");
            req.publish = !m.contains("pi_star");
            if (!req.publish) s.pi_star = vec_n("pi_star");
            break;
        case MechanismKind::Eff:
            if (m.contains("w_max")) throw ValidationError("eff takes pi_star and n_max");
            if (m.contains("pi_star") != m.contains("n_max"))
                throw ValidationError("eff needs both pi_star and n_max, or neither");
            req.publish = !m.contains("pi_star");
            if (!req.publish) {
                s.pi_star = vec_n("pi_star");
                s.n_max = number(m["n_max"], "mechanism.n_max");
                if (!(s.n_max >= 0)) throw ValidationError("mechanism.n_max must be nonnegative");
            }
            break;
    }
    return req;
}

GameOptions parse_solver(const json& s) {
    if (!s.is_object()) throw ValidationError("solver must be an object");
    allow_only(s, {"max_rounds", "damping", "inner_tol", "outer_tol", "step_tol", "support"}, "solver");
    GameOptions o;
    if (s.contains("max_rounds")) {
        if (!s["max_rounds"].is_number_integer() || s["max_rounds"].get<long>() < 1)
            throw ValidationError("solver.max_rounds must be a positive integer");
        o.max_rounds = s["max_rounds"].get<long>();
    }
    if (s.contains("damping")) o.damping = number(s["damping"], "solver.damping");
    if (s.contains("inner_tol")) o.inner_tol = number(s["inner_tol"], "solver.inner_tol");
    if (s.contains("outer_tol")) o.outer_tol = number(s["outer_tol"], "solver.outer_tol");
    if (s.contains("step_tol")) o.step_tol = number(s["step_tol"], "solver.step_tol");
    if (s.contains("support")) o.support = number(s["support"], "solver.support");
    if (!(o.damping >= 0 && o.damping < 1)) throw ValidationError("solver.damping must lie in [0, 1)");
    if (!(o.inner_tol > 0 && o.outer_tol > 0 && o.step_tol > 0 && o.support > 0))
        throw ValidationError("solver tolerances must be positive");
    return o;
}

}  // namespace

Scenario parse_scenario(const json& doc) {
    if (!doc.is_object()) throw ValidationError("scenario must be an object");
    allow_only(doc, {"points", "params", "groups", "costs", "criteria", "mechanism", "solver", "seed", "start"},
               "scenario");
    for (const char* key : {"points", "groups", "costs"})
        if (!doc.contains(key)) throw ValidationError(std::string("scenario needs '") + key + "'");
    Scenario sc;
    sc.source = doc;

    std::map<std::string, double> params;
    if (doc.contains("params")) {
        if (!doc["params"].is_object()) throw ValidationError("params must be an object");
        for (auto it = doc["params"].begin(); it != doc["params"].end(); ++it)
            params[it.key()] = number(it.value(), "params." + it.key());
    }

    const json& pts = doc["points"];
    if (!pts.is_array() || pts.empty()) throw ValidationError("points must be a nonempty array");
    std::vector<Vec<double>> cols;
    for (std::size_t i = 0; i < pts.size(); ++i) cols.push_back(parse_point(pts[i], params, i));
    const Index d = cols[0].size();
    Mat<double> X(d, static_cast<Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        if (cols[i].size() != d) throw ValidationError("all points must have the same dimension");
        X.col(static_cast<Index>(i)) = cols[i];
    }

    const json& gs = doc["groups"];
    if (!gs.is_array()) throw ValidationError("groups must be an array of index arrays");
    std::vector<Group> groups;
    for (const auto& g : gs) {
        if (!g.is_array()) throw ValidationError("each group must be an array of indices");
        Group grp;
        for (const auto& i : g) {
            if (!i.is_number_integer()) throw ValidationError("group indices must be integers");
            grp.push_back(i.get<Index>());
        }
        groups.push_back(grp);
    }
    sc.space = DesignSpace<double>(X, groups);

    const Vec<double> costs = vector_of(doc["costs"], "costs");
    if (costs.size() != sc.space.K()) throw ValidationError("costs must have one entry per group");
    std::vector<Criterion<double>> crits(static_cast<std::size_t>(sc.space.K()), Criterion<double>::D());
    if (doc.contains("criteria")) {
        const json& cs = doc["criteria"];
        if (!cs.is_array() || static_cast<Index>(cs.size()) != sc.space.K())
            throw ValidationError("criteria must have one entry per group");
        for (std::size_t k = 0; k < cs.size(); ++k) crits[k] = parse_criterion(cs[k], k);
    }
    for (Index k = 0; k < sc.space.K(); ++k)
        sc.agents.push_back(make_agent(sc.space, k, costs(k), crits[static_cast<std::size_t>(k)]));

    if (doc.contains("mechanism")) sc.mechanism = parse_mechanism(doc["mechanism"], sc.space.n());
    if (doc.contains("solver")) sc.options = parse_solver(doc["solver"]);
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_integer() || doc["seed"].get<long long>() < 0)
            throw ValidationError("seed must be a nonnegative integer");
        sc.seed = doc["seed"].get<std::uint64_t>();
    }
    sc.options.seed = sc.seed;
    if (doc.contains("start")) {
        const json& s = doc["start"];
        if (s.is_string()) {
            const auto name = s.get<std::string>();
            if (name == "standalone") sc.start = StartKind::Standalone;
            else if (name == "random") sc.start = StartKind::Random;
            else throw ValidationError("start must be 'standalone', 'random' or a weight array");
        } else {
            sc.start = StartKind::Given;
            sc.start_w = vector_of(s, "start");
            check_measure(sc.space, sc.start_w);
        }
    }
    if (sc.mechanism.publish) {
        for (const auto& a : sc.agents)
            if (a.criterion.tag != CriterionTag::D && sc.mechanism.kind != MechanismKind::PureEff)
                throw ValidationError("published mechanism parameters require D agents");
    } else {
        GameConfig<double> cfg = game_config(sc, sc.mechanism.spec);
        cfg.validate();
    }
    return sc;
}

Scenario read_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("scenario is not valid JSON: ") + e.what());
    }
    return parse_scenario(doc);
}

MechanismSpec<double> resolve_mechanism(const Scenario& sc) {
    if (!sc.mechanism.publish) return sc.mechanism.spec;
    return publish_mechanism(sc.mechanism.kind, sc.space, sc.agents);
}

json mechanism_to_json(const MechanismSpec<double>& spec) {
    json m;
    m["name"] = to_string(spec.kind);
    auto arr = [](const Vec<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    switch (spec.kind) {
        case MechanismKind::Fed:
            break;
        case MechanismKind::InfoMax:
            m["w_max"] = arr(spec.w_max);
            break;
        case MechanismKind::PureEff:
            m["pi_star"] = arr(spec.pi_star);
            break;
        case MechanismKind::Eff:
            m["pi_star"] = arr(spec.pi_star);
            m["n_max"] = spec.n_max;
            break;
    }
    return m;
}

json published_scenario(const Scenario& sc, const MechanismSpec<double>& spec) {
    json doc = sc.source;
    doc["mechanism"] = mechanism_to_json(spec);
    return doc;
}

json with_parameter(json doc, const std::string& path, double value) {
    static const std::regex indexed(R"(costs\[(\d+)\])");
    std::smatch m;
    if (std::regex_match(path, m, indexed)) {
        const std::size_t i = std::stoul(m[1].str());
        if (!doc.contains("costs") || !doc["costs"].is_array() || i >= doc["costs"].size())
            throw ValidationError("sweep parameter " + path + " is out of range");
        doc["costs"][i] = value;
        return doc;
    }
    if (!doc.contains("params") || !doc["params"].contains(path))
        throw ValidationError("unknown sweep parameter '" + path + "'");
    doc["params"][path] = value;
    return doc;
}

GameConfig<double> game_config(const Scenario& sc, const MechanismSpec<double>& spec) {
    GameConfig<double> cfg;
    cfg.space = sc.space;
    cfg.agents = sc.agents;
    cfg.mech = spec;
    cfg.opt = sc.options;
    return cfg;
}

std::optional<Vec<double>> start_point(const Scenario& sc, const GameConfig<double>& cfg) {
    switch (sc.start) {
        case StartKind::Standalone:
            return std::nullopt;
        case StartKind::Random:
            return random_start(cfg, sc.seed);
        case StartKind::Given:
            return sc.start_w;
    }
    return std::nullopt;
}

}  // namespace fedoed
