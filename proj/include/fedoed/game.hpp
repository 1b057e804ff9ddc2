#pragma once

#include "fedoed/mechanisms.hpp"

#include <deque>
#include <functional>
#include <random>

namespace fedoed {

struct GameOptions {
    long max_rounds = 2000;
    double damping = 0.0;
    double inner_tol = 1e-10;
    double outer_tol = 1e-6;  // per-agent KKT residual
    double step_tol = 1e-8;   // max-norm change over a round
    double support = 1e-7;
    std::uint64_t seed = 0;
};

template <class T>
struct GameConfig {
    DesignSpace<T> space;
    std::vector<AgentProfile<T>> agents;
    MechanismSpec<T> mech;
    GameOptions opt;

    void validate() const {
        if (agents.size() != static_cast<std::size_t>(space.K()))
            throw ValidationError("one agent profile per group is required");
        if (!(opt.damping >= 0.0 && opt.damping < 1.0)) throw ValidationError("damping must lie in [0, 1)");
        if (!(opt.inner_tol > 0 && opt.outer_tol > 0 && opt.step_tol > 0)) throw ValidationError("tolerances must be positive");
        const Index n = space.n();
        if (mech.kind == MechanismKind::InfoMax && mech.w_max.size() != n) throw DimensionMismatch("w_max length");
        if ((mech.kind == MechanismKind::PureEff || mech.kind == MechanismKind::Eff) && mech.pi_star.size() != n)
            throw DimensionMismatch("pi_star length");
    }
};

template <class T>
struct BlockObjective {
    std::function<T(const Vec<T>&)> S;
    std::function<Vec<T>(const Vec<T>&)> grad;
    BlockPenalty<T> P;
};

namespace detail {

template <class T>
bool nonsmooth(const Criterion<T>& c) {
    return c.tag == CriterionTag::E || c.tag == CriterionTag::G;
}

template <class T>
Vec<T> with_block(Vec<T> w, const Group& g, const Vec<T>& x) {
    scatter<T>(w, g, x);
    return w;
}

}  // namespace detail

// Agent k's objective over its own block with everything else frozen at w: maximize S(x) - P(x).
template <class T>
BlockObjective<T> block_objective(const GameConfig<T>& cfg, Index k, const Measure<T>& w, T tau = T(0)) {
    const auto& agent = cfg.agents[static_cast<std::size_t>(k)];
    const auto& space = cfg.space;
    const auto& mech = cfg.mech;
    const Vec<T> base = w;
    const T ninf = -std::numeric_limits<T>::infinity();
    BlockObjective<T> out;
    const bool plain = agent.criterion.tag == CriterionTag::D || mech.kind == MechanismKind::Fed;
    if (plain) {
        out.S = [&agent, &space, base, tau, ninf](const Vec<T>& x) {
            return eval_local(agent, space, detail::with_block(base, agent.group, x), tau).value_or(ninf);
        };
        out.grad = [&agent, &space, base, tau](const Vec<T>& x) {
            return local_gradient(agent, space, detail::with_block(base, agent.group, x), agent.group, tau);
        };
        out.P = agent.criterion.tag == CriterionTag::D
                    ? d_block_penalty(mech, agent, space, base)
                    : BlockPenalty<T>::linear(static_cast<Index>(agent.group.size()), agent.cost);
        return out;
    }
    // f on the scaled information: v·exp(h), with the sampling cost left to the penalty
    out.S = [&agent, &space, &mech, base, tau, ninf](const Vec<T>& x) {
        const Vec<T> full = detail::with_block(base, agent.group, x);
        const Score<T> v = eval_local(agent, space, full, tau);
        if (!v) return ninf;
        const T h = log_scale_penalty(mech, agent, space, full);
        if (!std::isfinite(static_cast<double>(h))) return ninf;
        return v.value() * std::exp(h);
    };
    out.grad = [&agent, &space, &mech, base, tau](const Vec<T>& x) {
        const Vec<T> full = detail::with_block(base, agent.group, x);
        const T v = eval_local(agent, space, full, tau).value();
        const T e = std::exp(log_scale_penalty(mech, agent, space, full));
        return Vec<T>(e * (local_gradient(agent, space, full, agent.group, tau) +
                           v * log_scale_penalty_grad(mech, agent, space, full)));
    };
    out.P = BlockPenalty<T>::linear(static_cast<Index>(agent.group.size()),
                                    mechanism_has_cost(mech) ? agent.cost : T(0));
    if (mech.kind == MechanismKind::Eff) {
        out.P.pinned.assign(agent.group.size(), false);
        for (std::size_t j = 0; j < agent.group.size(); ++j) out.P.pinned[j] = mech.pi_star(agent.group[j]) <= T(0);
    }
    return out;
}

template <class T>
struct BestResponse {
    Vec<T> block;
    Score<T> utility = Score<T>::infeasible();
    T residual = std::numeric_limits<T>::infinity();
    bool converged = false;
};

namespace detail {

template <class T>
T block_residual(const BlockObjective<T>& ob, const Vec<T>& x) {
    if (!std::isfinite(static_cast<double>(ob.S(x)))) return std::numeric_limits<T>::infinity();
    return natural_residual<T>(x, ob.grad(x), ob.P);
}

template <class T>
T smoothing_floor(T scale) {
    return T(1e-8) * std::max(T(1e-12), scale);
}

}  // namespace detail

// Maximize agent k's effective utility over its block. `upper` caps the block elementwise.
template <class T>
BestResponse<T> best_response(const GameConfig<T>& cfg, Index k, const Measure<T>& w,
                              const std::optional<std::type_identity_t<Vec<T>>>& upper = std::nullopt) {
    const auto& agent = cfg.agents[static_cast<std::size_t>(k)];
    const Group& g = agent.group;
    AscentOptions aopt;
    aopt.tol = cfg.opt.inner_tol;
    aopt.max_iter = 20000;

    auto objective = [&](T tau) {
        auto ob = block_objective(cfg, k, w, tau);
        if (upper) ob.P.upper = *upper;
        return ob;
    };
    auto ob = objective(T(0));
    auto feasible = [&](const Vec<T>& x) { return std::isfinite(static_cast<double>(ob.S(ob.P.clamp(x)))); };

    // seeds: current block, then topped up with the standalone argument or the published targets
    Vec<T> x0 = restrict_to<T>(w, g);
    if (upper) x0 = x0.cwiseMin(*upper);
    if (!feasible(x0)) {
        std::vector<Vec<T>> seeds;
        seeds.push_back(x0.cwiseMax(restrict_to<T>(standalone_value(agent, cfg.space).arg, g)));
        if (cfg.mech.kind == MechanismKind::Eff)
            seeds.push_back(x0.cwiseMax(restrict_to<T>(Vec<T>(cfg.mech.n_max * cfg.mech.pi_star), g)));
        if (cfg.mech.kind == MechanismKind::InfoMax) seeds.push_back(x0.cwiseMax(restrict_to<T>(cfg.mech.w_max, g)));
        for (auto& sd : seeds) {
            if (upper) sd = sd.cwiseMin(*upper);
            if (feasible(sd)) {
                x0 = sd;
                break;
            }
        }
    }
    BestResponse<T> out;
    if (!feasible(x0)) {
        out.block = x0;
        return out;
    }
    x0 = ob.P.clamp(x0);

    AscentResult<T> res;
    if (!detail::nonsmooth(agent.criterion)) {
        res = prox_ascent<T>(ob.S, ob.grad, ob.P, x0, aopt);
    } else {
        res = prox_ascent<T>(ob.S, ob.grad, ob.P, x0, aopt);
        const T scale = std::abs(res.value);
        for (T tau = T(1e-2) * scale; tau >= detail::smoothing_floor(scale); tau /= T(10)) {
            auto sm = objective(tau);
            res = prox_ascent<T>(sm.S, sm.grad, sm.P, res.x, aopt);
        }
    }
    out.block = res.x;
    out.residual = res.residual;
    out.converged = res.converged;
    out.utility = effective_utility(cfg.mech, agent, cfg.space, detail::with_block(Vec<T>(w), g, res.x));
    // never return something worse than the starting block
    const Score<T> u0 = effective_utility(cfg.mech, agent, cfg.space, detail::with_block(Vec<T>(w), g, x0));
    if (u0 > out.utility) {
        out.block = x0;
        out.utility = u0;
    }
    return out;
}

// First-order residual of agent k's block at w (smoothed at the final continuation level for E and G).
template <class T>
T kkt_residual(const GameConfig<T>& cfg, Index k, const Measure<T>& w) {
    const auto& agent = cfg.agents[static_cast<std::size_t>(k)];
    T tau = T(0);
    if (detail::nonsmooth(agent.criterion)) {
        const Score<T> v = eval_local(agent, cfg.space, w);
        if (!v) return std::numeric_limits<T>::infinity();
        tau = detail::smoothing_floor(std::abs(v.value()));
    }
    const auto ob = block_objective(cfg, k, w, tau);
    return detail::block_residual(ob, restrict_to<T>(w, agent.group));
}

template <class T>
struct AgentOutcome {
    Score<T> utility = Score<T>::infeasible();
    T scaling = T(1);
    T ir_slack = T(0);
    T kkt = T(0);
    T mass = T(0);
    bool contributes = false;
};

template <class T>
struct EquilibriumReport {
    Vec<T> w;
    std::vector<AgentOutcome<T>> agents;
    Score<T> total_information = Score<T>::infeasible();
    bool converged = false;
    long rounds = 0;
    bool auto_damped = false;
    bool oscillation = false;
    std::vector<Vec<T>> cycle;
};

template <class T>
std::vector<T> standalone_values(const GameConfig<T>& cfg) {
    std::vector<T> v;
    for (const auto& a : cfg.agents) v.push_back(standalone_value(a, cfg.space).value);
    return v;
}

template <class T>
Vec<T> standalone_start(const GameConfig<T>& cfg) {
    Vec<T> w = Vec<T>::Zero(cfg.space.n());
    for (const auto& a : cfg.agents) w += standalone_value(a, cfg.space).arg;
    return w;
}

// Random start: each block gets uniform random weights with the block's standalone mass.
template <class T>
Vec<T> random_start(const GameConfig<T>& cfg, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    Vec<T> w = Vec<T>::Zero(cfg.space.n());
    for (const auto& a : cfg.agents) {
        const T mass = standalone_value(a, cfg.space).argmass;
        Vec<T> b(static_cast<Index>(a.group.size()));
        for (Index j = 0; j < b.size(); ++j) b(j) = T(u(gen));
        scatter<T>(w, a.group, Vec<T>(b * (mass / b.sum())));
    }
    return w;
}

template <class T>
EquilibriumReport<T> equilibrium_report(const GameConfig<T>& cfg, const Measure<T>& w) {
    EquilibriumReport<T> rep;
    rep.w = w;
    const auto v = standalone_values(cfg);
    for (std::size_t k = 0; k < cfg.agents.size(); ++k) {
        const auto& a = cfg.agents[k];
        AgentOutcome<T> o;
        o.mass = block_mass(w, a.group);
        o.contributes = o.mass > T(cfg.opt.support);
        o.utility = effective_utility(cfg.mech, a, cfg.space, w);
        try {
            o.scaling = scaling_factor(cfg.mech, a, cfg.space, w);
        } catch (const DegenerateOutsideMass&) {
            o.scaling = std::numeric_limits<T>::quiet_NaN();
        }
        o.ir_slack = o.utility ? o.utility.value() - v[k] : -std::numeric_limits<T>::infinity();
        o.kkt = kkt_residual(cfg, static_cast<Index>(k), w);
        rep.agents.push_back(o);
    }
    rep.total_information = eval_global<T>(Criterion<T>::D(), cfg.space, w);
    return rep;
}

// Round-robin best-response dynamics.
template <class T>
EquilibriumReport<T> solve_equilibrium(const GameConfig<T>& cfg, const std::optional<std::type_identity_t<Vec<T>>>& start = std::nullopt) {
    cfg.validate();
    Vec<T> w = start ? *start : standalone_start(cfg);
    check_measure(cfg.space, w);
    T damping = T(cfg.opt.damping);
    bool auto_damped = false;
    std::deque<Vec<T>> history;
    long round = 0;
    bool converged = false, oscillation = false;
    std::vector<Vec<T>> cycle;
    for (; round < cfg.opt.max_rounds; ++round) {
        const Vec<T> prev = w;
        for (Index k = 0; k < static_cast<Index>(cfg.agents.size()); ++k) {
            const auto& g = cfg.agents[static_cast<std::size_t>(k)].group;
            const auto br = best_response(cfg, k, w);
            if (!br.utility) continue;
            const Vec<T> old = restrict_to<T>(w, g);
            scatter<T>(w, g, Vec<T>((T(1) - damping) * br.block + damping * old));
        }
        const T delta = (w - prev).cwiseAbs().maxCoeff();
        if (delta <= T(cfg.opt.step_tol)) {
            T worst = 0;
            for (Index k = 0; k < static_cast<Index>(cfg.agents.size()); ++k) worst = std::max(worst, kkt_residual(cfg, k, w));
            if (worst <= T(cfg.opt.outer_tol)) {
                converged = true;
                ++round;
                break;
            }
        }
        // a short cycle in the iterates
        for (std::size_t lag = 2; lag <= std::min<std::size_t>(8, history.size()); ++lag) {
            const Vec<T>& past = history[history.size() - lag];
            if ((w - past).cwiseAbs().maxCoeff() <= T(1e-10) && delta > T(cfg.opt.step_tol)) {
                if (damping == T(0)) {
                    damping = T(0.5);
                    auto_damped = true;
                    history.clear();
                } else {
                    oscillation = true;
                    cycle.assign(history.end() - static_cast<long>(lag), history.end());
                }
                break;
            }
        }
        if (oscillation) break;
        history.push_back(w);
        if (history.size() > 9) history.pop_front();
    }
    auto rep = equilibrium_report(cfg, w);
    rep.converged = converged;
    rep.rounds = round;
    rep.auto_damped = auto_damped;
    rep.oscillation = oscillation;
    rep.cycle = cycle;
    return rep;
}

template <class T>
struct AgentCheck {
    T improvement = T(0);  // best-response utility gain with the rest frozen
    T ir_slack = T(0);
    bool contributes = false;
    bool ir_violated = false;
    Vec<T> best_block;
};

template <class T>
std::vector<AgentCheck<T>> verify_equilibrium(const GameConfig<T>& cfg, const Measure<T>& w) {
    cfg.validate();
    const auto v = standalone_values(cfg);
    std::vector<AgentCheck<T>> out;
    for (std::size_t k = 0; k < cfg.agents.size(); ++k) {
        const auto& a = cfg.agents[k];
        AgentCheck<T> c;
        const Score<T> u = effective_utility(cfg.mech, a, cfg.space, w);
        const auto br = best_response(cfg, static_cast<Index>(k), w);
        c.best_block = br.block;
        if (br.utility && u) c.improvement = std::max(T(0), br.utility.value() - u.value());
        else if (br.utility) c.improvement = std::numeric_limits<T>::infinity();
        c.ir_slack = u ? u.value() - v[k] : -std::numeric_limits<T>::infinity();
        c.contributes = block_mass(w, a.group) > T(cfg.opt.support);
        c.ir_violated = c.contributes && c.ir_slack < T(-1e-6);
        out.push_back(c);
    }
    return out;
}

enum class DeviationDirection { Down, Any };

template <class T>
struct Deviation {
    Vec<T> block;
    T gain = T(0);
};

template <class T>
Deviation<T> deviation_search(const GameConfig<T>& cfg, const Measure<T>& w, Index k, DeviationDirection dir) {
    const auto& a = cfg.agents[static_cast<std::size_t>(k)];
    std::optional<Vec<T>> cap;
    if (dir == DeviationDirection::Down) cap = restrict_to<T>(w, a.group);
    const auto br = best_response(cfg, k, w, cap);
    const Score<T> u = effective_utility(cfg.mech, a, cfg.space, w);
    Deviation<T> out;
    out.block = br.block;
    if (br.utility && u) out.gain = br.utility.value() - u.value();
    else if (br.utility) out.gain = std::numeric_limits<T>::infinity();
    return out;
}

}  // namespace fedoed
