#pragma once

#include "fedoed/design_solver.hpp"
#include "fedoed/optim.hpp"

namespace fedoed {

enum class MechanismKind { Fed, InfoMax, PureEff, Eff };

inline const char* to_string(MechanismKind k) {
    switch (k) {
        case MechanismKind::Fed: return "fed";
        case MechanismKind::InfoMax: return "infomax";
        case MechanismKind::PureEff: return "pureeff";
        case MechanismKind::Eff: return "eff";
    }
    return "?";
}

inline MechanismKind mechanism_from_string(const std::string& s) {
    if (s == "fed") return MechanismKind::Fed;
    if (s == "infomax") return MechanismKind::InfoMax;
    if (s == "pureeff") return MechanismKind::PureEff;
    if (s == "eff") return MechanismKind::Eff;
    throw ValidationError("unknown mechanism '" + s + "'");
}

template <class T>
struct MechanismSpec {
    MechanismKind kind = MechanismKind::Fed;
    Vec<T> w_max;    // InfoMax
    Vec<T> pi_star;  // PureEff, Eff
    T n_max = T(0);  // Eff

    static MechanismSpec fed() { return {}; }
    static MechanismSpec infomax(Vec<T> w) { return {MechanismKind::InfoMax, std::move(w), {}, T(0)}; }
    static MechanismSpec pure_eff(Vec<T> pi) { return {MechanismKind::PureEff, {}, std::move(pi), T(0)}; }
    static MechanismSpec eff(Vec<T> pi, T n) { return {MechanismKind::Eff, {}, std::move(pi), n}; }
};

template <class T>
struct StandaloneValue {
    T value = T(0);
    T argmass = T(0);
    Vec<T> arg;  // length n, zero outside the agent's group
};

namespace detail {

// The agent's problem with no outside information, posed in its own coordinates.
template <class T>
AscentResult<T> isolated_problem(const AgentProfile<T>& agent, const Mat<T>& Z, const Vec<T>& start,
                                 T tau, const AscentOptions& opt) {
    const Index r = Z.rows();
    auto S = [&](const Measure<T>& w) -> T {
        const Mat<T> M = Z * w.asDiagonal() * Z.transpose();
        if (numerical_rank<T>(M) < r) return -std::numeric_limits<T>::infinity();
        const Mat<T> L = M.inverse();
        return criterion_value<T>(agent.criterion, (L + L.transpose()) / T(2), Z, tau)
            .value_or(-std::numeric_limits<T>::infinity());
    };
    auto G = [&](const Measure<T>& w) -> Vec<T> {
        const Mat<T> M = Z * w.asDiagonal() * Z.transpose();
        Mat<T> L = M.inverse();
        L = (L + L.transpose()) / T(2);
        return criterion_gradient<T>(agent.criterion, L, Z, L * Z, tau);
    };
    return prox_ascent<T>(S, G, BlockPenalty<T>::linear(Z.cols(), agent.cost), start, opt);
}

template <class T>
AscentResult<T> isolated_solve(const AgentProfile<T>& agent, const Mat<T>& Z, Vec<T> start) {
    const bool nonsmooth = agent.criterion.tag == CriterionTag::E || agent.criterion.tag == CriterionTag::G;
    AscentOptions opt;
    opt.tol = 1e-10;
    opt.max_iter = 50000;
    if (!nonsmooth) return isolated_problem<T>(agent, Z, start, T(0), opt);
    auto res = isolated_problem<T>(agent, Z, start, T(0), opt);
    T scale = std::max(T(1e-12), std::abs(res.value));
    for (T tau = T(1e-2) * scale; tau >= T(1e-11) * scale; tau /= T(10))
        res = isolated_problem<T>(agent, Z, res.x, tau, opt);
    return res;
}

}  // namespace detail

template <class T>
StandaloneValue<T> standalone_value(const AgentProfile<T>& agent, const DesignSpace<T>& space,
                                    const DesignOptions& dopt = {}) {
    const Mat<T> Z = agent.basis.transpose() * space.group_points(agent.group);
    const T r = T(agent.rank());
    StandaloneValue<T> out;
    out.arg = Vec<T>::Zero(space.n());
    auto local = detail::d_optimal<T>(Z, dopt);
    if (agent.criterion.tag == CriterionTag::D) {
        out.value = local.value + r * std::log(r / agent.cost) - r;
        out.argmass = r / agent.cost;
        scatter<T>(out.arg, agent.group, Vec<T>(local.pi * out.argmass));
        return out;
    }
    const Index m = Z.cols();
    std::vector<Vec<T>> starts;
    starts.push_back(local.pi * (r / agent.cost));
    starts.push_back(Vec<T>::Constant(m, T(1) / agent.cost));
    Vec<T> ramp(m);
    for (Index i = 0; i < m; ++i) ramp(i) = T(i + 1);
    starts.push_back(ramp * (T(2) * r / (agent.cost * ramp.sum())));
    bool have = false;
    AscentResult<T> best;
    for (const auto& s : starts) {
        auto res = detail::isolated_solve<T>(agent, Z, s);
        if (!have || res.value > best.value) {
            best = res;
            have = true;
        }
    }
    out.value = best.value;
    out.argmass = best.x.sum();
    scatter<T>(out.arg, agent.group, best.x);
    return out;
}

// h with scaling factor exp(-h); +inf when an Eff agent puts mass on a π*-null coordinate.
template <class T>
T log_scale_penalty(const MechanismSpec<T>& mech, const AgentProfile<T>& agent, const DesignSpace<T>& space,
                    const Measure<T>& w) {
    check_measure(space, w);
    const T r = T(agent.rank());
    switch (mech.kind) {
        case MechanismKind::Fed:
            return T(0);
        case MechanismKind::InfoMax: {
            T s = 0;
            for (Index i : agent.group) s += std::max(T(0), mech.w_max(i) - w(i));
            return agent.cost / r * s;
        }
        case MechanismKind::PureEff:
        case MechanismKind::Eff: {
            const T w_in = block_mass(w, agent.group);
            const T w_out = w.sum() - w_in;
            const T p_in = block_mass(mech.pi_star, agent.group);
            const T p_out = mech.pi_star.sum() - p_in;
            if (!(w_out > T(0)))
                throw DegenerateOutsideMass("no mass outside the group of the agent");
            if (mech.kind == MechanismKind::PureEff)
                return T(space.d()) / r * std::max(T(0), p_out * w_in / w_out - p_in);
            T h = 0;
            for (Index i : agent.group) {
                const T target = mech.n_max * mech.pi_star(i);
                h += agent.cost / r * std::max(T(0), target - w(i));
                if (mech.pi_star(i) <= T(0)) {
                    if (w(i) > T(0)) return std::numeric_limits<T>::infinity();
                    continue;
                }
                // strict: at the jump the lower value is used, so best responses exist
                if (w(i) > target) h += std::max(T(0), p_out * w(i) / (w_out * mech.pi_star(i)) - T(1));
            }
            return h;
        }
    }
    return T(0);
}

// derivative of h along the agent's block, one-sided from above at kinks
template <class T>
Vec<T> log_scale_penalty_grad(const MechanismSpec<T>& mech, const AgentProfile<T>& agent,
                              const DesignSpace<T>& space, const Measure<T>& w) {
    const T r = T(agent.rank());
    const Index m = static_cast<Index>(agent.group.size());
    Vec<T> g = Vec<T>::Zero(m);
    if (mech.kind == MechanismKind::Fed) return g;
    if (mech.kind == MechanismKind::InfoMax) {
        for (Index j = 0; j < m; ++j)
            if (w(agent.group[static_cast<std::size_t>(j)]) < mech.w_max(agent.group[static_cast<std::size_t>(j)]))
                g(j) = -agent.cost / r;
        return g;
    }
    const T w_in = block_mass(w, agent.group);
    const T w_out = w.sum() - w_in;
    const T p_in = block_mass(mech.pi_star, agent.group);
    const T p_out = mech.pi_star.sum() - p_in;
    if (!(w_out > T(0))) throw DegenerateOutsideMass("no mass outside the group of the agent");
    if (mech.kind == MechanismKind::PureEff) {
        if (p_out * w_in / w_out - p_in >= T(0)) g.setConstant(T(space.d()) / r * p_out / w_out);
        return g;
    }
    for (Index j = 0; j < m; ++j) {
        const Index i = agent.group[static_cast<std::size_t>(j)];
        const T target = mech.n_max * mech.pi_star(i);
        if (w(i) < target) g(j) -= agent.cost / r;
        if (mech.pi_star(i) > T(0) && w(i) >= target && p_out * w(i) / (w_out * mech.pi_star(i)) >= T(1))
            g(j) += p_out / (w_out * mech.pi_star(i));
    }
    return g;
}

template <class T>
T scaling_factor(const MechanismSpec<T>& mech, const AgentProfile<T>& agent, const DesignSpace<T>& space,
                 const Measure<T>& w) {
    return std::exp(-log_scale_penalty(mech, agent, space, w));
}

template <class T>
bool mechanism_has_cost(const MechanismSpec<T>& mech) {
    return mech.kind != MechanismKind::PureEff;
}

// f on the scaled local information minus the sampling cost.
template <class T>
Score<T> effective_utility_from(const MechanismSpec<T>& mech, const AgentProfile<T>& agent,
                                const DesignSpace<T>& space, const Measure<T>& w, const LocalInfo<T>& li,
                                T tau = T(0)) {
    const Score<T> v = eval_local_from(agent, space, li, tau);
    if (!v) return v;
    const T h = log_scale_penalty(mech, agent, space, w);
    if (!std::isfinite(static_cast<double>(h))) return Score<T>::infeasible();
    T u = agent.criterion.tag == CriterionTag::D ? v.value() - T(agent.rank()) * h : v.value() * std::exp(h);
    if (mechanism_has_cost(mech)) u -= agent.cost * block_mass(w, agent.group);
    return Score<T>(u);
}

template <class T>
Score<T> effective_utility(const MechanismSpec<T>& mech, const AgentProfile<T>& agent, const DesignSpace<T>& space,
                           const Measure<T>& w, T tau = T(0)) {
    return effective_utility_from(mech, agent, space, w, local_information_matrix(space, w, agent), tau);
}

// Plain utility without a mechanism.
template <class T>
Score<T> fed_utility(const AgentProfile<T>& agent, const DesignSpace<T>& space, const Measure<T>& w) {
    return effective_utility(MechanismSpec<T>::fed(), agent, space, w);
}

// Total penalty (mechanism term plus cost) on the agent's block for D agents, as a function of
// the block with everything outside held at w.
template <class T>
BlockPenalty<T> d_block_penalty(const MechanismSpec<T>& mech, const AgentProfile<T>& agent,
                                const DesignSpace<T>& space, const Measure<T>& w) {
    const Index m = static_cast<Index>(agent.group.size());
    const T c = agent.cost;
    const T r = T(agent.rank());
    BlockPenalty<T> P = BlockPenalty<T>::linear(m, c);
    switch (mech.kind) {
        case MechanismKind::Fed:
            break;
        case MechanismKind::InfoMax:
            for (Index j = 0; j < m; ++j) {
                const T wm = mech.w_max(agent.group[static_cast<std::size_t>(j)]);
                if (wm > T(0)) P.coord[static_cast<std::size_t>(j)].pieces = {{T(0), c * wm, T(0)}, {wm, c * wm, c}};
            }
            break;
        case MechanismKind::PureEff: {
            const T w_in = block_mass(w, agent.group);
            const T w_out = w.sum() - w_in;
            if (!(w_out > T(0))) throw DegenerateOutsideMass("no mass outside the group of the agent");
            const T p_in = block_mass(mech.pi_star, agent.group);
            const T p_out = mech.pi_star.sum() - p_in;
            P = BlockPenalty<T>::linear(m, T(0));
            if (p_out > T(0)) {
                P.sum_slope = T(space.d()) * p_out / w_out;
                P.sum_kink = p_in * w_out / p_out;
            }
            break;
        }
        case MechanismKind::Eff: {
            const T w_in = block_mass(w, agent.group);
            const T w_out = w.sum() - w_in;
            if (!(w_out > T(0))) throw DegenerateOutsideMass("no mass outside the group of the agent");
            const T p_in = block_mass(mech.pi_star, agent.group);
            const T p_out = mech.pi_star.sum() - p_in;
            P.pinned.assign(static_cast<std::size_t>(m), false);
            for (Index j = 0; j < m; ++j) {
                const Index i = agent.group[static_cast<std::size_t>(j)];
                const T pi = mech.pi_star(i);
                if (pi <= T(0)) {
                    P.pinned[static_cast<std::size_t>(j)] = true;
                    continue;
                }
                const T b = mech.n_max * pi;
                const T alpha = p_out / (w_out * pi);
                auto& pcs = P.coord[static_cast<std::size_t>(j)].pieces;
                pcs = {{T(0), c * b, T(0)}};
                if (alpha <= T(0)) {
                    pcs.push_back({b, c * b, c});
                } else if (alpha * b >= T(1)) {
                    pcs.push_back({b, c * b + r * (alpha * b - T(1)), c + r * alpha});
                } else {
                    pcs.push_back({b, c * b, c});
                    pcs.push_back({T(1) / alpha, c / alpha, c + r * alpha});
                }
            }
            break;
        }
    }
    return P;
}

template <class T>
struct WMaxResult {
    Vec<T> w;
    Vec<T> multipliers;
    Vec<T> ir_slack;  // u_k(w) - v_k
    T kkt_residual = T(0);
    long outer_iterations = 0;
    bool converged = false;
    bool decoupled = false;  // ranks sum to d: the standalone concatenation is the only feasible design
};

struct WMaxOptions {
    double feas_tol = 1e-9;  // on u_k - v*_k
    double kkt_tol = 1e-6;
    long max_outer = 60;
};

// Information-maximizing design subject to every agent's participation constraint,
// by an augmented Lagrangian with a proximal-gradient inner solve.
template <class T>
WMaxResult<T> solve_w_max(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                          const WMaxOptions& opt = {}) {
    const std::size_t K = agents.size();
    Vec<T> v(static_cast<Index>(K));
    Vec<T> w = Vec<T>::Zero(space.n());
    for (std::size_t k = 0; k < K; ++k) {
        if (agents[k].criterion.tag != CriterionTag::D)
            throw ValidationError("solve_w_max requires the D criterion for every agent");
        const auto sv = standalone_value(agents[k], space);
        v(static_cast<Index>(k)) = sv.value;
        w += sv.arg;
    }
    Index rank_sum = 0;
    for (const auto& a : agents) rank_sum += a.rank();
    WMaxResult<T> out;
    if (rank_sum == space.d()) {
        // The spans form a direct sum, so each utility depends on its own block only and is
        // maximized there by the standalone argument; no multipliers exist.
        out.w = w;
        out.multipliers = Vec<T>::Zero(static_cast<Index>(K));
        out.ir_slack = Vec<T>::Zero(static_cast<Index>(K));
        out.converged = true;
        out.decoupled = true;
        return out;
    }
    auto util = [&](std::size_t k, const Vec<T>& x) -> T {
        const Score<T> s = neg_logdet_projected<T>(agents[k].basis, space, x);
        if (!s) return -std::numeric_limits<T>::infinity();
        return s.value() - agents[k].cost * block_mass(x, agents[k].group);
    };
    auto util_grad = [&](std::size_t k, const Vec<T>& x) -> Vec<T> {
        Vec<T> g = d_A_gradients<T>(agents[k].basis, space, x);
        for (Index i : agents[k].group) g(i) -= agents[k].cost;
        return g;
    };
    auto logdet = [&](const Vec<T>& x) -> T {
        return eval_global<T>(Criterion<T>::D(), space, x).value_or(-std::numeric_limits<T>::infinity());
    };
    auto logdet_grad = [&](const Vec<T>& x) -> Vec<T> { return global_gradient<T>(Criterion<T>::D(), space, x); };

    Vec<T> lambda = Vec<T>::Zero(static_cast<Index>(K));
    T rho = T(10);
    T prev_viol = std::numeric_limits<T>::infinity();
    const BlockPenalty<T> P = BlockPenalty<T>::linear(space.n(), T(0));
    AscentOptions aopt;
    aopt.tol = 1e-11;
    aopt.max_iter = 50000;
    for (long outer = 0; outer < opt.max_outer; ++outer) {
        auto S = [&](const Vec<T>& x) -> T {
            T f = logdet(x);
            if (!std::isfinite(static_cast<double>(f))) return f;
            for (std::size_t k = 0; k < K; ++k) {
                const T u = util(k, x);
                if (!std::isfinite(static_cast<double>(u))) return -std::numeric_limits<T>::infinity();
                const T m = std::max(T(0), lambda(static_cast<Index>(k)) + rho * (v(static_cast<Index>(k)) - u));
                f -= (m * m - lambda(static_cast<Index>(k)) * lambda(static_cast<Index>(k))) / (T(2) * rho);
            }
            return f;
        };
        auto G = [&](const Vec<T>& x) -> Vec<T> {
            Vec<T> g = logdet_grad(x);
            for (std::size_t k = 0; k < K; ++k) {
                const T m = std::max(T(0), lambda(static_cast<Index>(k)) + rho * (v(static_cast<Index>(k)) - util(k, x)));
                if (m > T(0)) g += m * util_grad(k, x);
            }
            return g;
        };
        auto res = prox_ascent<T>(S, G, P, w, aopt);
        w = res.x;
        T viol = 0;
        for (std::size_t k = 0; k < K; ++k) {
            const T gk = v(static_cast<Index>(k)) - util(k, w);
            lambda(static_cast<Index>(k)) = std::max(T(0), lambda(static_cast<Index>(k)) + rho * gk);
            viol = std::max(viol, std::max(gk, T(0)));
        }
        // Lagrangian stationarity with the updated multipliers
        Vec<T> gl = logdet_grad(w);
        for (std::size_t k = 0; k < K; ++k) gl += lambda(static_cast<Index>(k)) * util_grad(k, w);
        out.kkt_residual = natural_residual<T>(w, gl, P);
        out.outer_iterations = outer + 1;
        if (viol <= T(opt.feas_tol) && out.kkt_residual <= T(opt.kkt_tol)) {
            out.converged = true;
            break;
        }
        if (viol > T(0.25) * prev_viol) {
            if (rho >= T(1e8)) break;
            rho *= T(10);
        }
        prev_viol = viol;
    }
    out.w = w;
    out.multipliers = lambda;
    out.ir_slack.resize(static_cast<Index>(K));
    for (std::size_t k = 0; k < K; ++k) out.ir_slack(static_cast<Index>(k)) = util(k, w) - v(static_cast<Index>(k));
    return out;
}

// Feasible interval [lo, hi] of n for one agent's participation at n·π*.
template <class T>
struct ScaleInterval {
    T lo = T(0);
    T hi = std::numeric_limits<T>::infinity();
};

template <class T>
ScaleInterval<T> participation_interval(const AgentProfile<T>& agent, const DesignSpace<T>& space,
                                        const Measure<T>& pi_star, T v_star, T bracket) {
    const T a = block_mass(pi_star, agent.group);
    const T r = T(agent.rank());
    auto f = [&](T n) -> T {
        const Score<T> s = neg_logdet_projected<T>(agent.basis, space, Vec<T>(n * pi_star));
        if (!s) return -std::numeric_limits<T>::infinity();
        return s.value() - agent.cost * n * a - v_star;
    };
    ScaleInterval<T> out;
    if (a <= T(0)) {
        // increasing in n with no cost: only a lower end
        if (f(T(1)) >= T(0)) {
            T lo = 0, hi = 1;
            for (int it = 0; it < 200 && hi - lo > T(1e-8); ++it) {
                const T mid = (lo + hi) / T(2);
                (f(mid) >= T(0) ? hi : lo) = mid;
            }
            out.lo = hi;
        } else {
            T hi = 2;
            while (f(hi) < T(0)) hi *= T(2);
            T lo = hi / T(2);
            while (hi - lo > T(1e-8)) {
                const T mid = (lo + hi) / T(2);
                (f(mid) >= T(0) ? hi : lo) = mid;
            }
            out.lo = hi;
        }
        return out;
    }
    const T peak = r / (agent.cost * a);
    if (f(peak) < T(-1e-12)) throw InfeasibleProblem("participation interval is empty for an agent");
    T hi = std::max(bracket, peak * T(2));
    for (int it = 0; f(hi) >= T(0); ++it) {
        hi *= T(2);
        if (it > 2000) throw InfeasibleProblem("bracket growth did not terminate");
    }
    T lo = peak;
    while (hi - lo > T(1e-8)) {
        const T mid = (lo + hi) / T(2);
        (f(mid) >= T(0) ? lo : hi) = mid;
    }
    out.hi = lo;
    T l0 = 0, l1 = peak;
    while (l1 - l0 > T(1e-8)) {
        const T mid = (l0 + l1) / T(2);
        (f(mid) >= T(0) ? l1 : l0) = mid;
    }
    out.lo = l1;
    return out;
}

template <class T>
T solve_n_max(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents, const Measure<T>& pi_star) {
    T max_arg = 0, min_pi = std::numeric_limits<T>::infinity();
    std::vector<StandaloneValue<T>> sv;
    for (const auto& a : agents) {
        sv.push_back(standalone_value(a, space));
        max_arg = std::max(max_arg, sv.back().argmass);
        const T pa = block_mass(pi_star, a.group);
        if (pa > T(0)) min_pi = std::min(min_pi, pa);
    }
    const T bracket = T(10) * max_arg / min_pi;
    T lo = 0, hi = std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < agents.size(); ++k) {
        const auto iv = participation_interval<T>(agents[k], space, pi_star, sv[k].value, bracket);
        lo = std::max(lo, iv.lo);
        hi = std::min(hi, iv.hi);
    }
    if (!(lo <= hi + T(1e-8))) throw InfeasibleProblem("participation intervals do not intersect");
    return hi;
}

template <class T>
struct AssumptionReport {
    std::vector<std::pair<Index, Index>> violations;  // (k, k')
    std::vector<Index> degenerate;                    // k with no π* mass on G_k
    bool holds() const { return violations.empty(); }
};

template <class T>
AssumptionReport<T> assumption_check(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                                     const Measure<T>& pi_star) {
    AssumptionReport<T> rep;
    std::vector<StandaloneValue<T>> sv;
    for (const auto& a : agents) sv.push_back(standalone_value(a, space));
    for (std::size_t k = 0; k < agents.size(); ++k) {
        const T pa = block_mass(pi_star, agents[k].group);
        if (!(pa > T(0))) {
            rep.degenerate.push_back(static_cast<Index>(k));
            continue;
        }
        const Vec<T> w = pi_star * (sv[k].argmass / pa);
        for (std::size_t kk = 0; kk < agents.size(); ++kk) {
            const Score<T> u = fed_utility(agents[kk], space, w);
            if (!(u >= Score<T>(sv[kk].value - T(1e-9))))
                rep.violations.push_back({static_cast<Index>(k), static_cast<Index>(kk)});
        }
    }
    return rep;
}

// Published parameters for a mechanism, computed from the game data.
template <class T>
MechanismSpec<T> publish_mechanism(MechanismKind kind, const DesignSpace<T>& space,
                                   const std::vector<AgentProfile<T>>& agents) {
    switch (kind) {
        case MechanismKind::Fed:
            return MechanismSpec<T>::fed();
        case MechanismKind::InfoMax:
            return MechanismSpec<T>::infomax(solve_w_max(space, agents).w);
        case MechanismKind::PureEff:
            return MechanismSpec<T>::pure_eff(solve_optimal_design(Criterion<T>::D(), space).pi);
        case MechanismKind::Eff: {
            Vec<T> pi = solve_optimal_design(Criterion<T>::D(), space).pi;
            const T n = solve_n_max(space, agents, pi);
            return MechanismSpec<T>::eff(pi, n);
        }
    }
    return MechanismSpec<T>::fed();
}

}  // namespace fedoed
