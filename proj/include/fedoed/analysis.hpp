#pragma once

#include "fedoed/game.hpp"

#include <numeric>
#include <random>

namespace fedoed {

struct NotExchangeable : Error {
    NotExchangeable() : Error("design points are not all identical") {}
};

template <class T>
struct EfficiencyReport {
    bool proportional = false;
    T gap = T(0);  // max-norm distance between M(w/‖w‖₁) and M(π*)
};

template <class T>
EfficiencyReport<T> efficiency_check(const DesignSpace<T>& space, const Measure<T>& w, const Measure<T>& pi_star,
                                     T threshold = T(1e-3)) {
    auto [pi, mass] = normalize<T>(w);
    (void)mass;
    EfficiencyReport<T> out;
    out.gap = (information_matrix(space, pi) - information_matrix(space, pi_star)).cwiseAbs().maxCoeff();
    out.proportional = out.gap <= threshold;
    return out;
}

template <class T>
struct FreeRider {
    Index agent;
    T mass;
};

template <class T>
std::vector<FreeRider<T>> free_riders(const std::vector<AgentProfile<T>>& agents, const Measure<T>& w,
                                      T support = T(1e-7)) {
    std::vector<FreeRider<T>> out;
    for (std::size_t k = 0; k < agents.size(); ++k) {
        const T m = block_mass(w, agents[k].group);
        if (m <= support) out.push_back({static_cast<Index>(k), m});
    }
    return out;
}

template <class T>
Score<T> social_good(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                     const MechanismSpec<T>& mech, const Measure<T>& w) {
    T total = 0;
    for (const auto& a : agents) {
        const Score<T> u = effective_utility(mech, a, space, w);
        if (!u) return u;
        total += u.value();
    }
    return Score<T>(total);
}

template <class T>
struct PoAReport {
    T ratio = T(1);
    T bound = std::numeric_limits<T>::infinity();
    bool bound_applicable = false;
    T sg_max = T(0);    // max over w of SG(w)
    T sg_w_max = T(0);  // SG at the published w_max
    Vec<T> argmax;
    Vec<T> benefit;  // Δ per agent
    bool converged = false;
};

namespace detail {

// max_w SG(w) under the information-maximizing mechanism. For D agents SG is
// Σ_k v_k(w) - Σ_i c_{owner(i)} max(w_max,i, w_i): concave smooth part plus a separable penalty.
template <class T>
AscentResult<T> maximize_social_good(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                                     const Vec<T>& w_max) {
    const Index n = space.n();
    Group all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Index(0));
    auto S = [&](const Vec<T>& w) {
        T total = 0;
        for (const auto& a : agents) {
            const Score<T> v = eval_local(a, space, w);
            if (!v) return -std::numeric_limits<T>::infinity();
            total += v.value();
        }
        return total;
    };
    auto G = [&](const Vec<T>& w) {
        Vec<T> g = Vec<T>::Zero(n);
        for (const auto& a : agents) g += local_gradient(a, space, w, all);
        return g;
    };
    BlockPenalty<T> P = BlockPenalty<T>::linear(n, T(0));
    for (const auto& a : agents)
        for (Index i : a.group) {
            const T wm = w_max(i);
            auto& pcs = P.coord[static_cast<std::size_t>(i)].pieces;
            pcs = {{T(0), a.cost * wm, T(0)}, {wm, a.cost * wm, a.cost}};
        }
    AscentOptions opt;
    opt.tol = 1e-10;
    opt.max_iter = 50000;
    return prox_ascent<T>(S, G, P, w_max, opt);
}

}  // namespace detail

// Price of anarchy of the information-maximizing mechanism and its upper bound.
template <class T>
PoAReport<T> price_of_anarchy(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                              const std::optional<std::type_identity_t<Vec<T>>>& w_max_in = std::nullopt) {
    const std::size_t K = agents.size();
    for (const auto& a : agents)
        if (a.criterion.tag != CriterionTag::D) throw ValidationError("price of anarchy requires D agents");
    const Vec<T> w_max = w_max_in ? *w_max_in : solve_w_max(space, agents).w;
    const auto mech = MechanismSpec<T>::infomax(w_max);
    PoAReport<T> out;
    out.sg_w_max = social_good(space, agents, mech, w_max).value();
    auto best = detail::maximize_social_good(space, agents, w_max);
    out.argmax = best.x;
    out.sg_max = std::max(best.value, out.sg_w_max);
    out.converged = best.converged;
    out.ratio = out.sg_max / out.sg_w_max;

    T R = 0, cmin = std::numeric_limits<T>::infinity();
    for (const auto& a : agents) {
        R += T(a.rank());
        cmin = std::min(cmin, a.cost);
    }
    T den = 0, num = 0;
    out.benefit.resize(static_cast<Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
        const auto& a = agents[k];
        const T r = T(a.rank());
        const T theta = solve_local_theta(a, space);
        const T delta = benefit_from_collaboration(a, space);
        out.benefit(static_cast<Index>(k)) = delta;
        den += theta + r * std::log(r / a.cost) - r;
        num += delta + r * std::log(a.cost * R / (r * cmin)) - (a.cost - cmin) * block_mass(w_max, a.group);
    }
    out.bound_applicable = den > T(0);
    if (out.bound_applicable) out.bound = num / den + T(1);
    return out;
}

struct FairnessPair {
    Index k, l;
    bool utility_geq;  // u_k ≥ u_l
    bool mass_geq;     // ‖w_k‖₁ ≥ ‖w_l‖₁ - tol
    bool violation;
};

template <class T>
struct FairnessReport {
    std::vector<FairnessPair> pairs;
    std::vector<T> utilities;
    std::vector<T> masses;
    int violations = 0;
};

template <class T>
bool exchangeable(const DesignSpace<T>& space, T tol = T(1e-12)) {
    for (Index i = 1; i < space.n(); ++i)
        if ((space.point(i) - space.point(0)).cwiseAbs().maxCoeff() > tol) return false;
    return true;
}

template <class T>
FairnessReport<T> fairness_check(const DesignSpace<T>& space, const std::vector<AgentProfile<T>>& agents,
                                 const MechanismSpec<T>& mech, const Measure<T>& w, T mass_tol = T(1e-9)) {
    if (!exchangeable(space)) throw NotExchangeable();
    FairnessReport<T> out;
    for (const auto& a : agents) {
        out.utilities.push_back(effective_utility(mech, a, space, w).value());
        out.masses.push_back(block_mass(w, a.group));
    }
    const Index K = static_cast<Index>(agents.size());
    for (Index k = 0; k < K; ++k)
        for (Index l = 0; l < K; ++l) {
            if (k == l) continue;
            const auto kk = static_cast<std::size_t>(k), ll = static_cast<std::size_t>(l);
            FairnessPair p{k, l, out.utilities[kk] >= out.utilities[ll],
                           out.masses[kk] >= out.masses[ll] - mass_tol, false};
            p.violation = p.utility_geq && !p.mass_geq;
            out.violations += p.violation;
            out.pairs.push_back(p);
        }
    return out;
}

// Integer replications summing to m by largest remainders (ties to the lower index).
template <class T>
std::vector<long> largest_remainder(const Measure<T>& pi, long m) {
    const Index n = pi.size();
    const T total = pi.sum();
    std::vector<long> reps(static_cast<std::size_t>(n));
    std::vector<std::pair<T, Index>> rem;
    long used = 0;
    for (Index i = 0; i < n; ++i) {
        const T q = T(m) * pi(i) / total;
        const long f = static_cast<long>(std::floor(q));
        reps[static_cast<std::size_t>(i)] = f;
        used += f;
        rem.push_back({q - T(f), i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long j = 0; j < m - used; ++j) ++reps[static_cast<std::size_t>(rem[static_cast<std::size_t>(j)].second)];
    return reps;
}

template <class T>
struct PredictionErrorReport {
    Vec<T> limit;          // xᵀM(π)⁻¹x
    Vec<T> estimate;       // m · mean over trials of σ̂² xᵀ(XᵀX)⁻¹x
    Vec<T> squared_error;  // m · mean over trials of (xᵀ(θ̂ - θ))²
    Vec<T> rel_error;      // |estimate - limit| / limit
    Vec<T> rel_error_squared;
    std::vector<long> replications;
};

// Simulated least-squares fits on the rounded design; y = θᵀx + e with standard normal e.
// Trial t draws from its own stream seeded by (seed, t).
template <class T>
PredictionErrorReport<T> monte_carlo_prediction_error(const DesignSpace<T>& space, const Measure<T>& pi, long m,
                                                      int trials, std::uint64_t seed, const Mat<T>& directions) {
    if (directions.rows() != space.d()) throw DimensionMismatch("directions must have d rows");
    if (m < 1 || trials < 1) throw ValidationError("m and trials must be positive");
    const Index d = space.d(), q = directions.cols();
    PredictionErrorReport<T> out;
    out.replications = largest_remainder<T>(pi, m);
    Mat<T> G = Mat<T>::Zero(d, d);
    for (Index i = 0; i < space.n(); ++i)
        G += T(out.replications[static_cast<std::size_t>(i)]) * space.point(i) * space.point(i).transpose();
    if (numerical_rank<T>(G) < d) throw SingularMatrix("rounded design is singular; increase m");
    Eigen::LLT<Mat<T>> llt(G);
    const Mat<T> Minv = information_matrix(space, pi).inverse();
    const Mat<T> Ginv_dirs = llt.solve(directions);

    std::mt19937_64 theta_gen(seed);
    std::normal_distribution<double> nd;
    Vec<T> theta(d);
    for (Index j = 0; j < d; ++j) theta(j) = T(nd(theta_gen));

    out.limit.resize(q);
    for (Index j = 0; j < q; ++j) out.limit(j) = directions.col(j).dot(Minv * directions.col(j));
    Vec<T> plug = Vec<T>::Zero(q), sq = Vec<T>::Zero(q);
    for (int t = 0; t < trials; ++t) {
        std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(t)};
        std::mt19937_64 gen(ss);
        std::normal_distribution<double> noise;
        Vec<T> Xty = Vec<T>::Zero(d);
        T yy = 0;
        for (Index i = 0; i < space.n(); ++i) {
            const T mean = theta.dot(space.point(i));
            T sum = 0;
            for (long r = 0; r < out.replications[static_cast<std::size_t>(i)]; ++r) {
                const T y = mean + T(noise(gen));
                sum += y;
                yy += y * y;
            }
            Xty += sum * space.point(i);
        }
        const Vec<T> est = llt.solve(Xty);
        const T rss = std::max(T(0), yy - Xty.dot(est));
        const T sigma2 = rss / T(std::max<long>(1, m - d));
        for (Index j = 0; j < q; ++j) {
            const T e = directions.col(j).dot(est - theta);
            sq(j) += e * e;
            plug(j) += sigma2 * directions.col(j).dot(Ginv_dirs.col(j));
        }
    }
    out.estimate = plug * (T(m) / T(trials));
    out.squared_error = sq * (T(m) / T(trials));
    out.rel_error = ((out.estimate - out.limit).cwiseAbs().array() / out.limit.array()).matrix();
    out.rel_error_squared = ((out.squared_error - out.limit).cwiseAbs().array() / out.limit.array()).matrix();
    return out;
}

}  // namespace fedoed
