#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fedoed/design_solver.hpp"
#include "gen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

using namespace fedoed;
using V = Vec<double>;
using M = Mat<double>;

namespace {

M three_points() {
    M X(2, 3);
    X << 1, 0, 1, 0, 1, 1;
    return X;
}

// grid search over the 3-simplex: coarse step h, then four zoomed passes around the best node
template <class F>
std::pair<double, V> grid3(F&& f, double h) {
    double best = -std::numeric_limits<double>::infinity();
    V arg = V::Constant(3, 1.0 / 3);
    auto visit = [&](double a, double b) {
        if (a < 0 || b < 0 || a + b > 1) return;
        V p(3);
        p << a, b, std::max(0.0, 1 - a - b);
        const double v = f(p);
        if (v > best) {
            best = v;
            arg = p;
        }
    };
    const int N = int(std::lround(1 / h));
    for (int i = 0; i <= N; ++i)
        for (int j = 0; i + j <= N; ++j) visit(i * h, j * h);
    for (int level = 0; level < 4; ++level) {
        const double a0 = arg(0), b0 = arg(1), step = h / 10;
        for (int i = -20; i <= 20; ++i)
            for (int j = -20; j <= 20; ++j) visit(std::clamp(a0 + i * step, 0.0, 1.0), std::clamp(b0 + j * step, 0.0, 1.0));
        h = step;
    }
    return {best, arg};
}

double logdet_or_ninf(const M& m) {
    Eigen::LLT<M> llt(m);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    return 2 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

TEST_CASE("project_simplex") {
    V v(3);
    v << 0.2, 0.5, 0.3;
    CHECK(project_simplex<double>(v).isApprox(v));
    v << 2, 0, 0;
    CHECK(project_simplex<double>(v).isApprox(V::Unit(3, 0)));
    auto g = gen::rng(21);
    for (int t = 0; t < 50; ++t) {
        const V p = project_simplex<double>(gen::normal(g, 6, 1));
        CHECK(std::abs(p.sum() - 1) < 1e-12);
        CHECK(p.minCoeff() >= 0);
    }
}

TEST_CASE("D-optimal examples") {
    for (Index d = 2; d <= 5; ++d) {
        DesignSpace<double> s(M::Identity(d, d), {gen::consecutive({d})[0]});
        auto r = solve_optimal_design(Criterion<double>::D(), s);
        CHECK((r.pi.array() - 1.0 / double(d)).abs().maxCoeff() < 1e-9);
    }
    DesignSpace<double> s3(three_points(), {{0, 1, 2}});
    auto r = solve_optimal_design(Criterion<double>::D(), s3);
    CHECK((r.pi.array() - 1.0 / 3).abs().maxCoeff() < 1e-6);
    CHECK(std::abs(r.value - std::log(1.0 / 3)) < 1e-9);
    CHECK(std::abs(r.certificate - 2) < 1e-5);
    auto [gv, gp] = grid3([&](const V& p) { return logdet_or_ninf(information_matrix(s3, p)); }, 1e-2);
    CHECK(std::abs(r.value - gv) < 1e-8);

    M X(2, 3);
    const double c = std::cos(M_PI / 4);
    X << c, 1, 0, c, 0, 1;
    DesignSpace<double> sd(X, {{0, 1, 2}});
    auto q = solve_optimal_design(Criterion<double>::D(), sd);
    V ref(3);
    ref << 0, 0.5, 0.5;
    CHECK((information_matrix(sd, q.pi) - information_matrix(sd, ref)).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(std::abs(q.certificate - 2) < 2e-6);
    auto [gv2, gp2] = grid3([&](const V& p) { return logdet_or_ninf(information_matrix(sd, p)); }, 1e-2);
    CHECK(std::abs(q.value - gv2) < 1e-8);
}

TEST_CASE("kw_certificate examples") {
    DesignSpace<double> b3(M::Identity(3, 3), {{0, 1, 2}});
    CHECK(std::abs(kw_certificate(b3, V::Constant(3, 1.0 / 3)) - 3) < 1e-12);
    DesignSpace<double> s3(three_points(), {{0, 1, 2}});
    CHECK(std::abs(kw_certificate(s3, V::Constant(3, 1.0 / 3)) - 2) < 1e-12);
    DesignSpace<double> b2(M::Identity(2, 2), {{0, 1}});
    V p(2);
    p << 0.75, 0.25;
    CHECK(std::abs(kw_certificate(b2, p) - 4) < 1e-12);
    p << 1, 0;
    CHECK_THROWS_AS(kw_certificate(b2, p), SingularMatrix);
}

TEST_CASE("KW certificate on random instances") {
    auto g = gen::rng(22);
    for (int t = 0; t < 50; ++t) {
        const Index d = gen::integer(g, 2, 5);
        const Index n = gen::integer(g, int(d), 20);
        M X;
        do X = gen::unit_points(g, d, n);
        while (numerical_rank<double>(M(X * X.transpose())) < d);
        DesignSpace<double> s(X, {gen::consecutive({n})[0]});
        const auto t0 = std::chrono::steady_clock::now();
        auto r = solve_optimal_design(Criterion<double>::D(), s);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        CHECK(secs < 1.0);
        CHECK(std::abs(r.certificate - double(d)) <= 1e-3 * double(d));
        CHECK(r.certificate >= double(d) - 1e-9);
        CHECK(std::abs(r.pi.sum() - 1) < 1e-12);
        CHECK(r.pi.minCoeff() >= 0);
        // M(π*) is unique: a run on the reversed ordering agrees
        DesignSpace<double> rev(M(X.rowwise().reverse()), {gen::consecutive({n})[0]});
        auto r2 = solve_optimal_design(Criterion<double>::D(), rev);
        const V back = r2.pi.reverse();
        CHECK((information_matrix(s, r.pi) - information_matrix(s, back)).cwiseAbs().maxCoeff() < 1e-6);
        Index support = 0;
        for (Index i = 0; i < n; ++i) support += r.pi(i) > 1e-9;
        (void)support;  // Carathéodory bound is a sanity signal only
    }
}

TEST_CASE("non-D criteria against the grid oracle") {
    auto g = gen::rng(23);
    for (int t = 0; t < 6; ++t) {
        const M X = gen::unit_points(g, 2, 3);
        DesignSpace<double> s(X, {{0, 1, 2}});
        for (auto c : {Criterion<double>::A(), Criterion<double>::E(), Criterion<double>::G(), Criterion<double>::V()}) {
            auto r = solve_optimal_design(c, s);
            auto [gv, gp] = grid3(
                [&](const V& p) {
                    auto v = eval_global(c, s, p);
                    return v.feasible() ? v.value() : -std::numeric_limits<double>::infinity();
                },
                1e-2);
            CHECK(std::abs(r.pi.sum() - 1) < 1e-12);
            CHECK(std::abs(r.value - gv) <= 1e-4 * std::max(1.0, std::abs(gv)));
        }
    }
}

TEST_CASE("restricted solves never beat the unrestricted value") {
    auto g = gen::rng(24);
    for (int t = 0; t < 20; ++t) {
        const Index d = gen::integer(g, 2, 4);
        const Index n = d + 5;
        DesignSpace<double> s(gen::unit_points(g, d, n), gen::consecutive({n}));
        auto full = solve_optimal_design(Criterion<double>::D(), s);
        Group sub;
        for (Index i = 0; i < d + 2; ++i) sub.push_back(i);
        auto part = solve_optimal_design(Criterion<double>::D(), s, sub);
        CHECK(part.value <= full.value + (full.certificate - double(d)) + 1e-12);
        for (Index i = d + 2; i < n; ++i) CHECK(part.pi(i) == 0);
    }
}

TEST_CASE("local theta examples") {
    DesignSpace<double> b2(M::Identity(2, 2), {{0, 1}});
    CHECK(std::abs(solve_local_theta(make_agent(b2, 0, 1.0), b2) + 2 * std::log(2.0)) < 1e-9);

    M X(2, 2);
    X << 3, 0, 4, 1;
    DesignSpace<double> one(X, {{0}, {1}});
    CHECK(std::abs(solve_local_theta(make_agent(one, 0, 1.0), one) - std::log(25.0)) < 1e-12);

    auto g = gen::rng(25);
    for (int t = 0; t < 5; ++t) {
        const M P = gen::normal(g, 3, 5);
        DesignSpace<double> s(P, {{0, 1, 2}, {3, 4}});
        auto a = make_agent(s, 0, 1.0);
        const M Z = a.basis.transpose() * s.group_points(a.group);
        auto [gv, gp] = grid3([&](const V& p) { return logdet_or_ninf(Z * p.asDiagonal() * Z.transpose()); }, 1e-2);
        CHECK(std::abs(solve_local_theta(a, s) - gv) < 1e-8);
    }
}

TEST_CASE("theta star examples") {
    auto g = gen::rng(26);
    for (int t = 0; t < 5; ++t) {
        const Index d = 3;
        DesignSpace<double> s(gen::unit_points(g, d, 6), {{0, 1, 2, 3, 4, 5}});
        auto glob = solve_optimal_design(Criterion<double>::D(), s);
        auto ts = solve_theta_star<double>(M::Identity(d, d), s);
        CHECK(std::abs(ts.value - glob.value) < 1e-8);
    }
    DesignSpace<double> b2(M::Identity(2, 2), {{0}, {1}});
    auto ts = solve_theta_star<double>(make_agent(b2, 0, 1.0).basis, b2);
    CHECK(std::abs(ts.value) < 1e-6);
    CHECK(ts.pi(0) > 1 - 1e-6);

    for (int t = 0; t < 5; ++t) {
        DesignSpace<double> s(gen::unit_points(g, 2, 3), {{0}, {1, 2}});
        auto a = make_agent(s, 0, 1.0);
        auto [gv, gp] = grid3(
            [&](const V& p) {
                auto v = neg_logdet_projected<double>(a.basis, s, p);
                return v.feasible() ? v.value() : -std::numeric_limits<double>::infinity();
            },
            1e-2);
        auto r = solve_theta_star<double>(a.basis, s);
        CHECK(r.value >= gv - 1e-8);
        CHECK(std::abs(r.value - gv) < 1e-3);
    }
}

TEST_CASE("benefit from collaboration") {
    auto g = gen::rng(27);
    for (int t = 0; t < 5; ++t) {
        DesignSpace<double> s(gen::unit_points(g, 3, 6), {{0, 1, 2, 3, 4, 5}});
        CHECK(std::abs(benefit_from_collaboration(make_agent(s, 0, 1.0), s)) < 1e-8);
    }
    DesignSpace<double> b2(M::Identity(2, 2), {{0}, {1}});
    CHECK(std::abs(benefit_from_collaboration(make_agent(b2, 0, 1.0), b2)) < 1e-6);

    // an outside point with a component off the agent's span only adds a nuisance direction:
    // e1ᵀM⁻¹e1 = 1/π₁ here, so nothing is gained
    M X(2, 2);
    X << 1, 1 / std::sqrt(2.0), 0, 1 / std::sqrt(2.0);
    DesignSpace<double> s(X, {{0}, {1}});
    CHECK(std::abs(benefit_from_collaboration(make_agent(s, 0, 1.0), s)) < 1e-6);

    // a stronger outside point along the agent's own direction helps: Δ = log 4
    M Y(2, 3);
    Y << 1, 0, 2, 0, 1, 0;
    DesignSpace<double> s2(Y, {{0}, {1}, {2}});
    auto a2 = make_agent(s2, 0, 1.0);
    const double delta = benefit_from_collaboration(a2, s2);
    CHECK(delta > 1e-3);
    auto [gv, gp] = grid3(
        [&](const V& p) {
            // e1ᵀM⁺e1 with the e2 column unused
            const double m11 = p(0) + 4 * p(2);
            return m11 > 0 ? std::log(m11) : -std::numeric_limits<double>::infinity();
        },
        1e-2);
    CHECK(std::abs(gv - std::log(4.0)) < 1e-12);
    CHECK(std::abs(delta - gv) < 1e-4);

    for (int t = 0; t < 20; ++t) {
        const Index d = gen::integer(g, 2, 4);
        DesignSpace<double> r(gen::unit_points(g, d, d + 4), gen::consecutive({d, 4}));
        for (Index k = 0; k < 2; ++k) CHECK(benefit_from_collaboration(make_agent(r, k, 1.0), r) >= -1e-9);
    }
}
