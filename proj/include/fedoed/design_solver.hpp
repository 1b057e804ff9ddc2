#pragma once

#include "fedoed/criteria.hpp"

#include <functional>
#include <optional>

namespace fedoed {

template <class T>
struct OptimalDesign {
    Vec<T> pi;
    T value = T(0);
    T certificate = T(0);  // max_x xᵀM(π)⁻¹x, in the projected space for restricted solves
    Index iterations = 0;
    bool converged = false;
};

struct DesignOptions {
    double kw_tol = 1e-10;  // relative to the dimension
    long max_iter = 100000;
    double smooth_tol = 1e-6;
    double theta_gap = 1e-10;
};

// Euclidean projection onto the probability simplex.
template <class T>
Vec<T> project_simplex(const Vec<T>& v) {
    const Index n = v.size();
    Vec<T> u = v;
    std::sort(u.data(), u.data() + n, std::greater<T>());
    T css = 0, theta = 0;
    for (Index j = 0; j < n; ++j) {
        css += u(j);
        const T t = (css - T(1)) / T(j + 1);
        if (u(j) - t > T(0)) theta = t;
    }
    return (v.array() - theta).max(T(0)).matrix();
}

namespace detail {

template <class T>
Vec<T> kw_forms(const Mat<T>& Z, const Measure<T>& pi, bool* ok = nullptr) {
    const Mat<T> M = Z * pi.asDiagonal() * Z.transpose();
    Eigen::LLT<Mat<T>> llt(M);
    const bool good = llt.info() == Eigen::Success && numerical_rank<T>(M) == Z.rows();
    if (ok) *ok = good;
    if (!good) return Vec<T>::Constant(Z.cols(), std::numeric_limits<T>::infinity());
    const Mat<T> S = llt.solve(Z);
    return (Z.array() * S.array()).colwise().sum().transpose();
}

template <class T>
T logdet_design(const Mat<T>& Z, const Measure<T>& pi) {
    const Mat<T> M = Z * pi.asDiagonal() * Z.transpose();
    Eigen::LLT<Mat<T>> llt(M);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<T>::infinity();
    return T(2) * llt.matrixLLT().diagonal().array().log().sum();
}

// D-optimal design for the columns of Z (r x m, full row rank).
// Multiplicative updates until they stall, then Frank-Wolfe with away steps.
template <class T>
OptimalDesign<T> d_optimal(const Mat<T>& Z, const DesignOptions& opt) {
    const Index m = Z.cols();
    const T r = T(Z.rows());
    OptimalDesign<T> out;
    Vec<T> pi = Vec<T>::Constant(m, T(1) / T(m));
    bool multiplicative = true;
    T prev = logdet_design(Z, pi);
    long it = 0;
    Vec<T> g = kw_forms(Z, pi);
    for (; it < opt.max_iter; ++it) {
        const T gmax = g.maxCoeff();
        if (gmax - r <= T(opt.kw_tol) * r) {
            out.converged = true;
            break;
        }
        if (multiplicative) {
            pi = (pi.array() * g.array() / r).matrix();
            pi /= pi.sum();
            const T cur = logdet_design(Z, pi);
            if (cur - prev < T(1e-10) * std::max(T(1), std::abs(cur))) multiplicative = false;
            prev = cur;
        } else {
            Index jmax = 0;
            g.maxCoeff(&jmax);
            Index jmin = -1;
            T gmin = std::numeric_limits<T>::infinity();
            for (Index i = 0; i < m; ++i)
                if (pi(i) > T(0) && g(i) < gmin) {
                    gmin = g(i);
                    jmin = i;
                }
            const bool away = jmin >= 0 && (r - gmin) > (gmax - r) && pi(jmin) < T(1);
            if (away) {
                const T amin = -pi(jmin) / (T(1) - pi(jmin));
                T a = (gmin - r) / (r * (gmin - T(1)));
                if (!(gmin < T(1)) || a < amin || !std::isfinite(static_cast<double>(a))) a = amin;
                Vec<T> next = (T(1) - a) * pi;
                next(jmin) += a;
                if (a == amin) next(jmin) = T(0);
                bool ok = true;
                Vec<T> gn = kw_forms(Z, next, &ok);
                if (!ok) {
                    a = T(0.999) * amin;
                    next = (T(1) - a) * pi;
                    next(jmin) += a;
                    gn = kw_forms(Z, next, &ok);
                }
                pi = next;
                g = gn;
                continue;
            }
            const T a = (gmax - r) / (r * (gmax - T(1)));
            pi *= (T(1) - a);
            pi(jmax) += a;
        }
        g = kw_forms(Z, pi);
    }
    out.pi = pi;
    out.iterations = it;
    out.value = logdet_design(Z, pi);
    out.certificate = kw_forms(Z, pi).maxCoeff();
    return out;
}

// Accelerated projected gradient on the simplex for a concave objective.
template <class T>
struct SimplexResult {
    Vec<T> pi;
    T value;
    T gap;
    long iterations;
};

template <class T, class F, class G>
SimplexResult<T> maximize_on_simplex(F&& f, G&& grad, Vec<T> pi, double gap_tol, long max_iter) {
    T fx = f(pi);
    T step = T(1);
    Vec<T> y = pi, prev = pi;
    T t = T(1);
    T gap = std::numeric_limits<T>::infinity();
    long it = 0;
    T ref = fx;
    for (; it < max_iter; ++it) {
        const Vec<T> gx = grad(pi);
        gap = gx.maxCoeff() - gx.dot(pi);
        if (gap <= T(gap_tol) * std::max(T(1), std::abs(fx))) break;
        if (it > 0 && it % 200 == 0) {
            if (fx - ref <= T(1e-13) * std::max(T(1), std::abs(fx))) break;
            ref = fx;
        }
        T fy = f(y);
        if (!std::isfinite(static_cast<double>(fy))) {
            y = pi;
            fy = fx;
        }
        const Vec<T> gy = grad(y);
        Vec<T> cand;
        T fc;
        for (int bt = 0; bt < 80; ++bt) {
            cand = project_simplex<T>(y + step * gy);
            fc = f(cand);
            const Vec<T> diff = cand - y;
            if (std::isfinite(static_cast<double>(fc)) &&
                fc >= fy + gy.dot(diff) - diff.squaredNorm() / (T(2) * step))
                break;
            step /= T(2);
        }
        if (!(fc >= fx)) {  // restart momentum
            t = T(1);
            y = pi;
            step *= T(1.5);
            continue;
        }
        const T tn = (T(1) + std::sqrt(T(1) + T(4) * t * t)) / T(2);
        y = project_simplex<T>(cand + ((t - T(1)) / tn) * (cand - pi));
        prev = pi;
        pi = cand;
        fx = fc;
        t = tn;
        step *= T(1.2);
    }
    return {pi, fx, gap, it};
}

template <class T>
OptimalDesign<T> smooth_optimal(const Criterion<T>& c, const Mat<T>& Z, const DesignOptions& opt) {
    const Index m = Z.cols();
    const Index r = Z.rows();
    auto value_at = [&](const Measure<T>& pi, T tau) -> T {
        const Mat<T> M = Z * pi.asDiagonal() * Z.transpose();
        if (numerical_rank<T>(M) < r) return -std::numeric_limits<T>::infinity();
        const Mat<T> L = M.inverse();
        return criterion_value<T>(c, (L + L.transpose()) / T(2), Z, tau).value();
    };
    auto grad_at = [&](const Measure<T>& pi, T tau) -> Vec<T> {
        const Mat<T> M = Z * pi.asDiagonal() * Z.transpose();
        Mat<T> L = M.inverse();
        L = (L + L.transpose()) / T(2);
        return criterion_gradient<T>(c, L, Z, L * Z, tau);
    };
    Vec<T> pi = Vec<T>::Constant(m, T(1) / T(m));
    const bool nonsmooth = c.tag == CriterionTag::E || c.tag == CriterionTag::G;
    T scale = std::abs(value_at(pi, T(0)));
    T tau = nonsmooth ? T(1e-2) * scale : T(0);
    long total = 0;
    OptimalDesign<T> out;
    for (;;) {
        auto res = maximize_on_simplex<T>([&](const Vec<T>& p) { return value_at(p, tau); },
                                          [&](const Vec<T>& p) { return grad_at(p, tau); }, pi,
                                          opt.smooth_tol, opt.max_iter);
        pi = res.pi;
        total += res.iterations;
        out.converged = res.iterations < opt.max_iter;
        if (!nonsmooth || tau <= T(1e-8) * scale) break;
        tau /= T(10);
    }
    out.pi = pi;
    out.value = value_at(pi, T(0));
    out.iterations = total;
    out.certificate = kw_forms(Z, pi).maxCoeff();
    return out;
}

template <class T>
OptimalDesign<T> optimal_for_points(const Criterion<T>& c, const Mat<T>& Z, const DesignOptions& opt) {
    if (c.tag == CriterionTag::D) return d_optimal<T>(Z, opt);
    return smooth_optimal<T>(c, Z, opt);
}

}  // namespace detail

// Optimal design over the simplex. With a restriction, the problem is posed on the
// coordinates of the restricted points within their own span and π is zero elsewhere.
template <class T>
OptimalDesign<T> solve_optimal_design(const Criterion<T>& c, const DesignSpace<T>& space,
                                      const std::optional<Group>& restriction = std::nullopt,
                                      const DesignOptions& opt = {}) {
    if (!restriction) return detail::optimal_for_points<T>(c, space.points(), opt);
    const Mat<T> pts = space.group_points(*restriction);
    const Mat<T> A = span_basis<T>(pts);
    if (A.cols() == 0) throw ValidationError("restricted points span the zero subspace");
    auto sub = detail::optimal_for_points<T>(c, Mat<T>(A.transpose() * pts), opt);
    Vec<T> pi = Vec<T>::Zero(space.n());
    scatter(pi, *restriction, sub.pi);
    sub.pi = pi;
    return sub;
}

template <class T>
T kw_certificate(const DesignSpace<T>& space, const Measure<T>& pi) {
    bool ok = true;
    const Vec<T> g = detail::kw_forms<T>(space.points(), pi, &ok);
    if (!ok) throw SingularMatrix("kw_certificate: M(π) is singular");
    return g.maxCoeff();
}

// θ: best local log det over the agent's own points in its own coordinates.
template <class T>
T solve_local_theta(const AgentProfile<T>& agent, const DesignSpace<T>& space, const DesignOptions& opt = {}) {
    const Mat<T> Z = agent.basis.transpose() * space.group_points(agent.group);
    return detail::d_optimal<T>(Z, opt).value;
}

template <class T>
Vec<T> local_d_optimal_block(const AgentProfile<T>& agent, const DesignSpace<T>& space,
                             const DesignOptions& opt = {}) {
    const Mat<T> Z = agent.basis.transpose() * space.group_points(agent.group);
    return detail::d_optimal<T>(Z, opt).pi;
}

template <class T>
struct ThetaStar {
    Vec<T> pi;
    T value = T(0);
    T gap = T(0);
    long iterations = 0;
    bool converged = false;
};

// θ*: max over the whole simplex of -log det(AᵀM(π)⁻¹A), Frank-Wolfe with away steps.
template <class T>
ThetaStar<T> solve_theta_star(const Mat<T>& A, const DesignSpace<T>& space, const DesignOptions& opt = {}) {
    const Index n = space.n();
    ThetaStar<T> out;
    Vec<T> pi = Vec<T>::Constant(n, T(1) / T(n));
    auto phi = [&](const Vec<T>& p) { return neg_logdet_projected<T>(A, space, p); };
    auto grad = [&](const Vec<T>& p, bool& ok) -> Vec<T> {
        try {
            ok = true;
            return d_A_gradients<T>(A, space, p);
        } catch (const SingularMatrix&) {
            ok = false;
            return Vec<T>();
        }
    };
    bool ok = true;
    Vec<T> g = grad(pi, ok);
    T val = phi(pi).value();
    T ref = val;
    long it = 0;
    for (; it < opt.max_iter; ++it) {
        Index jmax = 0;
        const T gmax = g.maxCoeff(&jmax);
        const T avg = g.dot(pi);
        out.gap = gmax - avg;
        if (out.gap <= T(opt.theta_gap)) {
            out.converged = true;
            break;
        }
        if (it > 0 && it % 100 == 0) {
            if (std::abs(val - ref) <= T(1e-12) * std::max(T(1), std::abs(val))) {
                out.converged = true;
                break;
            }
            ref = val;
        }
        Index jmin = -1;
        T gmin = std::numeric_limits<T>::infinity();
        for (Index i = 0; i < n; ++i)
            if (pi(i) > T(0) && g(i) < gmin) {
                gmin = g(i);
                jmin = i;
            }
        Vec<T> dir;
        T amax;
        if (jmin >= 0 && avg - gmin > gmax - avg && pi(jmin) < T(1)) {
            dir = pi;
            dir(jmin) -= T(1);
            amax = pi(jmin) / (T(1) - pi(jmin));
        } else {
            dir = -pi;
            dir(jmax) += T(1);
            amax = T(1);
        }
        auto slope = [&](T a) -> T {
            bool good = true;
            const Vec<T> ga = grad(pi + a * dir, good);
            if (!good) return -std::numeric_limits<T>::infinity();
            return ga.dot(dir);
        };
        T a;
        T top = amax;
        if (!std::isfinite(static_cast<double>(slope(top)))) top = amax * T(0.999);
        if (slope(top) >= T(0) && std::isfinite(static_cast<double>(slope(top)))) {
            a = top;
        } else {
            T lo = 0, hi = top;
            for (int b = 0; b < 60; ++b) {
                const T mid = (lo + hi) / T(2);
                if (slope(mid) > T(0)) lo = mid;
                else hi = mid;
            }
            a = lo;
        }
        Vec<T> next = pi + a * dir;
        next = next.cwiseMax(T(0));
        next /= next.sum();
        bool good = true;
        Vec<T> gn = grad(next, good);
        if (!good) break;
        pi = next;
        g = gn;
        val = phi(pi).value();
    }
    out.pi = pi;
    out.value = val;
    out.iterations = it;
    return out;
}

template <class T>
T benefit_from_collaboration(const AgentProfile<T>& agent, const DesignSpace<T>& space,
                             const DesignOptions& opt = {}) {
    return solve_theta_star<T>(agent.basis, space, opt).value - solve_local_theta<T>(agent, space, opt);
}

}  // namespace fedoed
