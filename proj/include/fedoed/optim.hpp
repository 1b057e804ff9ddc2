#pragma once

#include "fedoed/core.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace fedoed {

// Piecewise-linear function on [0, inf), possibly with upward jumps at piece starts.
// At a jump the lower (left) value is taken, so the function is lower semicontinuous.
template <class T>
struct Pwl {
    struct Piece {
        T start;
        T value;  // value at start
        T slope;
    };
    std::vector<Piece> pieces{{T(0), T(0), T(0)}};

    static Pwl linear(T slope) { return Pwl{{{T(0), T(0), slope}}}; }

    std::size_t locate(T x) const {
        std::size_t j = 0;
        while (j + 1 < pieces.size() && x > pieces[j + 1].start) ++j;
        return j;
    }
    T operator()(T x) const {
        const auto& p = pieces[locate(x)];
        return p.value + p.slope * (x - p.start);
    }
    T slope_right(T x) const {
        std::size_t j = 0;
        while (j + 1 < pieces.size() && x >= pieces[j + 1].start) ++j;
        return pieces[j].slope;
    }

    // argmin_{x >= 0} f(x) + (x - v)^2 / (2 s)
    T prox(T v, T s) const {
        T best = T(0);
        T best_obj = std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < pieces.size(); ++j) {
            const T lo = pieces[j].start;
            const T hi = j + 1 < pieces.size() ? pieces[j + 1].start : std::numeric_limits<T>::infinity();
            const T x = std::clamp(v - s * pieces[j].slope, lo, hi);
            const T obj = pieces[j].value + pieces[j].slope * (x - lo) + (x - v) * (x - v) / (T(2) * s);
            if (obj < best_obj) {
                best_obj = obj;
                best = x;
            }
        }
        return best;
    }
};

// Penalty on one agent's block: separable piecewise-linear terms plus an optional hinge on the
// block sum, sum_slope * (Σx - sum_kink)_+. Pinned coordinates are held at zero.
template <class T>
struct BlockPenalty {
    std::vector<Pwl<T>> coord;
    T sum_slope = T(0);
    T sum_kink = T(0);
    std::vector<bool> pinned;
    Vec<T> upper;  // optional per-coordinate caps (empty for none)

    T operator()(const Vec<T>& x) const {
        T v = T(0);
        for (Index i = 0; i < x.size(); ++i) v += coord[static_cast<std::size_t>(i)](x(i));
        if (sum_slope > T(0)) v += sum_slope * std::max(T(0), x.sum() - sum_kink);
        return v;
    }

    Vec<T> prox(const Vec<T>& v, T s) const {
        const Index n = v.size();
        Vec<T> x(n);
        auto cap = [&](Index i, T y) { return upper.size() ? std::min(y, upper(i)) : y; };
        if (sum_slope <= T(0)) {
            for (Index i = 0; i < n; ++i) x(i) = cap(i, coord[static_cast<std::size_t>(i)].prox(v(i), s));
        } else {
            // separable parts must be linear here; solve for the multiplier of the sum hinge
            auto at = [&](T mu) {
                Vec<T> y(n);
                for (Index i = 0; i < n; ++i)
                    y(i) = cap(i, std::max(T(0), v(i) - s * (coord[static_cast<std::size_t>(i)].pieces[0].slope + mu)));
                return y;
            };
            x = at(T(0));
            if (x.sum() > sum_kink) {
                x = at(sum_slope);
                if (x.sum() < sum_kink) {
                    T lo = 0, hi = sum_slope;
                    for (int it = 0; it < 200; ++it) {
                        const T mid = (lo + hi) / T(2);
                        if (at(mid).sum() > sum_kink) lo = mid;
                        else hi = mid;
                    }
                    x = at(hi);
                }
            }
        }
        for (Index i = 0; i < n; ++i)
            if (!pinned.empty() && pinned[static_cast<std::size_t>(i)]) x(i) = T(0);
        return x;
    }

    // nearest point of the domain: nonnegative, capped, pins at zero
    Vec<T> clamp(const Vec<T>& v) const {
        Vec<T> x = v.cwiseMax(T(0));
        if (upper.size()) x = x.cwiseMin(upper);
        for (Index i = 0; i < x.size(); ++i)
            if (!pinned.empty() && pinned[static_cast<std::size_t>(i)]) x(i) = T(0);
        return x;
    }

    static BlockPenalty linear(Index n, T c) {
        BlockPenalty p;
        p.coord.assign(static_cast<std::size_t>(n), Pwl<T>::linear(c));
        return p;
    }
};

struct AscentOptions {
    double tol = 1e-8;      // on the unit-step gradient mapping
    long max_iter = 20000;
};

template <class T>
struct AscentResult {
    Vec<T> x;
    T value = T(0);
    T residual = T(0);
    long iterations = 0;
    bool converged = false;
};

// Unit-step gradient mapping, the stationarity measure reported as a KKT residual.
template <class T>
T natural_residual(const Vec<T>& x, const Vec<T>& grad, const BlockPenalty<T>& P) {
    return (x - P.prox(x + grad, T(1))).cwiseAbs().maxCoeff();
}

// Newton steps on the natural residual map with a forward-difference Jacobian. Gradient steps
// stall above the tolerance when M(w) is badly conditioned; this finishes those blocks.
template <class T, class SF, class GF>
void newton_polish(SF&& S, GF&& gradS, const BlockPenalty<T>& P, Vec<T>& x, T& ux, T& res, T tol,
                   int max_steps = 20) {
    const Index m = x.size();
    auto R = [&](const Vec<T>& y) { return Vec<T>(y - P.prox(y + gradS(y), T(1))); };
    for (int it = 0; it < max_steps && res > tol; ++it) {
        const Vec<T> r = R(x);
        Mat<T> J(m, m);
        for (Index j = 0; j < m; ++j) {
            const T h = T(1e-7) * std::max(T(1), std::abs(x(j)));
            Vec<T> y = x;
            y(j) += h;
            J.col(j) = (R(y) - r) / h;
        }
        const Vec<T> dx = J.colPivHouseholderQr().solve(Vec<T>(-r));
        if (!dx.allFinite()) return;
        bool moved = false;
        for (T a = T(1); a > T(1e-4); a /= T(2)) {
            const Vec<T> z = P.clamp(Vec<T>(x + a * dx));
            const T sz = S(z);
            if (!std::isfinite(static_cast<double>(sz))) continue;
            const T rz = natural_residual<T>(z, gradS(z), P);
            const T uz = sz - P(z);
            if (rz < res && uz >= ux - T(1e-10) * (T(1) + std::abs(ux))) {
                x = z;
                ux = uz;
                res = rz;
                moved = true;
                break;
            }
        }
        if (!moved) return;
    }
}

// Maximize S(x) - P(x) over x >= 0 by accelerated proximal gradient with backtracking
// and function-value restarts. S returns -inf where undefined; x0 must be feasible.
template <class T, class SF, class GF>
AscentResult<T> prox_ascent(SF&& S, GF&& gradS, const BlockPenalty<T>& P, Vec<T> x0,
                            const AscentOptions& opt = {}) {
    AscentResult<T> out;
    Vec<T> x = x0.cwiseMax(T(0));
    if (P.upper.size()) x = x.cwiseMin(P.upper);
    for (Index i = 0; i < x.size(); ++i)
        if (!P.pinned.empty() && P.pinned[static_cast<std::size_t>(i)]) x(i) = T(0);
    T sx = S(x);
    if (!std::isfinite(static_cast<double>(sx))) {
        out.x = x;
        out.value = -std::numeric_limits<T>::infinity();
        out.residual = std::numeric_limits<T>::infinity();
        return out;
    }
    T ux = sx - P(x);
    Vec<T> y = x;
    T sy = sx;
    Vec<T> gy = gradS(y);
    T t = 1;
    T step = T(1);
    {
        const T gn = gy.cwiseAbs().maxCoeff();
        if (gn > T(0)) step = std::max(T(1e-12), std::min(T(1), T(0.1) * std::max(x.cwiseAbs().maxCoeff(), T(1e-3)) / gn));
    }
    long it = 0;
    int stall = 0;
    for (; it < opt.max_iter; ++it) {
        Vec<T> z;
        T sz = 0;
        bool accepted = false;
        for (int bt = 0; bt < 100; ++bt) {
            z = P.prox(y + step * gy, step);
            sz = S(z);
            const Vec<T> dz = z - y;
            if (std::isfinite(static_cast<double>(sz)) &&
                sz >= sy + gy.dot(dz) - dz.squaredNorm() / (T(2) * step) - T(1e-14) * std::abs(sy)) {
                accepted = true;
                break;
            }
            step /= T(2);
        }
        if (!accepted) break;
        const T uz = sz - P(z);
        if (uz < ux) {
            if (t == T(1)) {  // no momentum and still no progress: at numerical precision
                if (++stall > 3) break;
            }
            t = 1;
            y = x;
            sy = sx;
            gy = gradS(y);
            continue;
        }
        stall = 0;
        const T gmap = (z - y).cwiseAbs().maxCoeff() / step;
        const T tn = (T(1) + std::sqrt(T(1) + T(4) * t * t)) / T(2);
        Vec<T> yn = z + ((t - T(1)) / tn) * (z - x);
        yn = yn.cwiseMax(T(0));
        if (P.upper.size()) yn = yn.cwiseMin(P.upper);
        for (Index i = 0; i < yn.size(); ++i)
            if (!P.pinned.empty() && P.pinned[static_cast<std::size_t>(i)]) yn(i) = T(0);
        const Vec<T> xold = x;
        x = z;
        sx = sz;
        ux = uz;
        T syn = S(yn);
        if (!std::isfinite(static_cast<double>(syn))) {
            yn = x;
            syn = sx;
            t = 1;
        } else {
            t = tn;
        }
        y = yn;
        sy = syn;
        gy = gradS(y);
        if (gmap <= T(opt.tol) || (x - xold).cwiseAbs().maxCoeff() <= T(opt.tol) * T(1e-3)) {
            const Vec<T> gx = gradS(x);
            if (natural_residual<T>(x, gx, P) <= T(opt.tol)) {
                ++it;
                break;
            }
        }
        step *= T(1.1);
        if ((it + 1) % 500 == 0) {
            // slow progress usually means bad conditioning; try to finish with Newton steps
            Vec<T> xn = x;
            T un = ux, rn = natural_residual<T>(x, gradS(x), P);
            newton_polish<T>(S, gradS, P, xn, un, rn, T(opt.tol));
            if (rn <= T(opt.tol)) {
                x = xn;
                ux = un;
                ++it;
                break;
            }
        }
    }
    // Polish: objective comparisons stop resolving progress near sqrt(eps), so finish with
    // plain proximal gradient steps accepted on the natural residual alone.
    T res = natural_residual<T>(x, gradS(x), P);
    const T lstep = std::max(step, T(1e-12));
    for (int k = 0; k < 2000 && res > T(opt.tol); ++k) {
        const Vec<T> z = P.prox(x + lstep * gradS(x), lstep);
        const T sz = S(z);
        if (!std::isfinite(static_cast<double>(sz))) break;
        const T rz = natural_residual<T>(z, gradS(z), P);
        if (!(rz < res)) break;
        x = z;
        ux = sz - P(z);
        res = rz;
        ++it;
    }
    if (res > T(opt.tol)) newton_polish<T>(S, gradS, P, x, ux, res, T(opt.tol));
    out.x = x;
    out.value = ux;
    out.residual = res;
    out.iterations = it;
    out.converged = out.residual <= T(opt.tol);
    return out;
}

}  // namespace fedoed
