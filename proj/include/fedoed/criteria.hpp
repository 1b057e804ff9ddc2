#pragma once

#include "fedoed/core.hpp"

#include <algorithm>

namespace fedoed {

namespace detail {

// log-sum-exp smoothing of max(q); tau = 0 gives the plain max and a one-hot weight
template <class T>
std::pair<T, Vec<T>> soft_max(const Vec<T>& q, T tau) {
    Index arg = 0;
    const T mx = q.maxCoeff(&arg);
    Vec<T> wts = Vec<T>::Zero(q.size());
    if (tau <= T(0)) {
        wts(arg) = T(1);
        return {mx, wts};
    }
    wts = ((q.array() - mx) / tau).exp().matrix();
    const T s = wts.sum();
    wts /= s;
    return {mx + tau * std::log(s), wts};
}

template <class T>
Vec<T> point_weights(const Criterion<T>& c, Index m) {
    if (c.p.size() == m) return c.p;
    return Vec<T>::Constant(m, T(1) / T(m));
}

}  // namespace detail

// Criterion value from the inverse information L (r x r) and the points Z (r x m)
// over which G and V are taken. tau > 0 smooths the max in E and G.
template <class T>
Score<T> criterion_value(const Criterion<T>& c, const Mat<T>& L, const Mat<T>& Z, T tau = T(0)) {
    switch (c.tag) {
        case CriterionTag::D: {
            Eigen::LLT<Mat<T>> llt(L);
            if (llt.info() != Eigen::Success) return Score<T>::infeasible();
            return Score<T>(-T(2) * llt.matrixLLT().diagonal().array().log().sum());
        }
        case CriterionTag::A:
            return Score<T>(-L.trace());
        case CriterionTag::E: {
            Eigen::SelfAdjointEigenSolver<Mat<T>> es(L, Eigen::EigenvaluesOnly);
            return Score<T>(-detail::soft_max<T>(es.eigenvalues(), tau).first);
        }
        case CriterionTag::G: {
            const Vec<T> q = (Z.array() * (L * Z).array()).colwise().sum().transpose();
            return Score<T>(-detail::soft_max<T>(q, tau).first);
        }
        case CriterionTag::V: {
            const Vec<T> q = (Z.array() * (L * Z).array()).colwise().sum().transpose();
            return Score<T>(-detail::point_weights(c, Z.cols()).dot(q));
        }
    }
    return Score<T>::infeasible();
}

// d value / d w_i given columns b_i = AᵀM⁺x_i, using dL/dw_i = -b_i b_iᵀ.
template <class T>
Vec<T> criterion_gradient(const Criterion<T>& c, const Mat<T>& L, const Mat<T>& Z, const Mat<T>& B,
                          T tau = T(0)) {
    switch (c.tag) {
        case CriterionTag::D: {
            Eigen::LLT<Mat<T>> llt(L);
            const Mat<T> S = llt.solve(B);
            return (B.array() * S.array()).colwise().sum().transpose();
        }
        case CriterionTag::A:
            return B.colwise().squaredNorm().transpose();
        case CriterionTag::E: {
            Eigen::SelfAdjointEigenSolver<Mat<T>> es(L);
            const Vec<T> s = detail::soft_max<T>(es.eigenvalues(), tau).second;
            const Mat<T> P = es.eigenvectors().transpose() * B;
            return (s.asDiagonal() * P.cwiseAbs2()).colwise().sum().transpose();
        }
        case CriterionTag::G:
        case CriterionTag::V: {
            const Vec<T> q = (Z.array() * (L * Z).array()).colwise().sum().transpose();
            const Vec<T> s = c.tag == CriterionTag::G ? detail::soft_max<T>(q, tau).second
                                                      : detail::point_weights(c, Z.cols());
            const Mat<T> P = Z.transpose() * B;
            return (s.asDiagonal() * P.cwiseAbs2()).colwise().sum().transpose();
        }
    }
    return Vec<T>::Zero(B.cols());
}

template <class T>
Score<T> eval_global(const Criterion<T>& c, const DesignSpace<T>& space, const Measure<T>& pi, T tau = T(0)) {
    const Mat<T> M = information_matrix(space, pi);
    if (numerical_rank<T>(M) < space.d()) return Score<T>::infeasible();
    if (c.tag == CriterionTag::D) {
        Eigen::LLT<Mat<T>> llt(M);
        if (llt.info() != Eigen::Success) return Score<T>::infeasible();
        return Score<T>(T(2) * llt.matrixLLT().diagonal().array().log().sum());
    }
    const Mat<T> L = M.inverse();
    return criterion_value<T>(c, (L + L.transpose()) / T(2), space.points(), tau);
}

template <class T>
Vec<T> global_gradient(const Criterion<T>& c, const DesignSpace<T>& space, const Measure<T>& pi, T tau = T(0)) {
    const Mat<T> M = information_matrix(space, pi);
    Eigen::LLT<Mat<T>> llt(M);
    if (llt.info() != Eigen::Success || numerical_rank<T>(M) < space.d())
        throw SingularMatrix("global_gradient: singular information matrix");
    const Mat<T> L = llt.solve(Mat<T>::Identity(space.d(), space.d()));
    const Mat<T> B = L * space.points();
    if (c.tag == CriterionTag::D) return (space.points().array() * B.array()).colwise().sum().transpose();
    return criterion_gradient<T>(c, (L + L.transpose()) / T(2), space.points(), B, tau);
}

template <class T>
Score<T> eval_local_from(const AgentProfile<T>& agent, const DesignSpace<T>& space, const LocalInfo<T>& li,
                         T tau = T(0)) {
    if (li.singular) return Score<T>::infeasible();
    const Mat<T> Z = agent.basis.transpose() * space.group_points(agent.group);
    return criterion_value<T>(agent.criterion, li.inverse, Z, tau);
}

template <class T>
Score<T> eval_local(const AgentProfile<T>& agent, const DesignSpace<T>& space, const Measure<T>& w, T tau = T(0)) {
    return eval_local_from(agent, space, local_information_matrix(space, w, agent), tau);
}

// Gradient of eval_local with respect to w_i for i in idx. Valid for indices whose points lie in
// range(M), which always holds for the agent's own points when the local value is finite.
template <class T>
Vec<T> local_gradient_from(const AgentProfile<T>& agent, const DesignSpace<T>& space, const LocalInfo<T>& li,
                           const Group& idx, T tau = T(0)) {
    if (li.singular) throw SingularMatrix("local_gradient: local information is singular");
    const Mat<T> Z = agent.basis.transpose() * space.group_points(agent.group);
    const Mat<T> B = agent.basis.transpose() * li.Minv * space.group_points(idx);
    return criterion_gradient<T>(agent.criterion, li.inverse, Z, B, tau);
}

template <class T>
Vec<T> local_gradient(const AgentProfile<T>& agent, const DesignSpace<T>& space, const Measure<T>& w,
                      const Group& idx, T tau = T(0)) {
    return local_gradient_from(agent, space, local_information_matrix(space, w, agent), idx, tau);
}

template <class T>
T d_local_gradient(const AgentProfile<T>& agent, const DesignSpace<T>& space, const Measure<T>& w, Index i) {
    if (std::find(agent.group.begin(), agent.group.end(), i) == agent.group.end())
        throw ValidationError("d_local_gradient: index not in the agent's group");
    const Mat<T> M = information_matrix(space, w);
    if (numerical_rank<T>(M) < space.d()) throw SingularMatrix("d_local_gradient: M(w) is singular");
    const Vec<T> x = space.point(i);
    return x.dot(M.ldlt().solve(x));
}

// xᵢᵀM⁻¹A(AᵀM⁻¹A)⁻¹AᵀM⁻¹xᵢ for every i
template <class T>
Vec<T> d_A_gradients(const Mat<T>& A, const DesignSpace<T>& space, const Measure<T>& w) {
    const Mat<T> M = information_matrix(space, w);
    if (numerical_rank<T>(M) < space.d()) {
        // on a face of the simplex: a point off range(M) only identifies its own new direction
        const auto li = local_information<T>(M, A);
        if (li.singular) throw SingularMatrix("d_A_gradient: span(A) is not estimable");
        const Mat<T> X = space.points();
        const Mat<T> P = A.transpose() * li.Minv * X;
        const Mat<T> Q = li.info * P;
        Vec<T> g = (P.array() * Q.array()).colwise().sum().transpose();
        const Mat<T> off = X - M * (li.Minv * X);
        for (Index i = 0; i < X.cols(); ++i)
            if (off.col(i).norm() > T(1e-7) * X.col(i).norm()) g(i) = T(0);
        return g;
    }
    Eigen::LDLT<Mat<T>> ldlt(M);
    const Mat<T> MinvA = ldlt.solve(A);
    const Mat<T> S = A.transpose() * MinvA;
    Eigen::LLT<Mat<T>> llt((S + S.transpose()) / T(2));
    if (llt.info() != Eigen::Success) throw SingularMatrix("d_A_gradient: AᵀM⁻¹A is singular");
    const Mat<T> P = MinvA.transpose() * space.points();  // AᵀM⁻¹X
    const Mat<T> Q = llt.solve(P);
    return (P.array() * Q.array()).colwise().sum().transpose();
}

template <class T>
T d_A_gradient(const Mat<T>& A, const DesignSpace<T>& space, const Measure<T>& w, Index i) {
    return d_A_gradients<T>(A, space, w)(i);
}

// -log det(AᵀM(w)⁺A); infeasible when span(A) is not estimable under w
template <class T>
Score<T> neg_logdet_projected(const Mat<T>& A, const DesignSpace<T>& space, const Measure<T>& w) {
    const Mat<T> M = information_matrix(space, w);
    if (numerical_rank<T>(M) < space.d()) {
        const auto li = local_information<T>(M, A);
        if (li.singular) return Score<T>::infeasible();
        Eigen::LLT<Mat<T>> llt(li.inverse);
        if (llt.info() != Eigen::Success) return Score<T>::infeasible();
        return Score<T>(-T(2) * llt.matrixLLT().diagonal().array().log().sum());
    }
    const Mat<T> S = A.transpose() * M.ldlt().solve(A);
    Eigen::LLT<Mat<T>> llt((S + S.transpose()) / T(2));
    if (llt.info() != Eigen::Success) return Score<T>::infeasible();
    return Score<T>(-T(2) * llt.matrixLLT().diagonal().array().log().sum());
}

}  // namespace fedoed
