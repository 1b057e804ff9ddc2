#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace fedoed {

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;
using Group = std::vector<Index>;
// non-deduced measure parameter so Eigen expressions can be passed directly
template <class T>
using Measure = std::type_identity_t<Vec<T>>;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct DimensionMismatch : ValidationError {
    using ValidationError::ValidationError;
};
struct ZeroMass : Error {
    ZeroMass() : Error("design measure has zero mass") {}
};
struct SingularMatrix : Error {
    using Error::Error;
};
struct DegenerateOutsideMass : Error {
    using Error::Error;
};
struct InfeasibleProblem : Error {
    using Error::Error;
};

// relative singular-value cutoff used for every rank decision
template <class T>
constexpr T rank_tol() {
    return T(1e-10);
}

// Value of a criterion or utility; infeasible stands for -inf and compares
// below every finite value.
template <class T>
class Score {
public:
    Score() = default;
    Score(T v) : ok_(true), v_(v) {}
    static Score infeasible() { return Score(); }

    bool feasible() const { return ok_; }
    explicit operator bool() const { return ok_; }
    T value() const {
        if (!ok_) throw SingularMatrix("value requested on infeasible score");
        return v_;
    }
    T value_or(T fallback) const { return ok_ ? v_ : fallback; }

    friend bool operator<(const Score& a, const Score& b) {
        if (!a.ok_) return b.ok_;
        if (!b.ok_) return false;
        return a.v_ < b.v_;
    }
    friend bool operator>(const Score& a, const Score& b) { return b < a; }
    friend bool operator<=(const Score& a, const Score& b) { return !(b < a); }
    friend bool operator>=(const Score& a, const Score& b) { return !(a < b); }
    friend bool operator==(const Score& a, const Score& b) {
        return a.ok_ == b.ok_ && (!a.ok_ || a.v_ == b.v_);
    }
    Score operator+(T x) const { return ok_ ? Score(v_ + x) : Score(); }
    Score operator-(T x) const { return ok_ ? Score(v_ - x) : Score(); }

private:
    bool ok_ = false;
    T v_ = T(0);
};

enum class CriterionTag { D, A, E, G, V };

inline const char* to_string(CriterionTag t) {
    switch (t) {
        case CriterionTag::D: return "D";
        case CriterionTag::A: return "A";
        case CriterionTag::E: return "E";
        case CriterionTag::G: return "G";
        case CriterionTag::V: return "V";
    }
    return "?";
}

inline CriterionTag criterion_from_string(const std::string& s) {
    if (s == "D") return CriterionTag::D;
    if (s == "A") return CriterionTag::A;
    if (s == "E") return CriterionTag::E;
    if (s == "G") return CriterionTag::G;
    if (s == "V") return CriterionTag::V;
    throw ValidationError("unknown criterion '" + s + "'");
}

template <class T>
struct Criterion {
    CriterionTag tag = CriterionTag::D;
    // V only: weights over the relevant point set, empty means uniform
    Vec<T> p;

    static Criterion D() { return {CriterionTag::D, {}}; }
    static Criterion A() { return {CriterionTag::A, {}}; }
    static Criterion E() { return {CriterionTag::E, {}}; }
    static Criterion G() { return {CriterionTag::G, {}}; }
    static Criterion V(Vec<T> p = {}) { return {CriterionTag::V, std::move(p)}; }
};

template <class T>
Index numerical_rank(const Mat<T>& m) {
    if (m.size() == 0) return 0;
    Eigen::JacobiSVD<Mat<T>> svd(m);
    const auto& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= T(0)) return 0;
    const T cut = rank_tol<T>() * s(0);
    Index r = 0;
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > cut) ++r;
    return r;
}

template <class T>
Mat<T> pseudo_inverse(const Mat<T>& m) {
    if (m.size() == 0) return Mat<T>(m.cols(), m.rows());
    Eigen::JacobiSVD<Mat<T>> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    Mat<T> out = Mat<T>::Zero(m.cols(), m.rows());
    if (s.size() == 0 || s(0) <= T(0)) return out;
    const T cut = rank_tol<T>() * s(0);
    for (Index i = 0; i < s.size(); ++i)
        if (s(i) > cut)
            out.noalias() += (svd.matrixV().col(i) / s(i)) * svd.matrixU().col(i).transpose();
    return out;
}

// Orthonormal basis of the column span of pts (d x m).
template <class T>
Mat<T> span_basis(const Mat<T>& pts) {
    if (pts.cols() == 0) return Mat<T>(pts.rows(), 0);
    Eigen::JacobiSVD<Mat<T>> svd(pts, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    if (s(0) <= T(0)) return Mat<T>(pts.rows(), 0);
    const T cut = rank_tol<T>() * s(0);
    Index r = 0;
    while (r < s.size() && s(r) > cut) ++r;
    return svd.matrixU().leftCols(r);
}

// Points are stored as columns: X is d x n.
template <class T>
class DesignSpace {
public:
    DesignSpace() = default;
    DesignSpace(Mat<T> points, std::vector<Group> groups)
        : X_(std::move(points)), groups_(std::move(groups)) {
        validate();
    }

    const Mat<T>& points() const { return X_; }
    auto point(Index i) const { return X_.col(i); }
    const std::vector<Group>& groups() const { return groups_; }
    const Group& group(Index k) const { return groups_.at(static_cast<std::size_t>(k)); }
    Index n() const { return X_.cols(); }
    Index d() const { return X_.rows(); }
    Index K() const { return static_cast<Index>(groups_.size()); }

    Mat<T> group_points(const Group& g) const {
        Mat<T> out(d(), static_cast<Index>(g.size()));
        for (std::size_t j = 0; j < g.size(); ++j) out.col(static_cast<Index>(j)) = X_.col(g[j]);
        return out;
    }

    // owner[i] = k such that i in G_k
    std::vector<Index> owners() const {
        std::vector<Index> own(static_cast<std::size_t>(n()), -1);
        for (Index k = 0; k < K(); ++k)
            for (Index i : group(k)) own[static_cast<std::size_t>(i)] = k;
        return own;
    }

private:
    void validate() const {
        if (X_.rows() == 0 || X_.cols() == 0) throw ValidationError("empty design space");
        if (!X_.allFinite()) throw ValidationError("design points must be finite");
        for (Index i = 0; i < X_.cols(); ++i)
            if (X_.col(i).cwiseAbs().maxCoeff() == T(0))
                throw ValidationError("design point " + std::to_string(i) + " is zero");
        std::vector<int> seen(static_cast<std::size_t>(X_.cols()), 0);
        if (groups_.empty()) throw ValidationError("no groups given");
        for (std::size_t k = 0; k < groups_.size(); ++k) {
            if (groups_[k].empty())
                throw ValidationError("group " + std::to_string(k) + " is empty");
            for (Index i : groups_[k]) {
                if (i < 0 || i >= X_.cols())
                    throw ValidationError("group " + std::to_string(k) + " has index out of range");
                if (seen[static_cast<std::size_t>(i)]++)
                    throw ValidationError("index " + std::to_string(i) + " appears in two groups");
            }
        }
        for (std::size_t i = 0; i < seen.size(); ++i)
            if (!seen[i]) throw ValidationError("index " + std::to_string(i) + " is in no group");
        const Index r = numerical_rank<T>(X_);
        if (r < X_.rows())
            throw ValidationError("design points span a " + std::to_string(r) +
                                  "-dimensional subspace of R^" + std::to_string(X_.rows()));
    }

    Mat<T> X_;
    std::vector<Group> groups_;
};

template <class T>
Mat<T> orthonormal_basis(const DesignSpace<T>& space, const Group& group) {
    if (group.empty()) throw ValidationError("orthonormal_basis: empty group");
    return span_basis<T>(space.group_points(group));
}

template <class T>
struct AgentProfile {
    Group group;
    T cost = T(1);
    Criterion<T> criterion;
    Mat<T> basis;  // d x r, orthonormal columns

    Index rank() const { return basis.cols(); }
};

template <class T>
AgentProfile<T> make_agent(const DesignSpace<T>& space, Index k, T cost,
                           Criterion<T> crit = Criterion<T>::D()) {
    if (!(cost > T(0)) || !std::isfinite(static_cast<double>(cost)))
        throw ValidationError("agent cost must be positive and finite");
    AgentProfile<T> a;
    a.group = space.group(k);
    a.cost = cost;
    a.criterion = std::move(crit);
    a.basis = orthonormal_basis(space, a.group);
    if (a.criterion.tag == CriterionTag::V && a.criterion.p.size() > 0) {
        const auto& p = a.criterion.p;
        if (p.size() != static_cast<Index>(a.group.size()))
            throw ValidationError("V weights must have one entry per group point");
        if ((p.array() < T(0)).any() || std::abs(p.sum() - T(1)) > T(1e-9))
            throw ValidationError("V weights must form a probability vector");
    }
    return a;
}

template <class T>
std::vector<AgentProfile<T>> make_agents(const DesignSpace<T>& space, const std::vector<T>& costs) {
    if (static_cast<Index>(costs.size()) != space.K())
        throw ValidationError("one cost per group required");
    std::vector<AgentProfile<T>> out;
    for (Index k = 0; k < space.K(); ++k) out.push_back(make_agent(space, k, costs[static_cast<std::size_t>(k)]));
    return out;
}

template <class T>
void check_measure(const DesignSpace<T>& space, const Measure<T>& w) {
    if (w.size() != space.n())
        throw DimensionMismatch("measure has length " + std::to_string(w.size()) + ", expected " +
                                std::to_string(space.n()));
}

template <class T>
Mat<T> information_matrix(const DesignSpace<T>& space, const Measure<T>& w) {
    check_measure(space, w);
    const auto& X = space.points();
    Mat<T> M = X * w.asDiagonal() * X.transpose();
    return (M + M.transpose()) / T(2);
}

template <class T>
std::pair<Vec<T>, T> normalize(const Measure<T>& w) {
    const T mass = w.sum();
    if (!(mass > T(0))) throw ZeroMass();
    return {w / mass, mass};
}

template <class T>
Vec<T> restrict_to(const Measure<T>& w, const Group& g) {
    Vec<T> out(static_cast<Index>(g.size()));
    for (std::size_t j = 0; j < g.size(); ++j) out(static_cast<Index>(j)) = w(g[j]);
    return out;
}

template <class T>
void scatter(Vec<T>& w, const Group& g, const Vec<T>& block) {
    for (std::size_t j = 0; j < g.size(); ++j) w(g[j]) = block(static_cast<Index>(j));
}

template <class Derived>
typename Derived::Scalar block_mass(const Eigen::MatrixBase<Derived>& w, const Group& g) {
    typename Derived::Scalar s = 0;
    for (Index i : g) s += w(i);
    return s;
}

// Inverse local information AᵀM⁺A plus what gradients need.
template <class T>
struct LocalInfo {
    bool singular = true;
    Mat<T> Minv;     // M⁺
    Mat<T> inverse;  // AᵀM⁺A (r x r)
    Mat<T> info;     // (AᵀM⁺A)⁻¹, empty when singular
};

// The agent's subspace must lie in range(M) and AᵀM⁺A must be nonsingular.
template <class T>
LocalInfo<T> local_information(const Mat<T>& M, const Mat<T>& A) {
    LocalInfo<T> out;
    out.Minv = pseudo_inverse<T>(M);
    if (A.cols() == 0) return out;
    const Mat<T> resid = A - M * (out.Minv * A);
    if (resid.cwiseAbs().maxCoeff() > T(1e-7)) return out;
    out.inverse = A.transpose() * out.Minv * A;
    out.inverse = (out.inverse + out.inverse.transpose()) / T(2);
    Eigen::SelfAdjointEigenSolver<Mat<T>> es(out.inverse);
    const auto& ev = es.eigenvalues();
    if (!(ev(0) > rank_tol<T>() * ev(ev.size() - 1)) || !(ev(0) > T(0))) return out;
    out.info = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    out.singular = false;
    return out;
}

template <class T>
LocalInfo<T> local_information_matrix(const DesignSpace<T>& space, const Measure<T>& w,
                                      const AgentProfile<T>& agent) {
    return local_information<T>(information_matrix(space, w), agent.basis);
}

}  // namespace fedoed
