#pragma once

// Small dense linear algebra: Jacobi SVD / symmetric eigensolver oracles,
// orthogonal Procrustes and symmetric whitening. Eigen supplies the storage;
// the decompositions are implemented here so that verification does not
// depend on the library being verified against.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "nestsvd/errors.hpp"

namespace nestsvd {

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = DenseMatrix<double>;
using Vector = DenseVector<double>;
using Index = Eigen::Index;

namespace linalg {

inline constexpr Index kMaxOracleDim = 512;
inline constexpr int kJacobiSweeps = 30;

template <typename Scalar>
struct SvdResult {
    DenseVector<Scalar> singular_values;  // non-increasing
    DenseMatrix<Scalar> left_vectors;     // rows(a) x k, orthonormal columns
    DenseMatrix<Scalar> right_vectors;    // cols(a) x k, orthonormal columns

    DenseMatrix<Scalar> reconstruct() const {
        return left_vectors * singular_values.asDiagonal() * right_vectors.transpose();
    }
};

template <typename Scalar>
struct EigResult {
    DenseVector<Scalar> eigenvalues;  // non-increasing
    DenseMatrix<Scalar> eigenvectors;
};

template <typename Scalar>
struct ProcrustesResult {
    DenseMatrix<Scalar> aligned;
    DenseMatrix<Scalar> rotation;
    // Set when the cross product is rank deficient and the rotation is not unique.
    bool ambiguous = false;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& a, const char* what) {
    if (!a.allFinite()) {
        throw InputError(std::string(what) + ": non-finite entries");
    }
}

template <typename Derived>
void require_oracle_size(const Eigen::MatrixBase<Derived>& a, const char* what) {
    if (a.rows() > kMaxOracleDim || a.cols() > kMaxOracleDim) {
        std::ostringstream os;
        os << what << ": " << a.rows() << "x" << a.cols() << " exceeds the " << kMaxOracleDim
           << "x" << kMaxOracleDim << " oracle limit";
        throw InputError(os.str());
    }
}

// Index of the entry of largest magnitude (first one on ties).
template <typename Derived>
Index argmax_abs(const Eigen::MatrixBase<Derived>& v) {
    Index best = 0;
    for (Index i = 1; i < v.size(); ++i) {
        if (std::abs(v(i)) > std::abs(v(best))) best = i;
    }
    return best;
}

// Fill columns flagged in `missing` with unit vectors orthogonal to all others.
template <typename Scalar>
void complete_orthonormal(DenseMatrix<Scalar>& q, const std::vector<bool>& missing) {
    const Index n = q.rows();
    Index candidate = 0;
    for (Index j = 0; j < q.cols(); ++j) {
        if (!missing[static_cast<std::size_t>(j)]) continue;
        for (;; ++candidate) {
            if (candidate >= n) throw NumericalError("orthonormal completion ran out of candidates");
            DenseVector<Scalar> e = DenseVector<Scalar>::Unit(n, candidate);
            for (int pass = 0; pass < 2; ++pass) {
                for (Index k = 0; k < q.cols(); ++k) {
                    if (k == j || (missing[static_cast<std::size_t>(k)] && k > j)) continue;
                    e -= q.col(k).dot(e) * q.col(k);
                }
            }
            const Scalar norm = e.norm();
            if (norm > Scalar(1e-6)) {
                q.col(j) = e / norm;
                ++candidate;
                break;
            }
        }
    }
}

template <typename Scalar>
DenseVector<Scalar> sorted_order_desc(const DenseVector<Scalar>& values, std::vector<Index>& order) {
    order.resize(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return values(a) > values(b); });
    DenseVector<Scalar> out(values.size());
    for (Index i = 0; i < values.size(); ++i) out(i) = values(order[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace detail

/// Thin SVD by one-sided (Hestenes) Jacobi with cyclic sweeps.
///
/// Singular values come back non-increasing. Each left vector has its entry of
/// largest magnitude made positive; the matching right vector is flipped with it.
template <typename Derived>
SvdResult<typename Derived::Scalar> exact_svd(const Eigen::MatrixBase<Derived>& a,
                                              typename Derived::Scalar tol = 1e-14) {
    using Scalar = typename Derived::Scalar;
    if (!(tol > Scalar(0))) throw InputError("exact_svd: tol must be positive");
    detail::require_finite(a, "exact_svd");
    detail::require_oracle_size(a, "exact_svd");
    if (a.rows() == 0 || a.cols() == 0) throw InputError("exact_svd: empty matrix");

    if (a.rows() < a.cols()) {
        SvdResult<Scalar> t = exact_svd(a.transpose().eval(), tol);
        std::swap(t.left_vectors, t.right_vectors);
        // restore the left-vector sign convention
        for (Index j = 0; j < t.singular_values.size(); ++j) {
            if (t.left_vectors(detail::argmax_abs(t.left_vectors.col(j)), j) < Scalar(0)) {
                t.left_vectors.col(j) *= Scalar(-1);
                t.right_vectors.col(j) *= Scalar(-1);
            }
        }
        return t;
    }

    const Index m = a.rows();
    const Index n = a.cols();
    DenseMatrix<Scalar> w = a;
    DenseMatrix<Scalar> v = DenseMatrix<Scalar>::Identity(n, n);

    bool converged = false;
    for (int sweep = 0; sweep < kJacobiSweeps && !converged; ++sweep) {
        converged = true;
        for (Index p = 0; p + 1 < n; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                const Scalar alpha = w.col(p).squaredNorm();
                const Scalar beta = w.col(q).squaredNorm();
                const Scalar gamma = w.col(p).dot(w.col(q));
                if (alpha == Scalar(0) || beta == Scalar(0)) continue;
                if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Index i = 0; i < m; ++i) {
                    const Scalar wp = w(i, p), wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (Index i = 0; i < n; ++i) {
                    const Scalar vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalError("exact_svd: no convergence within " + std::to_string(kJacobiSweeps) +
                             " sweeps");
    }

    DenseVector<Scalar> norms(n);
    for (Index j = 0; j < n; ++j) norms(j) = w.col(j).norm();
    std::vector<Index> order;
    SvdResult<Scalar> out;
    out.singular_values = detail::sorted_order_desc(norms, order);
    out.left_vectors.resize(m, n);
    out.right_vectors.resize(n, n);

    const Scalar floor = out.singular_values(0) * std::numeric_limits<Scalar>::epsilon() *
                         static_cast<Scalar>(std::max(m, n));
    std::vector<bool> missing(static_cast<std::size_t>(n), false);
    for (Index j = 0; j < n; ++j) {
        const Index src = order[static_cast<std::size_t>(j)];
        out.right_vectors.col(j) = v.col(src);
        if (out.singular_values(j) > floor && out.singular_values(j) > Scalar(0)) {
            out.left_vectors.col(j) = w.col(src) / out.singular_values(j);
        } else {
            out.singular_values(j) = Scalar(0);
            out.left_vectors.col(j).setZero();
            missing[static_cast<std::size_t>(j)] = true;
        }
    }
    detail::complete_orthonormal(out.left_vectors, missing);

    for (Index j = 0; j < n; ++j) {
        if (out.left_vectors(detail::argmax_abs(out.left_vectors.col(j)), j) < Scalar(0)) {
            out.left_vectors.col(j) *= Scalar(-1);
            out.right_vectors.col(j) *= Scalar(-1);
        }
    }
    return out;
}

/// Symmetric eigendecomposition by cyclic two-sided Jacobi rotations.
/// Eigenvalues non-increasing; eigenvector sign fixed by the largest-magnitude entry.
template <typename Derived>
EigResult<typename Derived::Scalar> exact_symmetric_eig(const Eigen::MatrixBase<Derived>& a_in,
                                                        typename Derived::Scalar tol = 1e-15) {
    using Scalar = typename Derived::Scalar;
    if (!(tol > Scalar(0))) throw InputError("exact_symmetric_eig: tol must be positive");
    if (a_in.rows() != a_in.cols()) throw InputError("exact_symmetric_eig: matrix is not square");
    detail::require_finite(a_in, "exact_symmetric_eig");
    detail::require_oracle_size(a_in, "exact_symmetric_eig");
    const Index n = a_in.rows();
    if (n == 0) throw InputError("exact_symmetric_eig: empty matrix");

    const Scalar scale = std::max(Scalar(1), a_in.cwiseAbs().maxCoeff());
    const Scalar asym = (a_in - a_in.transpose()).cwiseAbs().maxCoeff();
    if (asym > Scalar(1e-12) * scale) {
        std::ostringstream os;
        os << "exact_symmetric_eig: asymmetry " << asym << " exceeds tolerance";
        throw InputError(os.str());
    }

    DenseMatrix<Scalar> a = (a_in + a_in.transpose()) / Scalar(2);
    DenseMatrix<Scalar> v = DenseMatrix<Scalar>::Identity(n, n);
    const Scalar frob = a.norm();

    bool converged = false;
    for (int sweep = 0; sweep <= kJacobiSweeps; ++sweep) {
        Scalar off = 0;
        for (Index p = 0; p < n; ++p)
            for (Index q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        if (off <= tol * frob) {
            converged = true;
            break;
        }
        if (sweep == kJacobiSweeps) break;
        for (Index p = 0; p + 1 < n; ++p) {
            for (Index q = p + 1; q < n; ++q) {
                const Scalar apq = a(p, q);
                if (apq == Scalar(0)) continue;
                const Scalar theta = (a(q, q) - a(p, p)) / (Scalar(2) * apq);
                const Scalar t = (theta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                                 (std::abs(theta) + std::sqrt(theta * theta + Scalar(1)));
                const Scalar c = Scalar(1) / std::sqrt(t * t + Scalar(1));
                const Scalar s = t * c;
                for (Index k = 0; k < n; ++k) {
                    const Scalar akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Index k = 0; k < n; ++k) {
                    const Scalar apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = a(q, p) = Scalar(0);
                for (Index k = 0; k < n; ++k) {
                    const Scalar vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        throw NumericalError("exact_symmetric_eig: no convergence within " +
                             std::to_string(kJacobiSweeps) + " sweeps");
    }

    std::vector<Index> order;
    EigResult<Scalar> out;
    out.eigenvalues = detail::sorted_order_desc(DenseVector<Scalar>(a.diagonal()), order);
    out.eigenvectors.resize(n, n);
    for (Index j = 0; j < n; ++j) {
        out.eigenvectors.col(j) = v.col(order[static_cast<std::size_t>(j)]);
        if (out.eigenvectors(detail::argmax_abs(out.eigenvectors.col(j)), j) < Scalar(0)) {
            out.eigenvectors.col(j) *= Scalar(-1);
        }
    }
    return out;
}

/// Orthogonal Procrustes: the rotation R minimizing ||learned * R - reference||_F.
template <typename DerivedA, typename DerivedB>
ProcrustesResult<typename DerivedA::Scalar> procrustes_align(
    const Eigen::MatrixBase<DerivedA>& learned, const Eigen::MatrixBase<DerivedB>& reference) {
    using Scalar = typename DerivedA::Scalar;
    if (learned.rows() != reference.rows() || learned.cols() != reference.cols()) {
        throw InputError("procrustes_align: shape mismatch");
    }
    const DenseMatrix<Scalar> cross = learned.transpose() * reference;
    ProcrustesResult<Scalar> out;
    if (cross.cwiseAbs().maxCoeff() == Scalar(0)) {
        out.rotation = DenseMatrix<Scalar>::Identity(cross.rows(), cross.cols());
        out.aligned = learned;
        out.ambiguous = true;
        return out;
    }
    const SvdResult<Scalar> svd = exact_svd(cross);
    out.rotation = svd.left_vectors * svd.right_vectors.transpose();
    out.aligned = learned * out.rotation;
    const Scalar smax = svd.singular_values(0);
    out.ambiguous = svd.singular_values(svd.singular_values.size() - 1) <= Scalar(1e-10) * smax;
    return out;
}

/// G^{-1/2} for a symmetric positive definite G; throws if the smallest
/// eigenvalue is not above 1e-12 times the largest.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> symmetric_inverse_sqrt(const Eigen::MatrixBase<Derived>& g) {
    using Scalar = typename Derived::Scalar;
    const EigResult<Scalar> eig = exact_symmetric_eig(g);
    const Scalar largest = eig.eigenvalues(0);
    const Scalar smallest = eig.eigenvalues(eig.eigenvalues.size() - 1);
    if (!(largest > Scalar(0)) || !(smallest > Scalar(1e-12) * largest)) {
        std::ostringstream os;
        os << "ill-conditioned Gram matrix: smallest eigenvalue " << smallest << " vs largest "
           << largest;
        throw InputError(os.str());
    }
    const DenseVector<Scalar> inv_sqrt = eig.eigenvalues.cwiseSqrt().cwiseInverse();
    return eig.eigenvectors * inv_sqrt.asDiagonal() * eig.eigenvectors.transpose();
}

/// Rescale columns so that (1/S) V^T V = I using the symmetric inverse square root.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> whiten_columns(const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    if (v.rows() == 0) throw InputError("whiten_columns: empty batch");
    const DenseMatrix<Scalar> gram = (v.transpose() * v) / static_cast<Scalar>(v.rows());
    return v * symmetric_inverse_sqrt(gram);
}

}  // namespace linalg
}  // namespace nestsvd
