// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "qsl/error.hpp"

namespace qsl {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;
using IndexSet = std::vector<Index>;

/// Sentinel written into masked logits.
template <typename Scalar = double>
constexpr Scalar masked_logit() {
    return -std::numeric_limits<Scalar>::infinity();
}

/// Dense product with a shape check. Eigen's single-threaded GEMM has a
/// fixed blocking order, so results are bit-reproducible per build.
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax, stabilised by subtracting the row maximum.
/// Entries equal to -inf map to exactly zero.
template <typename Derived>
MatrixX<typename Derived::Scalar> row_softmax(const Eigen::MatrixBase<Derived>& logits) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
        Scalar row_max = masked_logit<Scalar>();
        for (Index j = 0; j < logits.cols(); ++j) {
            const Scalar v = logits(i, j);
            if (std::isnan(v) || v == std::numeric_limits<Scalar>::infinity()) {
                throw ParameterError("row_softmax: non-finite logit at (" + std::to_string(i) +
                                     ", " + std::to_string(j) + ")");
            }
            row_max = std::max(row_max, v);
        }
        if (row_max == masked_logit<Scalar>()) throw DegenerateRowError(static_cast<std::size_t>(i));
        Scalar sum = 0;
        for (Index j = 0; j < logits.cols(); ++j) {
            const Scalar v = logits(i, j);
            const Scalar e = (v == masked_logit<Scalar>()) ? Scalar(0) : std::exp(v - row_max);
            out(i, j) = e;
            sum += e;
        }
        for (Index j = 0; j < logits.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

/// Mean-pools consecutive groups of `stride` rows; a ragged tail is averaged
/// over the rows it actually has.
template <typename Derived>
MatrixX<typename Derived::Scalar> avg_pool_rows(const Eigen::MatrixBase<Derived>& m, Index stride) {
    using Scalar = typename Derived::Scalar;
    if (stride < 1) throw ParameterError("avg_pool_rows: stride must be >= 1");
    const Index out_rows = (m.rows() + stride - 1) / stride;
    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(out_rows, m.cols());
    for (Index i = 0; i < out_rows; ++i) {
        const Index begin = i * stride;
        const Index end = std::min(begin + stride, Index(m.rows()));
        for (Index r = begin; r < end; ++r) out.row(i) += m.row(r);
        out.row(i) /= Scalar(end - begin);
    }
    return out;
}

template <typename Derived>
typename Derived::Scalar frobenius(const Eigen::MatrixBase<Derived>& m) {
    return m.norm();
}

/// Indices of the k largest entries, ordered by rank; ties go to the lower index.
IndexSet top_k_indices(const Vector& v, Index k);

/// Descending argsort with lower-index tie-break.
IndexSet argsort_descending(const Vector& v);

/// Thin singular value decomposition m = U diag(S) V^T.
template <typename Scalar>
struct SvdFactors {
    MatrixX<Scalar> U;  // m x r
    VectorX<Scalar> S;  // r, nonincreasing
    MatrixX<Scalar> V;  // n x r
};

namespace detail {

// Orthonormalises the columns of `q` flagged in `fill` against the rest,
// drawing candidates from the standard basis.
template <typename Scalar>
void complete_orthonormal(MatrixX<Scalar>& q, const std::vector<bool>& fill) {
    const Index n = q.rows();
    Index candidate = 0;
    for (Index c = 0; c < q.cols(); ++c) {
        if (!fill[static_cast<std::size_t>(c)]) continue;
        for (; candidate < n; ++candidate) {
            VectorX<Scalar> v = VectorX<Scalar>::Unit(n, candidate);
            for (int pass = 0; pass < 2; ++pass) {
                for (Index o = 0; o < q.cols(); ++o) {
                    if (o == c || (fill[static_cast<std::size_t>(o)] && o > c)) continue;
                    v -= q.col(o).dot(v) * q.col(o);
                }
            }
            const Scalar nv = v.norm();
            if (nv > Scalar(0.5)) {
                q.col(c) = v / nv;
                ++candidate;
                break;
            }
        }
    }
}

}  // namespace detail

/// One-sided (Hestenes) Jacobi SVD. Sweeps are capped at
/// 100 * min(rows, cols); exceeding the cap raises NumericalError.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m) {
    using Scalar = typename Derived::Scalar;
    if (m.rows() < m.cols()) {
        auto f = svd(m.transpose().eval());
        return {std::move(f.V), std::move(f.S), std::move(f.U)};
    }
    if (!m.allFinite()) throw ParameterError("svd: non-finite input");

    const Index rows = m.rows();
    const Index cols = m.cols();
    MatrixX<Scalar> a = m;
    MatrixX<Scalar> v = MatrixX<Scalar>::Identity(cols, cols);
    const Scalar tol = Scalar(4) * std::numeric_limits<Scalar>::epsilon();
    // Columns below this energy are numerically zero; rotating them only
    // shuffles rounding noise and can stall convergence.
    const Scalar negligible = std::pow(std::numeric_limits<Scalar>::epsilon() * a.norm(), Scalar(2));
    const std::size_t max_sweeps = 100 * static_cast<std::size_t>(std::max<Index>(1, cols));

    bool converged = false;
    std::size_t sweep = 0;
    for (; sweep < max_sweeps && !converged; ++sweep) {
        converged = true;
        for (Index p = 0; p + 1 < cols; ++p) {
            for (Index q = p + 1; q < cols; ++q) {
                const Scalar alpha = a.col(p).squaredNorm();
                const Scalar beta = a.col(q).squaredNorm();
                const Scalar gamma = a.col(p).dot(a.col(q));
                if (alpha <= negligible || beta <= negligible) continue;
                if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
                converged = false;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = std::copysign(Scalar(1), zeta) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Index i = 0; i < rows; ++i) {
                    const Scalar ap = a(i, p);
                    const Scalar aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (Index i = 0; i < cols; ++i) {
                    const Scalar vp = v(i, p);
                    const Scalar vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (!converged) throw NumericalError("svd: one-sided Jacobi did not converge", sweep);

    VectorX<Scalar> norms(cols);
    for (Index j = 0; j < cols; ++j) norms(j) = a.col(j).norm();
    std::vector<Index> order(static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(),
                     [&](Index x, Index y) { return norms(x) > norms(y); });

    SvdFactors<Scalar> f;
    f.U.resize(rows, cols);
    f.S.resize(cols);
    f.V.resize(cols, cols);
    const Scalar lead = cols > 0 ? norms(order[0]) : Scalar(0);
    const Scalar zero_cut = lead * std::numeric_limits<Scalar>::epsilon() * Scalar(rows);
    std::vector<bool> fill(static_cast<std::size_t>(cols), false);
    for (Index k = 0; k < cols; ++k) {
        const Index j = order[static_cast<std::size_t>(k)];
        f.S(k) = norms(j);
        f.V.col(k) = v.col(j);
        if (norms(j) > zero_cut && norms(j) > Scalar(0)) {
            f.U.col(k) = a.col(j) / norms(j);
        } else {
            f.U.col(k).setZero();
            fill[static_cast<std::size_t>(k)] = true;
        }
    }
    detail::complete_orthonormal(f.U, fill);
    return f;
}

/// Best rank-r approximation sum_{i<r} S_i U_i V_i^T.
template <typename Scalar>
MatrixX<Scalar> truncate_rank(const SvdFactors<Scalar>& f, Index r) {
    if (r < 1 || r > f.S.size()) {
        throw ParameterError("truncate_rank: rank " + std::to_string(r) + " outside [1, " +
                             std::to_string(f.S.size()) + "]");
    }
    return f.U.leftCols(r) * f.S.head(r).asDiagonal() * f.V.leftCols(r).transpose();
}

/// Haar-distributed orthogonal matrix, deterministic per seed.
Matrix random_orthogonal(Index dim, std::uint64_t seed);

/// Spectral norm estimate by power iteration on m^T m from a fixed start vector.
double spectral_norm(const Matrix& m, int iterations = 20);

}  // namespace qsl
