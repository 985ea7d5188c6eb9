// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "qsl/numerics.hpp"

namespace qsl {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Single-head attention operands; all three share an L x d_k shape.
struct AttentionInputs {
    Matrix Q;
    Matrix K;
    Matrix V;
    double scale = 1.0;

    AttentionInputs() = default;
    /// Uses the conventional 1/sqrt(d_k) temperature.
    AttentionInputs(Matrix q, Matrix k, Matrix v);
    void validate() const;
    Index length() const { return Q.rows(); }
};

struct AttentionResult {
    Matrix A;    // L x L, row-stochastic
    Matrix out;  // A V
};

/// L x L keep-pattern. `density` is the fraction of kept pairs.
class SparsityMask {
public:
    SparsityMask() = default;
    /// Throws ParameterError if the pattern is not square or a row is empty.
    explicit SparsityMask(BoolMatrix bits);

    static SparsityMask full(Index length);
    static SparsityMask identity(Index length);

    const BoolMatrix& bits() const { return bits_; }
    Index length() const { return bits_.rows(); }
    Index popcount() const { return popcount_; }
    double density() const;
    bool keeps(Index i, Index j) const { return bits_(i, j); }
    bool operator==(const SparsityMask&) const = default;

private:
    BoolMatrix bits_;
    Index popcount_ = 0;
};

/// How the mask enters the logits. Exclusion writes -inf before softmax;
/// Literal multiplies logits by the 0/1 mask, which leaves pruned pairs with
/// weight proportional to e^0. Literal exists only for comparison.
enum class MaskSemantics { Exclusion, Literal };

/// QK^T * scale.
Matrix attention_logits(const AttentionInputs& in);

AttentionResult full_attention(const AttentionInputs& in);
AttentionResult sparse_attention(const AttentionInputs& in, const SparsityMask& m,
                                 MaskSemantics semantics = MaskSemantics::Exclusion);

/// Keeps the ceil(density * L) largest entries of each row of a_ref. The
/// diagonal is always kept; when it is not among them it replaces the
/// lowest-ranked pick (or joins a lone argmax).
SparsityMask build_topk_mask(const Matrix& a_ref, double density);

/// Block-diagonal pattern plus seeded off-diagonal blocks until the density
/// target is met as closely as whole blocks allow.
SparsityMask build_block_mask(Index length, Index block, double density, std::uint64_t seed);

/// Seeded uniform pattern with the diagonal kept and the same per-row count
/// as build_topk_mask.
SparsityMask build_random_mask(Index length, double density, std::uint64_t seed);

/// Frobenius-norm decomposition of the compounded attention shift.
struct AttentionShiftReport {
    double delta_sparse = 0.0;  // ||A_full(fp) - A_sparse(fp)||
    double delta_quant = 0.0;   // ||A_full(fp) - A_full(q)||
    double delta_total = 0.0;   // ||A_full(fp) - A_sparse(q)||
    double interaction = 0.0;   // |total - sparse - quant|
};

AttentionShiftReport measure_attention_shift(const AttentionInputs& in_fp, const AttentionInputs& in_q,
                                             const SparsityMask& m);

/// Row-softmax backward: given dL/dA for A = softmax(logits), returns dL/dlogits.
Matrix softmax_backward(const Matrix& a, const Matrix& grad_a);

}  // namespace qsl
