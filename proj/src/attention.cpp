// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/attention.hpp"

#include <random>
#include <string>

namespace qsl {

AttentionInputs::AttentionInputs(Matrix q, Matrix k, Matrix v)
    : Q(std::move(q)), K(std::move(k)), V(std::move(v)), scale(1.0 / std::sqrt(double(Q.cols()))) {
    validate();
}

void AttentionInputs::validate() const {
    if (Q.cols() < 1 || Q.rows() < 1) throw ShapeError("attention: empty Q");
    if (K.rows() != Q.rows() || K.cols() != Q.cols()) throw ShapeError("attention: K shape differs from Q");
    if (V.rows() != Q.rows()) throw ShapeError("attention: V row count differs from Q");
}

SparsityMask::SparsityMask(BoolMatrix bits) : bits_(std::move(bits)) {
    if (bits_.rows() != bits_.cols() || bits_.rows() < 1) throw ParameterError("mask must be square and nonempty");
    for (Index i = 0; i < bits_.rows(); ++i) {
        if (!bits_.row(i).any()) throw ParameterError("mask row " + std::to_string(i) + " keeps nothing");
    }
    popcount_ = bits_.count();
}

SparsityMask SparsityMask::full(Index length) { return SparsityMask(BoolMatrix::Constant(length, length, true)); }

SparsityMask SparsityMask::identity(Index length) {
    BoolMatrix b = BoolMatrix::Constant(length, length, false);
    b.diagonal().setConstant(true);
    return SparsityMask(std::move(b));
}

double SparsityMask::density() const {
    return bits_.size() == 0 ? 0.0 : double(popcount_) / double(bits_.size());
}

Matrix attention_logits(const AttentionInputs& in) {
    in.validate();
    Matrix logits = matmul(in.Q, in.K.transpose());
    logits *= in.scale;
    return logits;
}

AttentionResult full_attention(const AttentionInputs& in) {
    AttentionResult r;
    r.A = row_softmax(attention_logits(in));
    r.out = matmul(r.A, in.V);
    return r;
}

AttentionResult sparse_attention(const AttentionInputs& in, const SparsityMask& m, MaskSemantics semantics) {
    Matrix logits = attention_logits(in);
    if (m.length() != logits.rows()) {
        throw ShapeError("sparse_attention: mask is " + std::to_string(m.length()) + "^2, L=" +
                         std::to_string(logits.rows()));
    }
    for (Index j = 0; j < logits.cols(); ++j) {
        for (Index i = 0; i < logits.rows(); ++i) {
            if (m.keeps(i, j)) continue;
            logits(i, j) = semantics == MaskSemantics::Exclusion ? masked_logit() : 0.0;
        }
    }
    AttentionResult r;
    r.A = row_softmax(logits);
    r.out = matmul(r.A, in.V);
    return r;
}

namespace {

void check_density(double density) {
    if (!(density > 0.0 && density <= 1.0)) {
        throw ParameterError("mask density must lie in (0, 1], got " + std::to_string(density));
    }
}

Index keep_per_row(double density, Index length) {
    const auto k = static_cast<Index>(std::ceil(density * double(length) - 1e-9));
    return std::clamp<Index>(k, 1, length);
}

// Marks `picks` in row i, substituting the diagonal for the last pick when it
// is missing (a lone pick keeps its slot and the diagonal is added).
void keep_row(BoolMatrix& bits, Index i, const IndexSet& picks) {
    bool has_diag = std::find(picks.begin(), picks.end(), i) != picks.end();
    const std::size_t n = (has_diag || picks.size() == 1) ? picks.size() : picks.size() - 1;
    for (std::size_t p = 0; p < n; ++p) bits(i, picks[p]) = true;
    bits(i, i) = true;
}

}  // namespace

SparsityMask build_topk_mask(const Matrix& a_ref, double density) {
    check_density(density);
    if (a_ref.rows() != a_ref.cols()) throw ShapeError("build_topk_mask: reference map must be square");
    const Index length = a_ref.rows();
    const Index k = keep_per_row(density, length);
    BoolMatrix bits = BoolMatrix::Constant(length, length, false);
    for (Index i = 0; i < length; ++i) {
        keep_row(bits, i, top_k_indices(a_ref.row(i).transpose(), k));
    }
    return SparsityMask(std::move(bits));
}

SparsityMask build_random_mask(Index length, double density, std::uint64_t seed) {
    check_density(density);
    if (length < 1) throw ParameterError("build_random_mask: length must be >= 1");
    const Index k = keep_per_row(density, length);
    std::mt19937_64 rng(seed);
    BoolMatrix bits = BoolMatrix::Constant(length, length, false);
    IndexSet cols(static_cast<std::size_t>(length));
    for (Index i = 0; i < length; ++i) {
        std::iota(cols.begin(), cols.end(), Index(0));
        std::shuffle(cols.begin(), cols.end(), rng);
        keep_row(bits, i, IndexSet(cols.begin(), cols.begin() + k));
    }
    return SparsityMask(std::move(bits));
}

SparsityMask build_block_mask(Index length, Index block, double density, std::uint64_t seed) {
    check_density(density);
    if (length < 1) throw ParameterError("build_block_mask: length must be >= 1");
    if (block < 1) throw ParameterError("build_block_mask: block must be >= 1");
    block = std::min(block, length);
    const Index nb = (length + block - 1) / block;
    auto extent = [&](Index b) { return std::min(block, length - b * block); };

    BoolMatrix bits = BoolMatrix::Constant(length, length, false);
    Index count = 0;
    for (Index b = 0; b < nb; ++b) {
        bits.block(b * block, b * block, extent(b), extent(b)).setConstant(true);
        count += extent(b) * extent(b);
    }
    const double total = double(length) * double(length);
    const double floor = double(count) / total;
    if (density < floor - 1e-12) {
        throw ParameterError("build_block_mask: density " + std::to_string(density) +
                             " is below the block-diagonal floor " + std::to_string(floor));
    }

    std::vector<std::pair<Index, Index>> off;
    for (Index bi = 0; bi < nb; ++bi)
        for (Index bj = 0; bj < nb; ++bj)
            if (bi != bj) off.emplace_back(bi, bj);
    std::mt19937_64 rng(seed);
    std::shuffle(off.begin(), off.end(), rng);

    const double target = density * total;
    for (const auto& [bi, bj] : off) {
        if (double(count) >= target) break;
        const Index cells = extent(bi) * extent(bj);
        if (double(count + cells) - target > target - double(count)) break;
        bits.block(bi * block, bj * block, extent(bi), extent(bj)).setConstant(true);
        count += cells;
    }
    return SparsityMask(std::move(bits));
}

AttentionShiftReport measure_attention_shift(const AttentionInputs& in_fp, const AttentionInputs& in_q,
                                             const SparsityMask& m) {
    if (in_fp.Q.rows() != in_q.Q.rows() || in_fp.Q.cols() != in_q.Q.cols() || in_fp.V.cols() != in_q.V.cols()) {
        throw ShapeError("measure_attention_shift: FP and quantized inputs differ in shape");
    }
    const Matrix full_fp = full_attention(in_fp).A;
    AttentionShiftReport r;
    r.delta_sparse = frobenius(full_fp - sparse_attention(in_fp, m).A);
    r.delta_quant = frobenius(full_fp - full_attention(in_q).A);
    r.delta_total = frobenius(full_fp - sparse_attention(in_q, m).A);
    r.interaction = std::abs(r.delta_total - r.delta_sparse - r.delta_quant);
    return r;
}

Matrix softmax_backward(const Matrix& a, const Matrix& grad_a) {
    Matrix g(a.rows(), a.cols());
    for (Index i = 0; i < a.rows(); ++i) {
        const double inner = a.row(i).dot(grad_a.row(i));
        g.row(i) = a.row(i).array() * (grad_a.row(i).array() - inner);
    }
    return g;
}

}  // namespace qsl
