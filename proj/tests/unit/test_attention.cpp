// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qsl/attention.hpp"
#include "qsl/quant.hpp"

namespace qsl {
namespace {

Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

AttentionInputs random_inputs(Index L, Index d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix q = gaussian(L, d, rng), k = gaussian(L, d, rng), v = gaussian(L, d, rng);
    return {std::move(q), std::move(k), std::move(v)};
}

// Masked softmax written out with explicit loops, no shared helpers.
Matrix naive_masked_attention(const AttentionInputs& in, const BoolMatrix& keep) {
    const Index L = in.length();
    Matrix a = Matrix::Zero(L, L);
    for (Index i = 0; i < L; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index j = 0; j < L; ++j) {
            if (keep(i, j)) mx = std::max(mx, in.scale * in.Q.row(i).dot(in.K.row(j)));
        }
        double z = 0;
        for (Index j = 0; j < L; ++j) {
            if (keep(i, j)) z += std::exp(in.scale * in.Q.row(i).dot(in.K.row(j)) - mx);
        }
        for (Index j = 0; j < L; ++j) {
            if (keep(i, j)) a(i, j) = std::exp(in.scale * in.Q.row(i).dot(in.K.row(j)) - mx) / z;
        }
    }
    return a;
}

TEST(FullAttention, SingletonAndUniform) {
    auto in = random_inputs(1, 3, 1);
    const auto r = full_attention(in);
    EXPECT_EQ(r.A(0, 0), 1.0);
    EXPECT_LE((r.out - in.V).norm(), 1e-15);

    auto u = random_inputs(5, 3, 2);
    u.K = Matrix::Ones(5, 3);
    const auto ru = full_attention(u);
    EXPECT_LE((ru.A.array() - 0.2).abs().maxCoeff(), 1e-15);
}

TEST(FullAttention, ShapeMismatch) {
    auto in = random_inputs(4, 3, 3);
    in.K = Matrix::Zero(5, 3);
    EXPECT_THROW(full_attention(in), ShapeError);
}

TEST(SparseAttention, FullMaskIsBitExact) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto in = random_inputs(16, 4, seed);
        const auto f = full_attention(in);
        const auto s = sparse_attention(in, SparsityMask::full(16));
        EXPECT_EQ(f.A, s.A);
        EXPECT_EQ(f.out, s.out);
    }
}

TEST(SparseAttention, IdentityMask) {
    const auto in = random_inputs(6, 3, 4);
    const auto s = sparse_attention(in, SparsityMask::identity(6));
    EXPECT_EQ(s.A, Matrix(Matrix::Identity(6, 6)));
    EXPECT_LE((s.out - in.V).norm(), 1e-15);
}

TEST(SparseAttention, MatchesNaiveOracleOnRandomMasks) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Index L = 4 + Index(seed % 13);
        const auto in = random_inputs(L, 3, 1000 + seed);
        const auto m = build_random_mask(L, 0.4, seed);
        const auto s = sparse_attention(in, m);
        EXPECT_LE((s.A - naive_masked_attention(in, m.bits())).cwiseAbs().maxCoeff(), 1e-9);
        for (Index i = 0; i < L; ++i) {
            EXPECT_NEAR(s.A.row(i).sum(), 1.0, 1e-12);
            for (Index j = 0; j < L; ++j) {
                if (!m.keeps(i, j)) { EXPECT_EQ(s.A(i, j), 0.0); }
            }
        }
    }
}

TEST(SparseAttention, LiteralSemanticsLeaksWeight) {
    const auto in = random_inputs(8, 3, 5);
    const auto m = build_random_mask(8, 0.25, 1);
    const auto lit = sparse_attention(in, m, MaskSemantics::Literal);
    bool leaked = false;
    for (Index i = 0; i < 8; ++i) {
        for (Index j = 0; j < 8; ++j) leaked |= !m.keeps(i, j) && lit.A(i, j) > 0.0;
    }
    EXPECT_TRUE(leaked);
}

TEST(SparseAttention, MaskShapeMismatch) {
    EXPECT_THROW(sparse_attention(random_inputs(4, 2, 6), SparsityMask::full(5)), ShapeError);
}

TEST(SparsityMask, RejectsEmptyRow) {
    BoolMatrix b = BoolMatrix::Constant(3, 3, true);
    b.row(1).setConstant(false);
    EXPECT_THROW(SparsityMask{b}, ParameterError);
}

TEST(TopkMask, DensityOneIsFull) {
    const auto a = full_attention(random_inputs(8, 3, 7)).A;
    EXPECT_EQ(build_topk_mask(a, 1.0), SparsityMask::full(8));
}

TEST(TopkMask, MinimumDensityIsArgmaxPlusDiagonal) {
    const Index L = 10;
    const auto a = full_attention(random_inputs(L, 3, 8)).A;
    const auto m = build_topk_mask(a, 1.0 / L);
    for (Index i = 0; i < L; ++i) {
        Index arg = 0;
        a.row(i).maxCoeff(&arg);
        for (Index j = 0; j < L; ++j) EXPECT_EQ(m.keeps(i, j), j == arg || j == i);
    }
}

TEST(TopkMask, DensityWithinOneOverLAndDiagonalKept) {
    for (double density : {0.1, 0.25, 0.5, 0.75}) {
        const Index L = 32;
        const auto a = full_attention(random_inputs(L, 4, 9)).A;
        const auto m = build_topk_mask(a, density);
        EXPECT_LE(std::abs(m.density() - density), 1.0 / L + 1e-12);
        for (Index i = 0; i < L; ++i) EXPECT_TRUE(m.keeps(i, i));
    }
}

TEST(TopkMask, BadDensity) {
    const Matrix a = Matrix::Identity(4, 4);
    EXPECT_THROW(build_topk_mask(a, 0.0), ParameterError);
    EXPECT_THROW(build_topk_mask(a, 1.5), ParameterError);
}

TEST(BlockMask, Examples) {
    EXPECT_EQ(build_block_mask(16, 16, 1.0, 0), SparsityMask::full(16));
    EXPECT_EQ(build_block_mask(16, 1, 1.0 / 16, 0), SparsityMask::identity(16));
    const auto m = build_block_mask(16, 4, 0.5, 3);
    const double frac = double(m.popcount()) / 256.0;
    EXPECT_GE(frac, 0.44);
    EXPECT_LE(frac, 0.56);
}

TEST(BlockMask, BelowFloorNamesTheFloor) {
    try {
        build_block_mask(16, 4, 0.1, 0);
        FAIL() << "expected ParameterError";
    } catch (const ParameterError& e) {
        EXPECT_NE(std::string(e.what()).find("0.25"), std::string::npos) << e.what();
    }
}

TEST(BlockMask, Deterministic) {
    EXPECT_EQ(build_block_mask(32, 4, 0.4, 11), build_block_mask(32, 4, 0.4, 11));
}

TEST(AttentionShift, NoQuantisation) {
    const auto in = random_inputs(12, 4, 10);
    const auto full = measure_attention_shift(in, in, SparsityMask::full(12));
    EXPECT_EQ(full.delta_sparse, 0.0);
    EXPECT_EQ(full.delta_quant, 0.0);
    EXPECT_EQ(full.delta_total, 0.0);
    EXPECT_EQ(full.interaction, 0.0);
    const auto sparse = measure_attention_shift(in, in, build_random_mask(12, 0.3, 2));
    EXPECT_EQ(sparse.delta_quant, 0.0);
    EXPECT_EQ(sparse.delta_total, sparse.delta_sparse);
}

TEST(AttentionShift, CompoundsInMostSeeds) {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto in = random_inputs(32, 8, 500 + seed);
        AttentionInputs q = in;
        q.Q = fake_quant(in.Q, calibrate_minmax(in.Q, 4, Granularity::PerToken));
        q.K = fake_quant(in.K, calibrate_minmax(in.K, 4, Granularity::PerToken));
        q.V = fake_quant(in.V, calibrate_minmax(in.V, 4, Granularity::PerToken));
        const auto mask = build_topk_mask(full_attention(in).A, 0.25);
        const auto r = measure_attention_shift(in, q, mask);
        hits += r.delta_total >= std::max(r.delta_sparse, r.delta_quant);
    }
    EXPECT_GE(hits, 90);
}

TEST(SoftmaxBackward, MatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    const Matrix logits = gaussian(3, 5, rng), g = gaussian(3, 5, rng);
    const Matrix analytic = softmax_backward(row_softmax(logits), g);
    const double h = 1e-6;
    for (Index i = 0; i < logits.size(); ++i) {
        Matrix p = logits, m = logits;
        p.data()[i] += h;
        m.data()[i] -= h;
        const double fd = ((row_softmax(p) - row_softmax(m)).cwiseProduct(g)).sum() / (2 * h);
        EXPECT_NEAR(analytic.data()[i], fd, 1e-8);
    }
}

}  // namespace
}  // namespace qsl
