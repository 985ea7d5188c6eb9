// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "qsl/quant.hpp"

namespace qsl {
namespace {

QuantParams scalar_params(int bits, double s, int z) {
    QuantParams p;
    p.bits = bits;
    p.scales = {s};
    p.zero_points = {z};
    return p;
}

Matrix one(double v) { return Matrix::Constant(1, 1, v); }

Matrix uniform(Index r, Index c, double lo, double hi, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

TEST(CalibrateMinmax, UnitIntervalAt8Bits) {
    Matrix x(1, 256);
    for (Index i = 0; i < 256; ++i) x(0, i) = double(i) / 255.0;
    const auto p = calibrate_minmax(x, 8, Granularity::PerTensor);
    EXPECT_NEAR(p.scales[0], 1.0 / 255.0, 1e-15);
    EXPECT_EQ(p.zero_points[0], 0);
}

TEST(CalibrateMinmax, ConstantRoundTripsExactly) {
    const Matrix x = Matrix::Constant(3, 4, 5.0);
    for (auto g : {Granularity::PerTensor, Granularity::PerChannel, Granularity::PerToken}) {
        EXPECT_EQ(fake_quant(x, calibrate_minmax(x, 8, g)), x);
    }
}

TEST(CalibrateMinmax, SymmetricRangeCentresZeroPoint) {
    Matrix x(1, 2);
    x << -1, 1;
    const auto p = calibrate_minmax(x, 4, Granularity::PerTensor);
    EXPECT_NEAR(p.zero_points[0], 8, 1);
    EXPECT_NEAR(p.scales[0], 2.0 / 15.0, 1e-15);
}

TEST(CalibrateMinmax, ZeroGroupGetsFloorScale) {
    const auto p = calibrate_minmax(Matrix::Zero(2, 2), 8, Granularity::PerTensor);
    EXPECT_EQ(p.scales[0], kMinScale);
}

TEST(CalibrateMinmax, GroupCounts) {
    const Matrix x = uniform(5, 3, -1, 1, 1);
    EXPECT_EQ(calibrate_minmax(x, 8, Granularity::PerTensor).scales.size(), 1u);
    EXPECT_EQ(calibrate_minmax(x, 8, Granularity::PerChannel).scales.size(), 3u);
    EXPECT_EQ(calibrate_minmax(x, 8, Granularity::PerToken).scales.size(), 5u);
}

TEST(Quantize, Examples) {
    EXPECT_EQ(quantize(one(0.0), scalar_params(4, 1.0, 8)).codes(0, 0), 8);
    EXPECT_EQ(quantize(one(0.34), scalar_params(4, 0.1, 0)).codes(0, 0), 3);
    EXPECT_EQ(quantize(one(100.0), scalar_params(4, 0.1, 0)).codes(0, 0), 15);
    EXPECT_EQ(quantize(one(-100.0), scalar_params(4, 0.1, 0)).codes(0, 0), 0);
}

TEST(Quantize, ShapeMismatch) {
    QuantParams p = scalar_params(4, 0.1, 0);
    p.granularity = Granularity::PerChannel;
    EXPECT_THROW(quantize(Matrix::Zero(2, 3), p), ShapeError);
}

TEST(Quantize, BadParams) {
    EXPECT_THROW(quantize(one(0), scalar_params(1, 0.1, 0)), ParameterError);
    EXPECT_THROW(quantize(one(0), scalar_params(4, 0.0, 0)), ParameterError);
    EXPECT_THROW(quantize(one(0), scalar_params(4, 0.1, 16)), ParameterError);
}

TEST(Dequantize, Examples) {
    IntMatrix q{IntCodes::Constant(1, 1, 8), scalar_params(4, 1.0, 8)};
    EXPECT_EQ(dequantize(q)(0, 0), 0.0);
    q = {IntCodes::Constant(1, 1, 3), scalar_params(4, 0.1, 0)};
    EXPECT_NEAR(dequantize(q)(0, 0), 0.3, 1e-15);
}

TEST(FakeQuant, GridPointsAreFixed) {
    const auto p = scalar_params(4, 0.25, 3);
    Matrix grid(1, 16);
    for (int c = 0; c < 16; ++c) grid(0, c) = 0.25 * (c - 3);
    EXPECT_EQ(fake_quant(grid, p), grid);
    EXPECT_EQ(recon_loss(grid, p), 0.0);
}

TEST(FakeQuant, ComposedExample) {
    const auto p = scalar_params(4, 0.1, 0);
    EXPECT_NEAR(fake_quant(one(0.34), p)(0, 0), 0.3, 1e-15);
    EXPECT_NEAR(recon_loss(one(0.34), p), 0.0016, 1e-12);
}

TEST(FakeQuant, Idempotent) {
    const Matrix x = uniform(8, 8, -3, 3, 2);
    const auto p = calibrate_minmax(x, 4, Granularity::PerToken);
    const Matrix once = fake_quant(x, p);
    EXPECT_LE((fake_quant(once, p) - once).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FakeQuant, UnclippedErrorWithinHalfStep) {
    for (int bits : {4, 6, 8}) {
        for (auto g : {Granularity::PerTensor, Granularity::PerChannel, Granularity::PerToken}) {
            const Matrix x = uniform(40, 25, -2, 5, 100 + bits);
            auto p = calibrate_minmax(x, bits, g);
            for (auto& s : p.scales) s *= 0.8;  // force some clipping
            const Matrix fq = fake_quant(x, p);
            for (Index i = 0; i < x.rows(); ++i) {
                for (Index j = 0; j < x.cols(); ++j) {
                    const Index grp = p.group_of(i, j);
                    if (!is_unclipped(x(i, j), p.scales[grp], p.zero_points[grp], p.qmax())) continue;
                    EXPECT_LE(std::abs(x(i, j) - fq(i, j)), p.scales[grp] / 2 + 1e-12);
                }
            }
        }
    }
}

TEST(Granularity, StringRoundTrip) {
    for (auto g : {Granularity::PerTensor, Granularity::PerChannel, Granularity::PerToken}) {
        EXPECT_EQ(granularity_from_string(to_string(g)), g);
    }
    EXPECT_THROW(granularity_from_string("per_banana"), ParameterError);
}

TEST(QkNoise, HighPrecisionLimit) {
    const Matrix q = uniform(32, 8, -1, 1, 3), k = uniform(32, 8, -1, 1, 4);
    const auto n = qk_noise(q, k, calibrate_minmax(q, 16, Granularity::PerToken),
                            calibrate_minmax(k, 16, Granularity::PerToken));
    EXPECT_LT(n.epsilon.norm(), 1e-3 * (q * k.transpose()).norm());
}

TEST(QkNoise, GridInputsGiveZero) {
    const auto p = scalar_params(4, 0.5, 8);
    const Matrix q = fake_quant(uniform(6, 3, -3, 3, 5), p);
    const Matrix k = fake_quant(uniform(6, 3, -3, 3, 6), p);
    const auto n = qk_noise(q, k, p, p);
    EXPECT_EQ(n.epsilon.norm(), 0.0);
}

TEST(QkNoise, BoundHoldsOnHundredSeeds) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    for (int seed = 0; seed < 100; ++seed) {
        Matrix q(32, 8), k(32, 8);
        for (Index i = 0; i < q.size(); ++i) {
            q.data()[i] = nd(rng);
            k.data()[i] = nd(rng);
        }
        const auto n = qk_noise(q, k, calibrate_minmax(q, 4, Granularity::PerToken),
                                calibrate_minmax(k, 4, Granularity::PerToken));
        EXPECT_LE(n.epsilon.norm(), n.delta_bound);
    }
}

TEST(QkNoise, ShapeMismatch) {
    const auto p = scalar_params(8, 0.1, 128);
    EXPECT_THROW(qk_noise(Matrix::Zero(4, 3), Matrix::Zero(4, 2), p, p), ShapeError);
}

}  // namespace
}  // namespace qsl
