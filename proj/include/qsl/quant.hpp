// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qsl/numerics.hpp"

namespace qsl {

/// How (scale, zero_point) groups tile a matrix: one group, one per column,
/// or one per row.
enum class Granularity { PerTensor, PerChannel, PerToken };

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view s);

inline constexpr double kMinScale = 1e-12;

/// Uniform affine quantizer parameters, one (scale, zero_point) per group.
struct QuantParams {
    int bits = 8;
    Granularity granularity = Granularity::PerTensor;
    std::vector<double> scales;
    std::vector<int> zero_points;

    int qmax() const { return (1 << bits) - 1; }
    /// Group count implied by the granularity for a rows x cols tensor.
    static Index group_count(Granularity g, Index rows, Index cols);
    Index group_of(Index row, Index col) const {
        switch (granularity) {
            case Granularity::PerChannel: return col;
            case Granularity::PerToken: return row;
            default: return 0;
        }
    }
    /// Throws ParameterError on bad values, ShapeError if the group count
    /// does not fit a rows x cols tensor.
    void validate(Index rows, Index cols) const;
    double max_scale() const;
};

using IntCodes = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

struct IntMatrix {
    IntCodes codes;
    QuantParams params;
};

/// Min-max initialisation. The range always contains zero, so zero is exactly
/// representable and an all-zero group gets the floor scale.
QuantParams calibrate_minmax(const Matrix& x, int bits, Granularity granularity);

IntMatrix quantize(const Matrix& x, const QuantParams& p);
Matrix dequantize(const IntMatrix& q);
Matrix fake_quant(const Matrix& x, const QuantParams& p);

/// Sum of squared entries of x - fake_quant(x, p).
double recon_loss(const Matrix& x, const QuantParams& p);

/// True when round(x/s) + z lands inside [0, qmax] without clipping.
bool is_unclipped(double x, double scale, int zero_point, int qmax);

/// Perturbation of the QK^T product caused by fake-quantising both operands.
struct QkNoise {
    Matrix epsilon;      // Q'K'^T - QK^T
    double delta_bound;  // analytic upper bound on ||epsilon||_F
};

QkNoise qk_noise(const Matrix& q, const Matrix& k, const QuantParams& pq, const QuantParams& pk);

}  // namespace qsl
