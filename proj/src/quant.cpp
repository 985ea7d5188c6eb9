// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/quant.hpp"

#include <cmath>

namespace qsl {

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::PerChannel: return "per_channel";
        case Granularity::PerToken: return "per_token";
        default: return "per_tensor";
    }
}

Granularity granularity_from_string(std::string_view s) {
    if (s == "per_tensor") return Granularity::PerTensor;
    if (s == "per_channel") return Granularity::PerChannel;
    if (s == "per_token") return Granularity::PerToken;
    throw ParameterError("unknown granularity '" + std::string(s) + "'");
}

Index QuantParams::group_count(Granularity g, Index rows, Index cols) {
    switch (g) {
        case Granularity::PerChannel: return cols;
        case Granularity::PerToken: return rows;
        default: return 1;
    }
}

void QuantParams::validate(Index rows, Index cols) const {
    if (bits < 2 || bits > 16) throw ParameterError("bits must lie in [2, 16], got " + std::to_string(bits));
    if (scales.size() != zero_points.size()) throw ParameterError("scales/zero_points size mismatch");
    const auto groups = static_cast<std::size_t>(group_count(granularity, rows, cols));
    if (scales.size() != groups) {
        throw ShapeError("quant params carry " + std::to_string(scales.size()) + " groups, " +
                         std::string(to_string(granularity)) + " on " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " needs " + std::to_string(groups));
    }
    for (std::size_t g = 0; g < scales.size(); ++g) {
        if (!(scales[g] > 0.0) || !std::isfinite(scales[g])) throw ParameterError("scale must be positive and finite");
        if (zero_points[g] < 0 || zero_points[g] > qmax()) throw ParameterError("zero_point outside [0, 2^bits - 1]");
    }
}

double QuantParams::max_scale() const {
    double m = 0.0;
    for (double s : scales) m = std::max(m, s);
    return m;
}

namespace {

void check_bits(int bits) {
    if (bits < 2 || bits > 16) throw ParameterError("bits must lie in [2, 16], got " + std::to_string(bits));
}

std::int32_t code_of(double x, double scale, int zero_point, int qmax) {
    const double v = std::nearbyint(x / scale) + double(zero_point);
    return static_cast<std::int32_t>(std::clamp(v, 0.0, double(qmax)));
}

}  // namespace

QuantParams calibrate_minmax(const Matrix& x, int bits, Granularity granularity) {
    check_bits(bits);
    if (x.size() == 0) throw ParameterError("calibrate_minmax: empty tensor");
    QuantParams p;
    p.bits = bits;
    p.granularity = granularity;
    const Index groups = QuantParams::group_count(granularity, x.rows(), x.cols());
    std::vector<double> lo(static_cast<std::size_t>(groups), 0.0);
    std::vector<double> hi(static_cast<std::size_t>(groups), 0.0);
    for (Index j = 0; j < x.cols(); ++j) {
        for (Index i = 0; i < x.rows(); ++i) {
            const auto g = static_cast<std::size_t>(p.group_of(i, j));
            lo[g] = std::min(lo[g], x(i, j));
            hi[g] = std::max(hi[g], x(i, j));
        }
    }
    p.scales.resize(lo.size());
    p.zero_points.resize(lo.size());
    for (std::size_t g = 0; g < lo.size(); ++g) {
        const double s = std::max((hi[g] - lo[g]) / double(p.qmax()), kMinScale);
        p.scales[g] = s;
        p.zero_points[g] = static_cast<int>(std::clamp(std::nearbyint(-lo[g] / s), 0.0, double(p.qmax())));
    }
    return p;
}

IntMatrix quantize(const Matrix& x, const QuantParams& p) {
    p.validate(x.rows(), x.cols());
    IntMatrix q{IntCodes(x.rows(), x.cols()), p};
    const int qmax = p.qmax();
    for (Index j = 0; j < x.cols(); ++j) {
        for (Index i = 0; i < x.rows(); ++i) {
            const auto g = static_cast<std::size_t>(p.group_of(i, j));
            q.codes(i, j) = code_of(x(i, j), p.scales[g], p.zero_points[g], qmax);
        }
    }
    return q;
}

Matrix dequantize(const IntMatrix& q) {
    Matrix out(q.codes.rows(), q.codes.cols());
    for (Index j = 0; j < out.cols(); ++j) {
        for (Index i = 0; i < out.rows(); ++i) {
            const auto g = static_cast<std::size_t>(q.params.group_of(i, j));
            out(i, j) = q.params.scales[g] * double(q.codes(i, j) - q.params.zero_points[g]);
        }
    }
    return out;
}

Matrix fake_quant(const Matrix& x, const QuantParams& p) { return dequantize(quantize(x, p)); }

double recon_loss(const Matrix& x, const QuantParams& p) { return (x - fake_quant(x, p)).squaredNorm(); }

bool is_unclipped(double x, double scale, int zero_point, int qmax) {
    const double v = std::nearbyint(x / scale) + double(zero_point);
    return v >= 0.0 && v <= double(qmax);
}

QkNoise qk_noise(const Matrix& q, const Matrix& k, const QuantParams& pq, const QuantParams& pk) {
    if (q.cols() != k.cols()) {
        throw ShapeError("qk_noise: Q has " + std::to_string(q.cols()) + " columns, K has " +
                         std::to_string(k.cols()));
    }
    const Matrix qh = fake_quant(q, pq);
    const Matrix kh = fake_quant(k, pk);
    QkNoise out;
    out.epsilon = matmul(qh, kh.transpose()) - matmul(q, k.transpose());
    // Per-entry dequantisation error is at most s/2 on unclipped inputs.
    const double eq = std::sqrt(double(q.size())) * pq.max_scale() / 2.0;
    const double ek = std::sqrt(double(k.size())) * pk.max_scale() / 2.0;
    out.delta_bound = eq * spectral_norm(k) + spectral_norm(q) * ek + eq * ek;
    return out;
}

}  // namespace qsl
