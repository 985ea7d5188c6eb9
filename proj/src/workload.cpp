// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/workload.hpp"

#include <random>
#include <string>

namespace qsl {

std::string_view to_string(NoiseMode m) {
    switch (m) {
        case NoiseMode::None: return "none";
        case NoiseMode::QuantOnly: return "quant_only";
        case NoiseMode::QuantPlusDrift: return "quant_plus_drift";
    }
    return "?";
}

NoiseMode noise_mode_from_string(std::string_view s) {
    if (s == "none") return NoiseMode::None;
    if (s == "quant_only") return NoiseMode::QuantOnly;
    if (s == "quant_plus_drift") return NoiseMode::QuantPlusDrift;
    throw ParameterError("unknown noise mode '" + std::string(s) + "'");
}

void WorkloadSpec::validate() const {
    if (L < 4) throw ParameterError("workload: L must be >= 4");
    if (d < 2) throw ParameterError("workload: d must be >= 2");
    if (T < 3) throw ParameterError("workload: T must be >= 3");
    if (!(rho >= 0.0 && rho < 1.0)) throw ParameterError("workload: rho must lie in [0, 1)");
    if (!(drift >= 0.0) || !std::isfinite(drift)) throw ParameterError("workload: drift must be finite and >= 0");
}

std::vector<Matrix> ar1_sequence(Index length, Index dim, Index steps, double rho, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    auto gaussian = [&] {
        Matrix m(length, dim);
        for (Index j = 0; j < dim; ++j)
            for (Index i = 0; i < length; ++i) m(i, j) = n01(rng);
        return m;
    };
    const double innov = std::sqrt(1.0 - rho * rho);
    std::vector<Matrix> xs;
    xs.reserve(static_cast<std::size_t>(steps));
    xs.push_back(gaussian());
    for (Index t = 1; t < steps; ++t) xs.push_back(rho * xs.back() + innov * gaussian());
    return xs;
}

std::vector<Matrix> generate_workload(const WorkloadSpec& spec) {
    spec.validate();
    return ar1_sequence(spec.L, spec.d, spec.T, spec.rho, spec.seed);
}

ToyBlock block_at(const ToyBlock& base, const WorkloadSpec& spec, Index t) {
    if (spec.noise_mode != NoiseMode::QuantPlusDrift || spec.drift == 0.0) return base;
    if (t < 0 || t >= spec.T) throw ParameterError("block_at: step " + std::to_string(t) + " out of range");
    std::mt19937_64 rng(spec.seed ^ 0xd1b54a32d192ed03ULL);
    std::normal_distribution<double> n01;
    auto unit = [&](Index n) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) v(i) = n01(rng);
        return Vector(v / v.norm());
    };
    const double frac = double(t) / double(spec.T - 1) * spec.drift;
    ToyBlock b = base;
    for (Matrix* w : {&b.Wq, &b.Wk, &b.Wv}) {
        const Vector u = unit(w->rows());
        const Vector v = unit(w->cols());
        *w += (frac * spectral_norm(*w)) * u * v.transpose();
    }
    return b;
}

}  // namespace qsl
