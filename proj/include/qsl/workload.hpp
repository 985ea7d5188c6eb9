// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "qsl/block.hpp"

namespace qsl {

/// None runs the sparse path unquantized; QuantOnly quantizes it;
/// QuantPlusDrift also lets the Q/K/V weights drift along a fixed rank-1
/// direction over the trajectory.
enum class NoiseMode { None, QuantOnly, QuantPlusDrift };

std::string_view to_string(NoiseMode m);
NoiseMode noise_mode_from_string(std::string_view s);

struct WorkloadSpec {
    Index L = 64;
    Index d = 16;
    Index T = 50;
    double rho = 0.95;
    std::uint64_t seed = 0;
    NoiseMode noise_mode = NoiseMode::QuantOnly;
    /// Total relative weight change over the trajectory, as a fraction of
    /// each projection's spectral norm.
    double drift = 0.5;

    void validate() const;
};

/// X_0 ~ N(0, 1), X_t = rho X_{t-1} + sqrt(1 - rho^2) xi_t, each L x d.
std::vector<Matrix> generate_workload(const WorkloadSpec& spec);

/// Same process with an explicit length and seed (calibration data).
std::vector<Matrix> ar1_sequence(Index length, Index dim, Index steps, double rho, std::uint64_t seed);

/// Block seen at step t. Identity unless the workload drifts: then
/// W_p(t) = W_p + (t / (T - 1)) * drift * ||W_p||_2 * u_p v_p^T for p in {Q, K, V}
/// with seeded unit vectors u_p, v_p.
ToyBlock block_at(const ToyBlock& base, const WorkloadSpec& spec, Index t);

}  // namespace qsl
