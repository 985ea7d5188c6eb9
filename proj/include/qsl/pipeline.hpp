// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "qsl/config.hpp"
#include "qsl/ssar.hpp"

namespace qsl {

/// Per-step tensors at the cache level: the full-precision dense oracle, the
/// full-precision sparse path and the quantized sparse path.
struct TimestepTrace {
    CacheLevel level = CacheLevel::Output;
    double density = 1.0;
    int wbits = 0;
    int abits = 0;
    std::vector<Matrix> a_full, a_s, a_sq;
    AttentionShiftReport shift;  // decomposition at step 0

    Index steps() const { return static_cast<Index>(a_full.size()); }
    /// A_full - A_sq for every step.
    std::vector<Matrix> residuals() const;
};

/// `quant` may be null (or the workload noise mode None) for an unquantized
/// sparse path.
TimestepTrace build_trace(const ToyBlock& base, const BlockQuantParams* quant, const WorkloadSpec& spec,
                          const std::vector<Matrix>& inputs, const SparsityMask& mask, CacheLevel level);

/// 10 log10(range(ref)^2 / MSE). +inf when est == ref; MetricUndefined for a
/// constant reference.
double matrix_psnr(const Matrix& ref, const Matrix& est);

struct RunOptions {
    std::vector<CacheMode> modes{CacheMode::None, CacheMode::First, CacheMode::Second, CacheMode::Ssar};
    Index rank = 16;
    bool freeze_second_order = false;
    bool keep_outputs = false;
};

struct ModeSeries {
    CacheMode mode = CacheMode::None;
    std::vector<Index> steps;  // corrected steps
    std::vector<double> frob_err;
    std::vector<double> psnr;
    double mean_frob = 0.0;
    double mean_psnr = 0.0;  // over finite entries
    double max_row_sum_deviation = 0.0;  // map level only
    std::vector<Matrix> outputs;  // every step, when requested
};

struct RunReport {
    std::vector<ModeSeries> series;
    RefreshPlan plan;
    double attention_cost_fraction = 0.0;
    bool refresh_exact = true;
    /// Largest deviation between each error and its residual-identity form.
    double max_identity_gap = 0.0;
    Index first_cache_elements = 0;
    Index ssar_cache_elements = 0;
    AttentionShiftReport shift;

    const ModeSeries& get(CacheMode m) const;
};

/// Replays the trace under the refresh plan: full steps emit A_full and
/// rebuild the caches, the rest apply each mode's correction to A_sq.
RunReport run_pipeline(const TimestepTrace& trace, const RefreshPlan& plan, const RunOptions& opts);

/// Pieces assembled from a config.
ToyBlock block_from_config(const Config& c);
std::vector<Matrix> calibration_data(const Config& c);
/// Fixed mask for the whole run; topk is built from the full-precision map
/// of the first workload step.
SparsityMask mask_from_config(const Config& c, const ToyBlock& block, const Matrix& x0);

CalibResult calibrate_from_config(const Config& c);

struct RunArtifacts {
    TimestepTrace trace;
    RunReport report;
    SparsityMask mask;
};
RunArtifacts run_from_config(const Config& c, const BlockQuantParams& quant, bool keep_outputs = false);

}  // namespace qsl
