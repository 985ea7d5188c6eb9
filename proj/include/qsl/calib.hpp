// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

#include "qsl/msad.hpp"

namespace qsl {

enum class LrDecay { Cosine, Constant };
/// Momentum is heavy-ball SGD (beta 0.9); AdamW uses beta (0.9, 0.999).
/// Neither applies weight decay.
enum class Optimizer { Momentum, AdamW };

/// Optimiser schedule. Each epoch takes one full-batch step over all samples.
struct CalibSchedule {
    int epochs = 15;
    int samples = 20;
    double lr_scale = 5e-3;   // channel-wise smoothing factors
    double lr_affine = 5e-2;  // quantizer step-size multipliers
    LrDecay lr_decay = LrDecay::Cosine;
    GradRule grad_rule = GradRule::StraightThrough;
    Optimizer optimizer = Optimizer::Momentum;

    void validate() const;
};

struct CalibResult {
    BlockQuantParams params;
    /// Weight quantizers resolved at the returned params, indexed by Proj.
    /// Groups are output channels (rows of the effective weight).
    std::array<QuantParams, 4> weight_params;
    std::vector<double> loss_trace;         // full-batch objective after each epoch
    std::vector<DistillTerms> term_trace;   // same, split by term
    DistillTerms initial;
    DistillTerms final_report;              // at the returned params
    int best_epoch = -1;                    // -1 means the initial params were kept
};

/// Gradient of the distillation objective w.r.t. every learnable scale. The
/// default holds integer codes fixed, which is the exact derivative on each
/// code-constant piece.
Vector ste_gradient(const DistillProblem& problem, const BlockQuantParams& params,
                    GradRule rule = GradRule::FrozenCode);

/// d/ds_g of recon_loss(x, p) for every group under the same convention.
Vector recon_loss_scale_gradient(const Matrix& x, const QuantParams& p);

/// Block-wise calibration: min-max initialisation, then AdamW (no weight
/// decay) over the distillation objective. Returns the best full-batch
/// parameters seen, so the final objective never exceeds the initial one.
/// Throws CalibrationDivergence when the objective exceeds 10x its initial
/// value for three consecutive epochs.
CalibResult calibrate_block(const ToyBlock& fp, const CalibSchedule& sched, const DistillConfig& cfg,
                            const std::vector<Matrix>& data, const SparsityMask* mask, QuantSettings settings);

/// Weight quantizers of `params` applied to `block`.
std::array<QuantParams, 4> resolve_weight_params(const ToyBlock& block, const BlockQuantParams& params);

}  // namespace qsl
