// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "qsl/block.hpp"

namespace qsl {

/// Weights and resolutions of the two attention-distillation terms.
struct DistillConfig {
    Index stride = 8;     // 1-D pooling stride for the global term
    Index salient_k = 16;  // number of salient queries for the local term
    double lambda_global = 1e-4;
    double lambda_local = 1e-4;

    /// Desk-scale defaults for sequence length L: stride 8, k = max(4, L/4).
    static DistillConfig defaults_for(Index length);
    void validate(Index length) const;
};

/// Per-token received attention (column sums of a row-stochastic map).
struct SaliencyProfile {
    Vector s;
    IndexSet order;  // descending, lower index first on ties
};

SaliencyProfile token_saliency(const Matrix& a);

/// Smallest n such that the n most salient tokens hold at least mass * L.
Index heavy_tail_stats(const SaliencyProfile& p, double mass);

/// Row-softmax of the scaled product of row-pooled Q and K.
Matrix global_attention(const Matrix& q, const Matrix& k, Index stride);

/// Attention rows of the selected queries against every key.
Matrix local_attention(const Matrix& q, const Matrix& k, const IndexSet& idx);

double global_loss(const Matrix& fp_q, const Matrix& fp_k, const Matrix& q_q, const Matrix& q_k, Index stride);
double local_loss(const Matrix& fp_q, const Matrix& fp_k, const Matrix& q_q, const Matrix& q_k, const IndexSet& idx);

struct DistillTerms {
    double l_quant = 0.0;
    double l_global = 0.0;
    double l_local = 0.0;
    double total = 0.0;
};

/// Batch-mean of L_quant + lambda_global L_global + lambda_local L_local,
/// where L_quant is the block-output MSE. `quant` null runs the student in
/// full precision. Salient queries come from the teacher's attention map.
DistillTerms distill_objective(const ToyBlock& teacher, const ToyBlock& student, const BlockQuantParams* quant,
                               const DistillConfig& cfg, const std::vector<Matrix>& batch,
                               const SparsityMask* mask = nullptr);

/// Calibration objective with the teacher side (outputs, maps, salient
/// indices) computed once and frozen.
class DistillProblem {
public:
    DistillProblem(ToyBlock block, std::vector<Matrix> batch, DistillConfig cfg, const SparsityMask* mask);

    DistillTerms evaluate(const BlockQuantParams& quant) const;
    /// Gradient of `total` w.r.t. quant.flatten() under `rule`.
    DistillTerms evaluate_with_gradient(const BlockQuantParams& quant, Vector& grad,
                                        GradRule rule = GradRule::FrozenCode) const;
    /// Combined code fingerprint over the batch.
    std::size_t fingerprint(const BlockQuantParams& quant) const;

    const ToyBlock& block() const { return block_; }
    const DistillConfig& config() const { return cfg_; }
    const std::vector<IndexSet>& salient() const { return salient_; }
    std::size_t samples() const { return batch_.size(); }

private:
    DistillTerms run(const BlockQuantParams& quant, Vector* grad, GradRule rule) const;

    ToyBlock block_;
    std::vector<Matrix> batch_;
    DistillConfig cfg_;
    std::optional<SparsityMask> mask_;
    std::vector<Matrix> y_fp_, global_fp_, local_fp_;
    std::vector<IndexSet> salient_;
};

}  // namespace qsl
