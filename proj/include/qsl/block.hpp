// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "qsl/attention.hpp"
#include "qsl/quant.hpp"

namespace qsl {

/// Single-head attention block: Q = X Wq^T, K = X Wk^T, V = X Wv^T,
/// Y = Attn(Q, K, V) Wo^T. The optional H is a fixed orthogonal rotation
/// applied as X <- X H^T, W <- W H^T, which leaves the exact product unchanged.
struct ToyBlock {
    Matrix Wq, Wk, Wv;  // d_out x d_in
    Matrix Wo;          // d_out x d_out
    std::optional<Matrix> H;

    Index d_in() const { return Wq.cols(); }
    Index d_out() const { return Wq.rows(); }
    void validate() const;
};

/// Gaussian weights with std 1/sqrt(fan_in).
ToyBlock make_toy_block(Index d_in, Index d_out, std::uint64_t seed, bool rotate = false);

/// Bit-widths and activation granularity. Weights are always quantized per
/// output channel.
struct QuantSettings {
    int wbits = 4;
    int abits = 8;
    Granularity act_granularity = Granularity::PerToken;
};

enum class Proj : int { Q = 0, K = 1, V = 2, O = 3 };

/// Learnable quantisation state of a block. Step sizes are stored as
/// multipliers of the min-max step of the tensor they act on, so 1 means
/// plain min-max calibration. Activation step sizes are recomputed per call
/// from the live tensor (dynamic quantisation) and scaled by the clip factors.
struct BlockQuantParams {
    QuantSettings settings;
    Vector smoothing;                   // d_in channel factors: X <- X/c, W <- W c
    std::array<Vector, 4> weight_step;  // per output channel, indexed by Proj
    double act_in_clip = 1.0;
    double act_out_clip = 1.0;

    static BlockQuantParams initial(const ToyBlock& b, QuantSettings s);

    Index size() const;
    /// Layout: smoothing, weight_step[Q..O], act_in_clip, act_out_clip.
    Vector flatten() const;
    void assign(const Vector& flat);
    /// Index ranges inside the flattened vector.
    Index smoothing_count() const { return smoothing.size(); }
};

/// Min-max fake quantizer with groups along rows (or one group), carrying what
/// the frozen-code backward pass needs.
struct MinMaxQuantState {
    bool per_row = true;
    int qmax = 255;
    IntCodes codes;
    std::vector<double> scale, range, mult;
    std::vector<int> zero_point;
    std::vector<Index> hi_row, hi_col, lo_row, lo_col;
    std::vector<bool> has_hi, has_lo, floored;
    Matrix dequant;

    /// Per-group resolved parameters in QuantParams form.
    QuantParams params(int bits) const;
};

/// `mults` holds one multiplier per group (rows when per_row, else one).
MinMaxQuantState minmax_fake_quant(const Matrix& u, int bits, bool per_row, const Vector& mults);

/// How rounding enters the chain rule.
///
/// FrozenCode holds integer codes and zero points constant: d(out)/d(scale) =
/// code - zero_point and the input sees gradient only through the group
/// extremes that set the range. This is the exact derivative on every
/// code-constant piece, so it agrees with finite differences there.
///
/// StraightThrough treats round() as the identity: unclipped entries pass
/// the gradient to the input unchanged and contribute round(u/s) - u/s to the
/// scale; clipped entries contribute code - zero_point and block the input.
/// It sees past the tiny code-constant pieces and is what the optimizer uses.
enum class GradRule { FrozenCode, StraightThrough };

struct MinMaxQuantGrad {
    Vector d_mult;  // one per group
    Matrix d_input;
};
MinMaxQuantGrad minmax_fake_quant_backward(const MinMaxQuantState& st, const Matrix& u, const Matrix& grad_out,
                                           GradRule rule = GradRule::FrozenCode);

/// Everything the backward pass needs from one quantized forward call.
struct BlockTape {
    Matrix x_rot;                         // X diag(1/c) H^T
    MinMaxQuantState x_q;                 // dynamic activation quantizer
    std::array<Matrix, 3> w_eff;          // W diag(c) H^T for Q, K, V
    std::array<MinMaxQuantState, 4> w_q;  // weight quantizers, indexed by Proj
    Matrix Q, K, V, A, O;
    MinMaxQuantState o_q;
    Matrix Y;
    double scale = 1.0;

    /// Hash over every integer code and zero point; equal fingerprints mean
    /// the forward map is smooth between the two evaluations.
    std::size_t fingerprint() const;
};

/// Full-precision or quantized block forward. With no quant params the
/// rotation (if any) is still applied, which is a no-op up to rounding.
Matrix forward_block(const ToyBlock& b, const Matrix& x, const SparsityMask* mask = nullptr,
                     const BlockQuantParams* quant = nullptr);

/// Unquantized forward returning Q, K, V, A, O, Y (in x_rot/Q/.../Y; quantizer fields empty).
BlockTape forward_block_fp(const ToyBlock& b, const Matrix& x, const SparsityMask* mask = nullptr);

/// Quantized forward keeping the tape.
BlockTape forward_block_quant(const ToyBlock& b, const Matrix& x, const SparsityMask* mask,
                              const BlockQuantParams& quant);

/// Gradient of a scalar loss w.r.t. the flattened BlockQuantParams, given
/// dL/dY and optional extra gradients on Q and K (attention-map losses).
Vector block_backward(const ToyBlock& b, const Matrix& x, const BlockQuantParams& quant, const BlockTape& tape,
                      const Matrix& grad_y, const Matrix* grad_q = nullptr, const Matrix* grad_k = nullptr,
                      GradRule rule = GradRule::FrozenCode);

}  // namespace qsl
