// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/block.hpp"

#include <functional>
#include <random>
#include <string>

namespace qsl {

void ToyBlock::validate() const {
    const Index din = d_in();
    const Index dout = d_out();
    if (din < 1 || dout < 1) throw ShapeError("ToyBlock: empty projection");
    for (const Matrix* w : {&Wk, &Wv}) {
        if (w->rows() != dout || w->cols() != din) throw ShapeError("ToyBlock: Q/K/V projections differ in shape");
    }
    if (Wo.rows() != dout || Wo.cols() != dout) throw ShapeError("ToyBlock: Wo must be d_out x d_out");
    if (H) {
        if (H->rows() != din || H->cols() != din) throw ShapeError("ToyBlock: rotation must be d_in x d_in");
        const double err = (H->transpose() * *H - Matrix::Identity(din, din)).cwiseAbs().maxCoeff();
        if (err > 1e-8) throw ParameterError("ToyBlock: rotation is not orthogonal");
    }
}

ToyBlock make_toy_block(Index d_in, Index d_out, std::uint64_t seed, bool rotate) {
    if (d_in < 1 || d_out < 1) throw ParameterError("make_toy_block: dimensions must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](Index rows, Index cols) {
        Matrix m(rows, cols);
        const double sd = 1.0 / std::sqrt(double(cols));
        for (Index j = 0; j < cols; ++j)
            for (Index i = 0; i < rows; ++i) m(i, j) = sd * gauss(rng);
        return m;
    };
    ToyBlock b;
    b.Wq = draw(d_out, d_in);
    b.Wk = draw(d_out, d_in);
    b.Wv = draw(d_out, d_in);
    b.Wo = draw(d_out, d_out);
    if (rotate) b.H = random_orthogonal(d_in, seed ^ 0x9e3779b97f4a7c15ULL);
    return b;
}

BlockQuantParams BlockQuantParams::initial(const ToyBlock& b, QuantSettings s) {
    if (s.wbits < 2 || s.wbits > 16 || s.abits < 2 || s.abits > 16) throw ParameterError("bits must lie in [2, 16]");
    if (s.act_granularity == Granularity::PerChannel) {
        throw ParameterError("dynamic activation quantisation supports per_token or per_tensor");
    }
    BlockQuantParams p;
    p.settings = s;
    p.smoothing = Vector::Ones(b.d_in());
    for (auto& w : p.weight_step) w = Vector::Ones(b.d_out());
    return p;
}

Index BlockQuantParams::size() const {
    Index n = smoothing.size() + 2;
    for (const auto& w : weight_step) n += w.size();
    return n;
}

Vector BlockQuantParams::flatten() const {
    Vector v(size());
    Index at = 0;
    v.segment(at, smoothing.size()) = smoothing;
    at += smoothing.size();
    for (const auto& w : weight_step) {
        v.segment(at, w.size()) = w;
        at += w.size();
    }
    v(at++) = act_in_clip;
    v(at++) = act_out_clip;
    return v;
}

void BlockQuantParams::assign(const Vector& flat) {
    if (flat.size() != size()) throw ShapeError("BlockQuantParams::assign: size mismatch");
    Index at = 0;
    smoothing = flat.segment(at, smoothing.size());
    at += smoothing.size();
    for (auto& w : weight_step) {
        w = flat.segment(at, w.size());
        at += w.size();
    }
    act_in_clip = flat(at++);
    act_out_clip = flat(at++);
}

QuantParams MinMaxQuantState::params(int bits) const {
    QuantParams p;
    p.bits = bits;
    p.granularity = per_row ? Granularity::PerToken : Granularity::PerTensor;
    p.scales = scale;
    p.zero_points = zero_point;
    return p;
}

MinMaxQuantState minmax_fake_quant(const Matrix& u, int bits, bool per_row, const Vector& mults) {
    MinMaxQuantState st;
    st.per_row = per_row;
    st.qmax = (1 << bits) - 1;
    const Index groups = per_row ? u.rows() : 1;
    if (mults.size() != groups) throw ShapeError("minmax_fake_quant: multiplier count does not match groups");
    const auto ng = static_cast<std::size_t>(groups);
    st.scale.assign(ng, 0.0);
    st.range.assign(ng, 0.0);
    st.mult.assign(ng, 0.0);
    st.zero_point.assign(ng, 0);
    st.hi_row.assign(ng, 0);
    st.hi_col.assign(ng, 0);
    st.lo_row.assign(ng, 0);
    st.lo_col.assign(ng, 0);
    st.has_hi.assign(ng, false);
    st.has_lo.assign(ng, false);
    st.floored.assign(ng, false);

    std::vector<double> hi(ng, 0.0), lo(ng, 0.0);
    for (Index j = 0; j < u.cols(); ++j) {
        for (Index i = 0; i < u.rows(); ++i) {
            const auto g = static_cast<std::size_t>(per_row ? i : 0);
            const double v = u(i, j);
            if (v > hi[g]) {
                hi[g] = v;
                st.hi_row[g] = i;
                st.hi_col[g] = j;
                st.has_hi[g] = true;
            }
            if (v < lo[g]) {
                lo[g] = v;
                st.lo_row[g] = i;
                st.lo_col[g] = j;
                st.has_lo[g] = true;
            }
        }
    }
    for (std::size_t g = 0; g < ng; ++g) {
        st.mult[g] = mults(static_cast<Index>(g));
        if (!(st.mult[g] > 0.0)) throw ParameterError("quantizer step multiplier must be positive");
        st.range[g] = hi[g] - lo[g];
        const double s = st.mult[g] * st.range[g] / double(st.qmax);
        st.floored[g] = !(s > kMinScale);
        st.scale[g] = st.floored[g] ? kMinScale : s;
        st.zero_point[g] = static_cast<int>(std::clamp(std::nearbyint(-lo[g] / st.scale[g]), 0.0, double(st.qmax)));
    }
    st.codes.resize(u.rows(), u.cols());
    st.dequant.resize(u.rows(), u.cols());
    for (Index j = 0; j < u.cols(); ++j) {
        for (Index i = 0; i < u.rows(); ++i) {
            const auto g = static_cast<std::size_t>(per_row ? i : 0);
            const double c = std::clamp(std::nearbyint(u(i, j) / st.scale[g]) + st.zero_point[g], 0.0, double(st.qmax));
            st.codes(i, j) = static_cast<std::int32_t>(c);
            st.dequant(i, j) = st.scale[g] * (c - st.zero_point[g]);
        }
    }
    return st;
}

MinMaxQuantGrad minmax_fake_quant_backward(const MinMaxQuantState& st, const Matrix& u, const Matrix& grad_out,
                                           GradRule rule) {
    const auto ng = st.scale.size();
    MinMaxQuantGrad g;
    g.d_mult = Vector::Zero(static_cast<Index>(ng));
    g.d_input = Matrix::Zero(u.rows(), u.cols());
    std::vector<double> d_scale(ng, 0.0);
    for (Index j = 0; j < u.cols(); ++j) {
        for (Index i = 0; i < u.rows(); ++i) {
            const auto grp = static_cast<std::size_t>(st.per_row ? i : 0);
            const double code = double(st.codes(i, j) - st.zero_point[grp]);
            if (rule == GradRule::StraightThrough) {
                const double raw = std::nearbyint(u(i, j) / st.scale[grp]) + st.zero_point[grp];
                if (raw >= 0.0 && raw <= double(st.qmax)) {
                    d_scale[grp] += grad_out(i, j) * (code - u(i, j) / st.scale[grp]);
                    g.d_input(i, j) += grad_out(i, j);
                    continue;
                }
            }
            d_scale[grp] += grad_out(i, j) * code;
        }
    }
    for (std::size_t grp = 0; grp < ng; ++grp) {
        if (st.floored[grp]) continue;
        const double q = double(st.qmax);
        g.d_mult(static_cast<Index>(grp)) = d_scale[grp] * st.range[grp] / q;
        const double d_range = d_scale[grp] * st.mult[grp] / q;
        if (st.has_hi[grp]) g.d_input(st.hi_row[grp], st.hi_col[grp]) += d_range;
        if (st.has_lo[grp]) g.d_input(st.lo_row[grp], st.lo_col[grp]) -= d_range;
    }
    return g;
}

std::size_t BlockTape::fingerprint() const {
    std::size_t h = 0;
    auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2); };
    auto add = [&](const MinMaxQuantState& st) {
        for (Index i = 0; i < st.codes.size(); ++i) mix(std::hash<std::int32_t>{}(st.codes.data()[i]));
        for (int z : st.zero_point) mix(std::hash<int>{}(z));
        for (bool f : st.floored) mix(f ? 1u : 2u);
    };
    add(x_q);
    for (const auto& w : w_q) add(w);
    add(o_q);
    return h;
}

namespace {

Matrix masked_softmax(const Matrix& logits_in, const SparsityMask* mask) {
    if (!mask) return row_softmax(logits_in);
    if (mask->length() != logits_in.rows()) throw ShapeError("forward_block: mask size does not match sequence length");
    Matrix logits = logits_in;
    for (Index j = 0; j < logits.cols(); ++j)
        for (Index i = 0; i < logits.rows(); ++i)
            if (!mask->keeps(i, j)) logits(i, j) = masked_logit();
    return row_softmax(logits);
}

void check_input(const ToyBlock& b, const Matrix& x) {
    b.validate();
    if (x.cols() != b.d_in() || x.rows() < 1) {
        throw ShapeError("forward_block: input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                         ", block expects d_in=" + std::to_string(b.d_in()));
    }
}

Vector act_mults(const Matrix& u, const QuantSettings& s, double clip) {
    return Vector::Constant(s.act_granularity == Granularity::PerToken ? u.rows() : 1, clip);
}

}  // namespace

BlockTape forward_block_fp(const ToyBlock& b, const Matrix& x, const SparsityMask* mask) {
    check_input(b, x);
    BlockTape t;
    t.scale = 1.0 / std::sqrt(double(b.d_out()));
    t.x_rot = b.H ? Matrix(x * b.H->transpose()) : x;
    auto eff = [&](const Matrix& w) { return b.H ? Matrix(w * b.H->transpose()) : w; };
    t.w_eff = {eff(b.Wq), eff(b.Wk), eff(b.Wv)};
    t.Q = matmul(t.x_rot, t.w_eff[0].transpose());
    t.K = matmul(t.x_rot, t.w_eff[1].transpose());
    t.V = matmul(t.x_rot, t.w_eff[2].transpose());
    t.A = masked_softmax(matmul(t.Q, t.K.transpose()) * t.scale, mask);
    t.O = matmul(t.A, t.V);
    t.Y = matmul(t.O, b.Wo.transpose());
    return t;
}

BlockTape forward_block_quant(const ToyBlock& b, const Matrix& x, const SparsityMask* mask,
                              const BlockQuantParams& quant) {
    check_input(b, x);
    if (quant.smoothing.size() != b.d_in()) throw ShapeError("forward_block: smoothing size does not match d_in");
    for (const auto& w : quant.weight_step) {
        if (w.size() != b.d_out()) throw ShapeError("forward_block: weight step count does not match d_out");
    }
    const QuantSettings& s = quant.settings;
    BlockTape t;
    t.scale = 1.0 / std::sqrt(double(b.d_out()));

    const Vector inv_c = quant.smoothing.cwiseInverse();
    Matrix xs = x * inv_c.asDiagonal();
    t.x_rot = b.H ? Matrix(xs * b.H->transpose()) : xs;
    auto eff = [&](const Matrix& w) {
        Matrix wc = w * quant.smoothing.asDiagonal();
        return b.H ? Matrix(wc * b.H->transpose()) : wc;
    };
    t.w_eff = {eff(b.Wq), eff(b.Wk), eff(b.Wv)};

    t.x_q = minmax_fake_quant(t.x_rot, s.abits, s.act_granularity == Granularity::PerToken,
                              act_mults(t.x_rot, s, quant.act_in_clip));
    for (int p = 0; p < 3; ++p) {
        t.w_q[p] = minmax_fake_quant(t.w_eff[p], s.wbits, true, quant.weight_step[p]);
    }
    t.w_q[3] = minmax_fake_quant(b.Wo, s.wbits, true, quant.weight_step[3]);

    t.Q = matmul(t.x_q.dequant, t.w_q[0].dequant.transpose());
    t.K = matmul(t.x_q.dequant, t.w_q[1].dequant.transpose());
    t.V = matmul(t.x_q.dequant, t.w_q[2].dequant.transpose());
    t.A = masked_softmax(matmul(t.Q, t.K.transpose()) * t.scale, mask);
    t.O = matmul(t.A, t.V);
    t.o_q = minmax_fake_quant(t.O, s.abits, s.act_granularity == Granularity::PerToken,
                              act_mults(t.O, s, quant.act_out_clip));
    t.Y = matmul(t.o_q.dequant, t.w_q[3].dequant.transpose());
    return t;
}

Matrix forward_block(const ToyBlock& b, const Matrix& x, const SparsityMask* mask, const BlockQuantParams* quant) {
    return quant ? forward_block_quant(b, x, mask, *quant).Y : forward_block_fp(b, x, mask).Y;
}

Vector block_backward(const ToyBlock& b, const Matrix& x, const BlockQuantParams& quant, const BlockTape& t,
                      const Matrix& grad_y, const Matrix* grad_q, const Matrix* grad_k, GradRule rule) {
    const Index din = b.d_in();
    const Index dout = b.d_out();
    Vector grad = Vector::Zero(quant.size());
    const Index at_w = din;
    const Index at_clip = din + 4 * dout;

    // Y = Oq Wo_q^T
    const Matrix d_wo = grad_y.transpose() * t.o_q.dequant;
    grad.segment(at_w + 3 * dout, dout) = minmax_fake_quant_backward(t.w_q[3], b.Wo, d_wo, rule).d_mult;
    const Matrix d_oq = grad_y * t.w_q[3].dequant;
    const MinMaxQuantGrad go = minmax_fake_quant_backward(t.o_q, t.O, d_oq, rule);
    grad(at_clip + 1) = go.d_mult.sum();

    // O = A V, A = softmax(QK^T * scale)
    const Matrix& d_o = go.d_input;
    const Matrix d_a = d_o * t.V.transpose();
    const Matrix d_v = t.A.transpose() * d_o;
    const Matrix d_logits = softmax_backward(t.A, d_a) * t.scale;
    Matrix d_q = d_logits * t.K;
    Matrix d_k = d_logits.transpose() * t.Q;
    if (grad_q) d_q += *grad_q;
    if (grad_k) d_k += *grad_k;

    // P = Xq Wp_q^T
    const std::array<const Matrix*, 3> d_p = {&d_q, &d_k, &d_v};
    Matrix d_xq = Matrix::Zero(t.x_q.dequant.rows(), t.x_q.dequant.cols());
    Vector d_c = Vector::Zero(din);
    for (int p = 0; p < 3; ++p) {
        const Matrix d_w = d_p[p]->transpose() * t.x_q.dequant;
        d_xq += *d_p[p] * t.w_q[p].dequant;
        const MinMaxQuantGrad gw = minmax_fake_quant_backward(t.w_q[p], t.w_eff[p], d_w, rule);
        grad.segment(at_w + p * dout, dout) = gw.d_mult;
        // w_eff = W diag(c) H^T
        const Matrix d_wc = b.H ? Matrix(gw.d_input * *b.H) : gw.d_input;
        const Matrix& w = p == 0 ? b.Wq : (p == 1 ? b.Wk : b.Wv);
        d_c += (d_wc.cwiseProduct(w)).colwise().sum().transpose();
    }

    const MinMaxQuantGrad gx = minmax_fake_quant_backward(t.x_q, t.x_rot, d_xq, rule);
    grad(at_clip) = gx.d_mult.sum();
    // x_rot = X diag(1/c) H^T
    const Matrix d_xs = b.H ? Matrix(gx.d_input * *b.H) : gx.d_input;
    const Vector c2 = quant.smoothing.cwiseProduct(quant.smoothing);
    d_c -= (d_xs.cwiseProduct(x)).colwise().sum().transpose().cwiseQuotient(c2);

    grad.segment(0, din) = d_c;
    return grad;
}

}  // namespace qsl
