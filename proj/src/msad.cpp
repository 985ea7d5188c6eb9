// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/msad.hpp"

#include <string>

namespace qsl {

DistillConfig DistillConfig::defaults_for(Index length) {
    DistillConfig c;
    c.stride = 8;
    c.salient_k = std::min<Index>(length, std::max<Index>(4, length / 4));
    return c;
}

void DistillConfig::validate(Index length) const {
    if (stride < 1) throw ParameterError("distill: stride must be >= 1");
    if (salient_k < 1 || salient_k > length) {
        throw ParameterError("distill: salient_k=" + std::to_string(salient_k) + " outside [1, " +
                             std::to_string(length) + "]");
    }
    if (lambda_global < 0.0 || lambda_local < 0.0) throw ParameterError("distill: lambdas must be nonnegative");
}

SaliencyProfile token_saliency(const Matrix& a) {
    if (a.rows() != a.cols()) throw ShapeError("token_saliency: attention map must be square");
    SaliencyProfile p;
    p.s = a.colwise().sum().transpose();
    p.order = argsort_descending(p.s);
    return p;
}

Index heavy_tail_stats(const SaliencyProfile& p, double mass) {
    if (!(mass > 0.0 && mass < 1.0)) throw ParameterError("heavy_tail_stats: mass must lie in (0, 1)");
    const auto length = static_cast<double>(p.s.size());
    const double target = mass * length * (1.0 - 1e-12);
    double acc = 0.0;
    for (std::size_t n = 0; n < p.order.size(); ++n) {
        acc += p.s(p.order[n]);
        if (acc >= target) return static_cast<Index>(n + 1);
    }
    return static_cast<Index>(p.order.size());
}

namespace {

void check_qk(const Matrix& q, const Matrix& k) {
    if (q.rows() != k.rows() || q.cols() != k.cols() || q.size() == 0) {
        throw ShapeError("distill: Q and K must share a nonempty shape");
    }
}

double mse(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("mse: shape mismatch");
    return (a - b).squaredNorm() / double(a.size());
}

Matrix gather_rows(const Matrix& m, const IndexSet& idx) {
    Matrix out(static_cast<Index>(idx.size()), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Index>(r)) = m.row(idx[r]);
    return out;
}

IndexSet salient_queries(const Matrix& q, const Matrix& k, Index count) {
    const Matrix a = row_softmax(matmul(q, k.transpose()) * (1.0 / std::sqrt(double(q.cols()))));
    return top_k_indices(token_saliency(a).s, count);
}

}  // namespace

Matrix global_attention(const Matrix& q, const Matrix& k, Index stride) {
    check_qk(q, k);
    const Matrix pq = avg_pool_rows(q, stride);
    const Matrix pk = avg_pool_rows(k, stride);
    return row_softmax(matmul(pq, pk.transpose()) * (1.0 / std::sqrt(double(q.cols()))));
}

Matrix local_attention(const Matrix& q, const Matrix& k, const IndexSet& idx) {
    check_qk(q, k);
    if (idx.empty()) throw ParameterError("local_attention: empty index set");
    for (Index i : idx) {
        if (i < 0 || i >= q.rows()) throw ParameterError("local_attention: query index " + std::to_string(i) + " out of range");
    }
    return row_softmax(matmul(gather_rows(q, idx), k.transpose()) * (1.0 / std::sqrt(double(q.cols()))));
}

double global_loss(const Matrix& fp_q, const Matrix& fp_k, const Matrix& q_q, const Matrix& q_k, Index stride) {
    if (fp_q.rows() != q_q.rows() || fp_q.cols() != q_q.cols()) throw ShapeError("global_loss: FP/quant shape mismatch");
    return mse(global_attention(fp_q, fp_k, stride), global_attention(q_q, q_k, stride));
}

double local_loss(const Matrix& fp_q, const Matrix& fp_k, const Matrix& q_q, const Matrix& q_k, const IndexSet& idx) {
    if (fp_q.rows() != q_q.rows() || fp_q.cols() != q_q.cols()) throw ShapeError("local_loss: FP/quant shape mismatch");
    return mse(local_attention(fp_q, fp_k, idx), local_attention(q_q, q_k, idx));
}

DistillTerms distill_objective(const ToyBlock& teacher, const ToyBlock& student, const BlockQuantParams* quant,
                               const DistillConfig& cfg, const std::vector<Matrix>& batch, const SparsityMask* mask) {
    if (batch.empty()) throw ParameterError("distill_objective: empty batch");
    if (teacher.d_in() != student.d_in() || teacher.d_out() != student.d_out()) {
        throw ShapeError("distill_objective: teacher and student differ structurally");
    }
    DistillTerms out;
    for (const Matrix& x : batch) {
        cfg.validate(x.rows());
        const BlockTape t = forward_block_fp(teacher, x, mask);
        const BlockTape s = quant ? forward_block_quant(student, x, mask, *quant) : forward_block_fp(student, x, mask);
        const IndexSet idx = salient_queries(t.Q, t.K, cfg.salient_k);
        out.l_quant += mse(t.Y, s.Y);
        out.l_global += global_loss(t.Q, t.K, s.Q, s.K, cfg.stride);
        out.l_local += local_loss(t.Q, t.K, s.Q, s.K, idx);
    }
    const double n = double(batch.size());
    out.l_quant /= n;
    out.l_global /= n;
    out.l_local /= n;
    out.total = out.l_quant + cfg.lambda_global * out.l_global + cfg.lambda_local * out.l_local;
    return out;
}

DistillProblem::DistillProblem(ToyBlock block, std::vector<Matrix> batch, DistillConfig cfg, const SparsityMask* mask)
    : block_(std::move(block)), batch_(std::move(batch)), cfg_(cfg) {
    if (batch_.empty()) throw ParameterError("DistillProblem: empty batch");
    if (mask) mask_ = *mask;
    for (const Matrix& x : batch_) {
        cfg_.validate(x.rows());
        const BlockTape t = forward_block_fp(block_, x, mask);
        salient_.push_back(salient_queries(t.Q, t.K, cfg_.salient_k));
        y_fp_.push_back(t.Y);
        global_fp_.push_back(global_attention(t.Q, t.K, cfg_.stride));
        local_fp_.push_back(local_attention(t.Q, t.K, salient_.back()));
    }
}

DistillTerms DistillProblem::evaluate(const BlockQuantParams& quant) const {
    return run(quant, nullptr, GradRule::FrozenCode);
}

DistillTerms DistillProblem::evaluate_with_gradient(const BlockQuantParams& quant, Vector& grad, GradRule rule) const {
    return run(quant, &grad, rule);
}

std::size_t DistillProblem::fingerprint(const BlockQuantParams& quant) const {
    std::size_t h = 0;
    const SparsityMask* mask = mask_ ? &*mask_ : nullptr;
    for (const Matrix& x : batch_) {
        h ^= forward_block_quant(block_, x, mask, quant).fingerprint() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
}

DistillTerms DistillProblem::run(const BlockQuantParams& quant, Vector* grad, GradRule rule) const {
    const SparsityMask* mask = mask_ ? &*mask_ : nullptr;
    const double n = double(batch_.size());
    DistillTerms out;
    if (grad) *grad = Vector::Zero(quant.size());

    for (std::size_t b = 0; b < batch_.size(); ++b) {
        const Matrix& x = batch_[b];
        const BlockTape t = forward_block_quant(block_, x, mask, quant);
        const double scale = 1.0 / std::sqrt(double(t.Q.cols()));

        const Matrix pq = avg_pool_rows(t.Q, cfg_.stride);
        const Matrix pk = avg_pool_rows(t.K, cfg_.stride);
        const Matrix a_global = row_softmax(matmul(pq, pk.transpose()) * scale);
        const Matrix q_sel = gather_rows(t.Q, salient_[b]);
        const Matrix a_local = row_softmax(matmul(q_sel, t.K.transpose()) * scale);

        out.l_quant += mse(y_fp_[b], t.Y) / n;
        out.l_global += mse(global_fp_[b], a_global) / n;
        out.l_local += mse(local_fp_[b], a_local) / n;
        if (!grad) continue;

        const Matrix d_y = (t.Y - y_fp_[b]) * (2.0 / (double(t.Y.size()) * n));
        Matrix d_q = Matrix::Zero(t.Q.rows(), t.Q.cols());
        Matrix d_k = Matrix::Zero(t.K.rows(), t.K.cols());

        if (cfg_.lambda_global > 0.0) {
            const Matrix d_ag = (a_global - global_fp_[b]) * (2.0 * cfg_.lambda_global / (double(a_global.size()) * n));
            const Matrix d_logits = softmax_backward(a_global, d_ag) * scale;
            const Matrix d_pq = d_logits * pk;
            const Matrix d_pk = d_logits.transpose() * pq;
            for (Index r = 0; r < t.Q.rows(); ++r) {
                const Index g = r / cfg_.stride;
                const double count = double(std::min(cfg_.stride, t.Q.rows() - g * cfg_.stride));
                d_q.row(r) += d_pq.row(g) / count;
                d_k.row(r) += d_pk.row(g) / count;
            }
        }
        if (cfg_.lambda_local > 0.0) {
            const Matrix d_al = (a_local - local_fp_[b]) * (2.0 * cfg_.lambda_local / (double(a_local.size()) * n));
            const Matrix d_logits = softmax_backward(a_local, d_al) * scale;
            const Matrix d_sel = d_logits * t.K;
            d_k += d_logits.transpose() * q_sel;
            for (std::size_t r = 0; r < salient_[b].size(); ++r) d_q.row(salient_[b][r]) += d_sel.row(static_cast<Index>(r));
        }
        *grad += block_backward(block_, x, quant, t, d_y, &d_q, &d_k, rule);
    }
    out.total = out.l_quant + cfg_.lambda_global * out.l_global + cfg_.lambda_local * out.l_local;
    return out;
}

}  // namespace qsl
