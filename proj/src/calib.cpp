// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/calib.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace qsl {

void CalibSchedule::validate() const {
    if (epochs < 1) throw ParameterError("calib: epochs must be >= 1");
    if (samples < 1) throw ParameterError("calib: samples must be >= 1");
    if (!(lr_scale > 0.0) || !(lr_affine > 0.0)) throw ParameterError("calib: learning rates must be positive");
}

Vector ste_gradient(const DistillProblem& problem, const BlockQuantParams& params, GradRule rule) {
    Vector g;
    problem.evaluate_with_gradient(params, g, rule);
    return g;
}

Vector recon_loss_scale_gradient(const Matrix& x, const QuantParams& p) {
    const IntMatrix q = quantize(x, p);
    const Matrix xq = dequantize(q);
    Vector g = Vector::Zero(static_cast<Index>(p.scales.size()));
    for (Index j = 0; j < x.cols(); ++j) {
        for (Index i = 0; i < x.rows(); ++i) {
            const Index grp = p.group_of(i, j);
            const double codes = double(q.codes(i, j) - p.zero_points[static_cast<std::size_t>(grp)]);
            g(grp) += -2.0 * (x(i, j) - xq(i, j)) * codes;
        }
    }
    return g;
}

std::array<QuantParams, 4> resolve_weight_params(const ToyBlock& block, const BlockQuantParams& params) {
    const BlockTape t = forward_block_quant(block, Matrix::Zero(1, block.d_in()), nullptr, params);
    std::array<QuantParams, 4> out;
    for (int p = 0; p < 4; ++p) out[p] = t.w_q[p].params(params.settings.wbits);
    return out;
}

namespace {

// First-order updates with per-coordinate learning rates and no weight decay.
class Stepper {
public:
    Stepper(Optimizer kind, Vector lr)
        : kind_(kind), lr_(std::move(lr)), m_(Vector::Zero(lr_.size())), v_(Vector::Zero(lr_.size())) {}

    void step(Vector& theta, const Vector& grad, double lr_factor) {
        ++t_;
        if (kind_ == Optimizer::Momentum) {
            m_ = beta1_ * m_ + grad;
            theta -= lr_factor * lr_.cwiseProduct(m_);
            return;
        }
        m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (Index i = 0; i < theta.size(); ++i) {
            const double mhat = m_(i) / c1;
            const double vhat = v_(i) / c2;
            theta(i) -= lr_factor * lr_(i) * mhat / (std::sqrt(vhat) + eps_);
        }
    }

private:
    Optimizer kind_;
    Vector lr_, m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

constexpr double kMinMultiplier = 1e-3;

}  // namespace

CalibResult calibrate_block(const ToyBlock& fp, const CalibSchedule& sched, const DistillConfig& cfg,
                            const std::vector<Matrix>& data, const SparsityMask* mask, QuantSettings settings) {
    sched.validate();
    if (data.size() < static_cast<std::size_t>(sched.samples)) {
        throw ParameterError("calibrate_block: schedule wants " + std::to_string(sched.samples) + " samples, got " +
                             std::to_string(data.size()));
    }
    const std::vector<Matrix> batch(data.begin(), data.begin() + sched.samples);
    const DistillProblem problem(fp, batch, cfg, mask);

    CalibResult res;
    BlockQuantParams params = BlockQuantParams::initial(fp, settings);
    Vector grad;
    res.initial = problem.evaluate_with_gradient(params, grad, sched.grad_rule);
    res.final_report = res.initial;
    res.params = params;

    Vector lr = Vector::Constant(params.size(), sched.lr_affine);
    lr.head(params.smoothing_count()).setConstant(sched.lr_scale);
    Stepper opt(sched.optimizer, lr);
    Vector theta = params.flatten();

    int blown = 0;
    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        if (!grad.allFinite()) throw CalibrationDivergence("calibration gradient is not finite", res.loss_trace);
        const double factor = sched.lr_decay == LrDecay::Cosine
                                  ? 0.5 * (1.0 + std::cos(std::numbers::pi * double(epoch) / double(sched.epochs)))
                                  : 1.0;
        opt.step(theta, grad, factor);
        theta = theta.cwiseMax(kMinMultiplier);
        params.assign(theta);
        const DistillTerms terms = problem.evaluate_with_gradient(params, grad, sched.grad_rule);
        res.loss_trace.push_back(terms.total);
        res.term_trace.push_back(terms);
        if (!std::isfinite(terms.total)) throw CalibrationDivergence("calibration objective is not finite", res.loss_trace);
        blown = terms.total > 10.0 * res.initial.total ? blown + 1 : 0;
        if (blown >= 3) {
            throw CalibrationDivergence("calibration diverged: objective above 10x initial for 3 epochs", res.loss_trace);
        }
        if (terms.total < res.final_report.total) {
            res.final_report = terms;
            res.params = params;
            res.best_epoch = epoch;
        }
    }
    res.weight_params = resolve_weight_params(fp, res.params);
    return res;
}

}  // namespace qsl
