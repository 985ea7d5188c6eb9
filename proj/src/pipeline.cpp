// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/pipeline.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace qsl {

std::vector<Matrix> TimestepTrace::residuals() const {
    std::vector<Matrix> out;
    out.reserve(a_full.size());
    for (std::size_t t = 0; t < a_full.size(); ++t) out.push_back(residual(a_full[t], a_sq[t]));
    return out;
}

TimestepTrace build_trace(const ToyBlock& base, const BlockQuantParams* quant, const WorkloadSpec& spec,
                          const std::vector<Matrix>& inputs, const SparsityMask& mask, CacheLevel level) {
    spec.validate();
    if (static_cast<Index>(inputs.size()) != spec.T) throw ShapeError("build_trace: need one input per step");
    if (mask.length() != spec.L) throw ShapeError("build_trace: mask length differs from L");
    const bool quantized = quant && spec.noise_mode != NoiseMode::None;

    TimestepTrace tr;
    tr.level = level;
    tr.density = mask.density();
    if (quantized) {
        tr.wbits = quant->settings.wbits;
        tr.abits = quant->settings.abits;
    }
    auto pick = [&](const BlockTape& tape) { return level == CacheLevel::Map ? tape.A : tape.O; };
    for (Index t = 0; t < spec.T; ++t) {
        const ToyBlock b = block_at(base, spec, t);
        const Matrix& x = inputs[static_cast<std::size_t>(t)];
        const BlockTape full = forward_block_fp(b, x, nullptr);
        const BlockTape sparse = forward_block_fp(b, x, &mask);
        const BlockTape sq = quantized ? forward_block_quant(b, x, &mask, *quant) : sparse;
        tr.a_full.push_back(pick(full));
        tr.a_s.push_back(pick(sparse));
        tr.a_sq.push_back(pick(sq));
        if (t == 0) {
            tr.shift = measure_attention_shift(AttentionInputs(full.Q, full.K, full.V),
                                               AttentionInputs(sq.Q, sq.K, sq.V), mask);
        }
    }
    return tr;
}

double matrix_psnr(const Matrix& ref, const Matrix& est) {
    if (ref.rows() != est.rows() || ref.cols() != est.cols()) throw ShapeError("matrix_psnr: shape mismatch");
    if (ref.size() == 0) throw MetricUndefined("matrix_psnr: empty reference");
    const double range = ref.maxCoeff() - ref.minCoeff();
    if (!(range > 0.0)) throw MetricUndefined("matrix_psnr: reference is constant");
    const double mse = (ref - est).squaredNorm() / double(ref.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(range * range / mse);
}

const ModeSeries& RunReport::get(CacheMode m) const {
    for (const auto& s : series)
        if (s.mode == m) return s;
    throw ParameterError("run report has no series for mode '" + std::string(to_string(m)) + "'");
}

namespace {

struct ModeState {
    ModeSeries series;
    std::optional<ResidualCache> cache;
    std::optional<Matrix> frozen_second;  // first pair's second-order term, when frozen
};

}  // namespace

RunReport run_pipeline(const TimestepTrace& trace, const RefreshPlan& plan, const RunOptions& opts) {
    const Index total = trace.steps();
    if (plan.total_steps != total) throw ParameterError("run_pipeline: plan and trace lengths differ");
    if (opts.modes.empty()) throw ParameterError("run_pipeline: no modes requested");

    RunReport rep;
    rep.plan = plan;
    rep.attention_cost_fraction = plan.attention_cost_fraction(trace.density);
    rep.shift = trace.shift;

    std::vector<ModeState> states;
    for (CacheMode m : opts.modes) {
        ModeState s;
        s.series.mode = m;
        states.push_back(std::move(s));
    }

    for (Index t = 0; t < total; ++t) {
        const auto ts = static_cast<std::size_t>(t);
        const Matrix& full = trace.a_full[ts];
        const Matrix& sq = trace.a_sq[ts];

        if (plan.is_full(t)) {
            const bool pair = plan.is_pair(t);
            for (ModeState& s : states) {
                if (opts.keep_outputs) s.series.outputs.push_back(full);
                switch (s.series.mode) {
                    case CacheMode::None: break;
                    case CacheMode::First:
                        // A first-order cache only ever sees refresh steps; the
                        // pair step is second-order bookkeeping.
                        if (plan.is_refresh(t)) s.cache = first_order_build(full, sq, t);
                        break;
                    case CacheMode::Second:
                    case CacheMode::Ssar: {
                        if (!pair) {
                            // Until the pair step arrives the cache degrades to first order.
                            s.cache = first_order_build(full, sq, t);
                            break;
                        }
                        const std::optional<Index> rank =
                            s.series.mode == CacheMode::Ssar ? std::optional<Index>(opts.rank) : std::nullopt;
                        const Matrix& full_prev = trace.a_full[ts - 1];
                        const Matrix& sq_prev = trace.a_sq[ts - 1];
                        if (opts.freeze_second_order) {
                            ResidualCache fresh = second_order_build(full, sq, full_prev, sq_prev, rank, t, t - 1);
                            if (!s.frozen_second) s.frozen_second = fresh.second_term;
                            fresh.second_term = *s.frozen_second;
                            fresh.combined = fresh.delta_ref + fresh.second_term;
                            s.cache = std::move(fresh);
                        } else {
                            s.cache = second_order_build(full, sq, full_prev, sq_prev, rank, t, t - 1);
                        }
                        break;
                    }
                }
            }
            continue;
        }

        const Matrix drift = residual(full, sq);
        for (ModeState& s : states) {
            Matrix out;
            double identity_err = 0.0;
            if (s.series.mode == CacheMode::None || !s.cache) {
                out = sq;
                identity_err = frobenius(drift);
            } else if (s.cache->is_second_order()) {
                out = second_order_apply(sq, *s.cache);
                identity_err = frobenius(Matrix(drift - s.cache->delta_ref - s.cache->second_term));
            } else {
                out = first_order_apply(sq, *s.cache);
                identity_err = frobenius(Matrix(drift - s.cache->delta_ref));
            }
            const double err = frobenius(Matrix(full - out));
            rep.max_identity_gap = std::max(rep.max_identity_gap, std::abs(err - identity_err));
            s.series.steps.push_back(t);
            s.series.frob_err.push_back(err);
            s.series.psnr.push_back(matrix_psnr(full, out));
            if (trace.level == CacheLevel::Map) {
                const double dev = (out.rowwise().sum().array() - 1.0).abs().maxCoeff();
                s.series.max_row_sum_deviation = std::max(s.series.max_row_sum_deviation, dev);
            }
            if (opts.keep_outputs) s.series.outputs.push_back(std::move(out));
        }
    }

    for (ModeState& s : states) {
        ModeSeries& m = s.series;
        if (!m.frob_err.empty()) {
            double sum = 0.0;
            for (double e : m.frob_err) sum += e;
            m.mean_frob = sum / double(m.frob_err.size());
            double psum = 0.0;
            Index finite = 0;
            for (double p : m.psnr) {
                if (std::isfinite(p)) {
                    psum += p;
                    ++finite;
                }
            }
            m.mean_psnr = finite > 0 ? psum / double(finite) : std::numeric_limits<double>::infinity();
        }
        if (opts.keep_outputs) {
            for (Index t = 0; t < total; ++t)
                if (plan.is_full(t) && !(m.outputs[static_cast<std::size_t>(t)] == trace.a_full[static_cast<std::size_t>(t)]))
                    rep.refresh_exact = false;
        }
        if (s.cache) {
            if (m.mode == CacheMode::First) rep.first_cache_elements = s.cache->deployed_elements();
            if (m.mode == CacheMode::Ssar) rep.ssar_cache_elements = s.cache->deployed_elements();
        }
        rep.series.push_back(std::move(m));
    }
    return rep;
}

ToyBlock block_from_config(const Config& c) {
    return make_toy_block(c.workload.d, c.workload.d, c.workload.seed, c.rotate);
}

std::vector<Matrix> calibration_data(const Config& c) {
    return ar1_sequence(c.workload.L, c.workload.d, c.calib.samples, c.workload.rho,
                        c.workload.seed ^ 0x632be59bd9b4e019ULL);
}

SparsityMask mask_from_config(const Config& c, const ToyBlock& block, const Matrix& x0) {
    const Index L = c.workload.L;
    switch (c.mask.kind) {
        case MaskKind::Full: return SparsityMask::full(L);
        case MaskKind::Random: return build_random_mask(L, c.mask.density, c.mask.seed);
        case MaskKind::Block: return build_block_mask(L, c.mask.block, c.mask.density, c.mask.seed);
        case MaskKind::TopK: return build_topk_mask(forward_block_fp(block, x0, nullptr).A, c.mask.density);
    }
    throw ConfigError("unsupported mask kind");
}

CalibResult calibrate_from_config(const Config& c) {
    c.validate();
    const ToyBlock block = block_from_config(c);
    const std::vector<Matrix> data = calibration_data(c);
    const std::vector<Matrix> x0 = ar1_sequence(c.workload.L, c.workload.d, 1, c.workload.rho, c.workload.seed);
    const SparsityMask mask = mask_from_config(c, block, x0.front());
    return calibrate_block(block, c.calib, c.msad, data, c.mask_in_calib ? &mask : nullptr, c.quant);
}

RunArtifacts run_from_config(const Config& c, const BlockQuantParams& quant, bool keep_outputs) {
    c.validate();
    const ToyBlock block = block_from_config(c);
    if (quant.smoothing.size() != block.d_in()) throw ConfigError("calibration result does not match the block size");
    const std::vector<Matrix> xs = generate_workload(c.workload);
    SparsityMask mask = mask_from_config(c, block, xs.front());

    RunOptions opts;
    if (!c.ssar.all_modes) opts.modes = {c.ssar.mode};
    opts.freeze_second_order = c.ssar.freeze_second_order;
    opts.keep_outputs = keep_outputs;
    const bool pairs = std::any_of(opts.modes.begin(), opts.modes.end(),
                                   [](CacheMode m) { return m == CacheMode::Second || m == CacheMode::Ssar; });

    TimestepTrace trace = build_trace(block, &quant, c.workload, xs, mask, c.ssar.level);
    const Matrix& a0 = trace.a_full.front();
    opts.rank = c.effective_rank(a0.rows(), a0.cols());
    const RefreshPlan plan = make_refresh_plan(c.workload.T, c.ssar.interval, pairs);
    RunReport report = run_pipeline(trace, plan, opts);
    return {std::move(trace), std::move(report), std::move(mask)};
}

}  // namespace qsl
