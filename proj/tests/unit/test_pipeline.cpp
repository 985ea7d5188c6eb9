// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "qsl/pipeline.hpp"

namespace qsl {
namespace {

Config small_config() {
    Config c;
    c.workload.L = 16;
    c.workload.d = 8;
    c.workload.T = 12;
    c.msad = DistillConfig::defaults_for(16);
    c.calib.epochs = 2;
    c.calib.samples = 4;
    c.ssar.rank = 4;
    return c;
}

TEST(MatrixPsnr, Examples) {
    Matrix ref(1, 2);
    ref << 0, 1;
    EXPECT_TRUE(std::isinf(matrix_psnr(ref, ref)));
    Matrix est = ref.array() + 0.1;  // MSE 0.01
    EXPECT_NEAR(matrix_psnr(ref, est), 20.0, 1e-12);
    Matrix closer = ref.array() + 0.05;
    EXPECT_GT(matrix_psnr(ref, closer), matrix_psnr(ref, est));
    EXPECT_THROW(matrix_psnr(Matrix::Ones(2, 2), Matrix::Zero(2, 2)), MetricUndefined);
    EXPECT_THROW(matrix_psnr(ref, Matrix::Zero(2, 1)), ShapeError);
}

TEST(Pipeline, NoCompressionGivesNearZeroError) {
    Config c = small_config();
    c.quant = {16, 16, Granularity::PerToken};
    c.mask.kind = MaskKind::Full;
    const ToyBlock b = block_from_config(c);
    const auto run = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    for (const auto& s : run.report.series) {
        EXPECT_EQ(s.frob_err.size(), std::size_t(run.report.plan.corrected_count()));
        EXPECT_LT(s.mean_frob, 1e-3);
    }
}

TEST(Pipeline, IdentitiesRefreshExactnessAndStorage) {
    for (CacheLevel level : {CacheLevel::Map, CacheLevel::Output}) {
        Config c = small_config();
        c.ssar.level = level;
        const ToyBlock b = block_from_config(c);
        const auto run = run_from_config(c, BlockQuantParams::initial(b, c.quant), true);
        const auto& r = run.report;
        EXPECT_LE(r.max_identity_gap, 1e-12);
        EXPECT_TRUE(r.refresh_exact);
        EXPECT_EQ(r.first_cache_elements, r.ssar_cache_elements);
        EXPECT_GT(r.first_cache_elements, 0);
        for (const auto& s : r.series) {
            EXPECT_EQ(s.outputs.size(), 12u);
            if (level == CacheLevel::Map && s.mode == CacheMode::None) { EXPECT_LE(s.max_row_sum_deviation, 1e-12); }
        }
        EXPECT_GE(r.get(CacheMode::None).mean_frob, r.get(CacheMode::First).mean_frob);
    }
}

TEST(Pipeline, SecondOrderErrorsMatchResidualForm) {
    Config c = small_config();
    const ToyBlock b = block_from_config(c);
    const auto run = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    const auto res = run.trace.residuals();
    const auto& second = run.report.get(CacheMode::Second);
    const Index iv = c.ssar.interval;
    for (std::size_t i = 0; i < second.steps.size(); ++i) {
        const Index t = second.steps[i];
        const Index ref = (t / iv) * iv + 1;
        const Matrix dhat_t = res[std::size_t(t)] - res[std::size_t(ref)];
        const Matrix dhat_ref = res[std::size_t(ref)] - res[std::size_t(ref - 1)];
        EXPECT_NEAR(second.frob_err[i], (dhat_t - dhat_ref).norm(), 1e-12);
    }
}

TEST(Pipeline, FirstOnlyRunUsesPlanWithoutPairs) {
    Config c = small_config();
    c.ssar.all_modes = false;
    c.ssar.mode = CacheMode::First;
    const ToyBlock b = block_from_config(c);
    const auto run = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    EXPECT_TRUE(run.report.plan.pair_steps.empty());
    EXPECT_EQ(run.report.series.size(), 1u);
    EXPECT_NEAR(run.report.attention_cost_fraction, (3 + 9 * run.mask.density()) / 12.0, 1e-15);
}

TEST(Pipeline, FrozenSecondOrderReusesFirstPair) {
    Config c = small_config();
    c.ssar.freeze_second_order = true;
    const ToyBlock b = block_from_config(c);
    const auto frozen = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    c.ssar.freeze_second_order = false;
    const auto live = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    // The first interval is identical; later ones use a stale second-order term.
    EXPECT_EQ(frozen.report.get(CacheMode::Second).frob_err.front(), live.report.get(CacheMode::Second).frob_err.front());
    EXPECT_NE(frozen.report.get(CacheMode::Second).frob_err.back(), live.report.get(CacheMode::Second).frob_err.back());
}

TEST(Pipeline, DeterministicAcrossRuns) {
    const Config c = small_config();
    const ToyBlock b = block_from_config(c);
    const auto p = BlockQuantParams::initial(b, c.quant);
    const auto a = run_from_config(c, p), r = run_from_config(c, p);
    for (std::size_t m = 0; m < a.report.series.size(); ++m) {
        EXPECT_EQ(a.report.series[m].frob_err, r.report.series[m].frob_err);
    }
}

TEST(Pipeline, CalibrateFromConfigDescends) {
    const auto r = calibrate_from_config(small_config());
    EXPECT_EQ(r.loss_trace.size(), 2u);
    EXPECT_LE(r.final_report.total, r.initial.total);
}

TEST(Pipeline, PlanLengthMustMatchTrace) {
    const Config c = small_config();
    const ToyBlock b = block_from_config(c);
    const auto run = run_from_config(c, BlockQuantParams::initial(b, c.quant));
    EXPECT_THROW(run_pipeline(run.trace, make_refresh_plan(10, 5), {}), ParameterError);
}

}  // namespace
}  // namespace qsl
