// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "qsl/io.hpp"

namespace qsl {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "qsl_unit_io";
    fs::create_directories(dir);
    return dir / name;
}

TEST(Config, BundledDefaultParses) {
    const Config c = load_config(QSL_DEFAULT_CONFIG);
    EXPECT_EQ(c.workload.L, 64);
    EXPECT_EQ(c.workload.d, 16);
    EXPECT_EQ(c.workload.T, 50);
    EXPECT_DOUBLE_EQ(c.workload.rho, 0.95);
    EXPECT_EQ(c.quant.wbits, 4);
    EXPECT_EQ(c.quant.abits, 8);
    EXPECT_EQ(c.mask.kind, MaskKind::TopK);
    EXPECT_DOUBLE_EQ(c.mask.density, 0.25);
    EXPECT_EQ(c.msad.salient_k, 16);
    EXPECT_EQ(c.calib.epochs, 15);
    EXPECT_EQ(c.ssar.interval, 5);
    EXPECT_TRUE(c.ssar.all_modes);
    EXPECT_TRUE(c.mask_in_calib);
}

TEST(Config, EmptyObjectGivesDefaults) {
    const Config c = parse_config("{}");
    EXPECT_EQ(c.workload.L, 64);
    EXPECT_EQ(c.msad.salient_k, 16);
    EXPECT_EQ(parse_config(R"({"workload":{"L":128}})").msad.salient_k, 32);
}

TEST(Config, RoundTripThroughJson) {
    Config c = parse_config(R"({"workload":{"L":32,"rho":0.9,"seed":7,"noise_mode":"quant_plus_drift"},
        "quant":{"wbits":6,"granularity":"per_tensor"},"mask":{"kind":"block","block":4,"density":0.5},
        "ssar":{"mode":"second","level":"map","rank":3},"calib":{"optimizer":"adamw","lr_decay":"constant"}})");
    const Config back = parse_config(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(back.ssar.mode, CacheMode::Second);
    EXPECT_FALSE(back.ssar.all_modes);
    EXPECT_EQ(back.calib.optimizer, Optimizer::AdamW);
}

TEST(Config, StrictErrors) {
    EXPECT_THROW(parse_config("{"), ConfigError);
    EXPECT_THROW(parse_config("[]"), ConfigError);
    EXPECT_THROW(parse_config(R"({"bogus":{}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"workload":{"Lx":3}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"workload":{"L":"64"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"workload":{"L":2.5}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"workload":{"rho":1.0}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"quant":{"wbits":1}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"quant":{"granularity":"per_channel"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"mask":{"density":0}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"mask":{"kind":"diagonal"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"ssar":{"interval":2}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"ssar":{"mode":"third"}})"), ConfigError);
    EXPECT_THROW(parse_config(R"({"msad":{"k":100}})"), ConfigError);
}

TEST(Config, MissingFileNamesPath) {
    try {
        load_config("/nonexistent/qsl.json");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/qsl.json"), std::string::npos);
    }
}

TEST(Config, EffectiveRankClamps) {
    Config c;
    EXPECT_EQ(c.effective_rank(64, 16), 16);
    EXPECT_EQ(c.effective_rank(64, 64), 16);
    c.ssar.rank = 40;
    EXPECT_EQ(c.effective_rank(64, 64), 16);
    c.ssar.rank = 3;
    EXPECT_EQ(c.effective_rank(64, 64), 3);
}

TEST(Config, OverrideSetsNestedKeys) {
    const std::string out = apply_override(R"({"ssar":{"rank":16}})", "ssar.rank", "4");
    EXPECT_EQ(parse_config(out).ssar.rank, 4);
    EXPECT_EQ(parse_config(apply_override("{}", "mask.density", "0.5")).mask.density, 0.5);
    EXPECT_THROW(apply_override("{}", "mask..density", "1"), ConfigError);
}

TEST(Io, FormatDouble) {
    EXPECT_EQ(format_double(0.1), "0.1");
    EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
    EXPECT_EQ(format_double(-std::numeric_limits<double>::infinity()), "-inf");
    EXPECT_EQ(format_double(std::nan("")), "nan");
    const double third = 1.0 / 3.0;
    EXPECT_EQ(std::stod(format_double(third)), third);
}

TEST(Io, QuantParamsRoundTrip) {
    QuantParams p;
    p.bits = 4;
    p.granularity = Granularity::PerChannel;
    p.scales = {0.1, 1.0 / 3.0};
    p.zero_points = {0, 7};
    const auto back = quant_params_from_json(quant_params_to_json(p));
    EXPECT_EQ(back.bits, 4);
    EXPECT_EQ(back.granularity, Granularity::PerChannel);
    EXPECT_EQ(back.scales, p.scales);
    EXPECT_EQ(back.zero_points, p.zero_points);
    EXPECT_NE(quant_params_to_json(p).find("\"zero_points\""), std::string::npos);
    EXPECT_THROW(quant_params_from_json(R"({"bits":4})"), ConfigError);
}

TEST(Io, CalibResultRoundTrip) {
    const ToyBlock b = make_toy_block(4, 4, 1);
    CalibResult r;
    r.params = BlockQuantParams::initial(b, {4, 8, Granularity::PerToken});
    r.params.act_in_clip = 0.7;
    r.params.smoothing(2) = 1.0 / 3.0;
    r.weight_params = resolve_weight_params(b, r.params);
    r.loss_trace = {0.5, 0.25};
    r.term_trace = {{0.5, 1, 2, 0.5}, {0.25, 1, 2, 0.25}};
    r.initial = {1, 2, 3, 1};
    r.final_report = r.term_trace[1];
    r.best_epoch = 1;
    const auto back = calib_result_from_json(calib_result_to_json(r));
    EXPECT_EQ(back.params.flatten(), r.params.flatten());
    EXPECT_EQ(back.params.settings.wbits, 4);
    EXPECT_EQ(back.loss_trace, r.loss_trace);
    EXPECT_EQ(back.best_epoch, 1);
    EXPECT_EQ(back.final_report.total, 0.25);
    EXPECT_EQ(back.weight_params[0].scales, r.weight_params[0].scales);
    EXPECT_THROW(calib_result_from_json("{}"), ConfigError);
}

TEST(Io, MaskRoundTrip) {
    const auto m = build_random_mask(20, 0.3, 5);
    EXPECT_EQ(mask_from_json(mask_to_json(m)), m);
    EXPECT_EQ(mask_from_json(mask_to_json(SparsityMask::full(7))), SparsityMask::full(7));
    EXPECT_THROW(mask_from_json(R"({"length":2,"first":true,"runs":[3]})"), ConfigError);
}

TEST(Io, LossTraceCsv) {
    CalibResult r;
    r.initial = {1, 2, 3, 4};
    r.term_trace = {{0.5, 0.1, 0.2, 0.75}};
    std::ostringstream out;
    write_loss_trace_csv(out, r);
    EXPECT_EQ(out.str(), "iter,l_quant,l_global,l_local,total\n0,1,2,3,4\n1,0.5,0.1,0.2,0.75\n");
}

TEST(Io, ErrorsCsvAndSummary) {
    RunReport rep;
    ModeSeries s;
    s.mode = CacheMode::First;
    s.steps = {2, 3};
    s.frob_err = {0.5, 1.5};
    s.psnr = {20.0, std::numeric_limits<double>::infinity()};
    rep.series.push_back(s);
    std::ostringstream out;
    write_errors_csv(out, rep);
    EXPECT_EQ(out.str(), "step,mode,frob_err,psnr\n2,first,0.5,20\n3,first,1.5,inf\n");
    std::istringstream in(out.str());
    const auto sum = summarize_errors_csv(in);
    ASSERT_EQ(sum.size(), 1u);
    EXPECT_EQ(sum[0].mode, "first");
    EXPECT_EQ(sum[0].steps, 2);
    EXPECT_DOUBLE_EQ(sum[0].mean_frob, 1.0);
    EXPECT_DOUBLE_EQ(sum[0].mean_psnr, 20.0);
}

TEST(Io, CacheExportRoundTrip) {
    const Matrix full = Matrix::Random(6, 4), sq = Matrix::Random(6, 4);
    const auto c = second_order_build(full, sq, Matrix(full * 0.5), sq, 2, 6, 5);
    const fs::path stem = scratch("cache");
    write_cache(stem, c);
    EXPECT_TRUE(fs::exists(fs::path(stem.string() + ".json")));
    EXPECT_TRUE(fs::exists(fs::path(stem.string() + ".bin")));
    const auto back = read_cache(stem);
    EXPECT_EQ(back.combined, c.combined);
    EXPECT_EQ(back.delta_ref, c.delta_ref);
    EXPECT_EQ(back.second_term, c.second_term);
    EXPECT_EQ(back.t_ref, 6);
    EXPECT_EQ(back.t_ref_prev, 5);
    EXPECT_EQ(back.rank, 2);
}

TEST(Io, MatrixAndSpectrumCsvHeaders) {
    std::ostringstream m;
    write_matrix_csv(m, Matrix::Identity(2, 2));
    EXPECT_EQ(m.str().substr(0, m.str().find('\n')), "row,col,value");
    std::ostringstream s;
    SpectrumRow row;
    row.step = 1;
    row.singular_values = Vector::Ones(2);
    write_spectrum_csv(s, {row});
    EXPECT_EQ(s.str(), "step,k,sigma\n1,0,1\n1,1,1\n");
}

}  // namespace
}  // namespace qsl
