// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: calibrate, run, sweep, report.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qsl/io.hpp"
#include "qsl/sweep.hpp"

namespace fs = std::filesystem;
using namespace qsl;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kNumericalError = 2;

template <typename F>
void write_stream(const fs::path& path, F&& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    body(out);
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

int cmd_calibrate(const fs::path& config_path, const fs::path& out_path, std::optional<bool> mask_in_calib,
                  const std::string& trace_path) {
    Config c = load_config(config_path);
    if (mask_in_calib) c.mask_in_calib = *mask_in_calib;
    const CalibResult r = calibrate_from_config(c);
    write_text_file(out_path, calib_result_to_json(r));
    if (!trace_path.empty()) write_stream(trace_path, [&](std::ostream& o) { write_loss_trace_csv(o, r); });
    std::cout << "calibrated: objective " << format_double(r.initial.total) << " -> "
              << format_double(r.final_report.total) << " (best epoch " << r.best_epoch << ")\n";
    return kOk;
}

// Rebuilds the caches held after the last refresh so they can be exported.
void export_caches(const fs::path& dir, const RunArtifacts& run, const Config& c) {
    const RefreshPlan& plan = run.report.plan;
    const Index r = plan.refresh_steps.back();
    const auto at = [&](Index t) { return static_cast<std::size_t>(t); };
    const TimestepTrace& tr = run.trace;
    write_cache(dir / "cache_first", first_order_build(tr.a_full[at(r)], tr.a_sq[at(r)], r));
    if (!plan.pair_steps.empty()) {
        const Index p = plan.pair_steps.back();
        const Matrix& a = tr.a_full[at(p)];
        write_cache(dir / "cache_ssar", second_order_build(a, tr.a_sq[at(p)], tr.a_full[at(p - 1)], tr.a_sq[at(p - 1)],
                                                           c.effective_rank(a.rows(), a.cols()), p, p - 1));
    }
}

int cmd_run(const fs::path& config_path, const std::string& calib_path, const fs::path& out_dir, bool freeze,
            bool export_all) {
    Config c = load_config(config_path);
    if (freeze) c.ssar.freeze_second_order = true;
    BlockQuantParams params;
    if (calib_path.empty()) {
        params = BlockQuantParams::initial(block_from_config(c), c.quant);
    } else {
        params = calib_result_from_json(read_text_file(calib_path)).params;
        if (params.settings.wbits != c.quant.wbits || params.settings.abits != c.quant.abits) {
            throw ConfigError("calibration result bit-widths differ from the config");
        }
    }
    const RunArtifacts run = run_from_config(c, params);
    fs::create_directories(out_dir);
    write_stream(out_dir / "errors.csv", [&](std::ostream& o) { write_errors_csv(o, run.report); });
    write_text_file(out_dir / "summary.json", run_summary_to_json(run.report, c));
    write_text_file(out_dir / "mask.json", mask_to_json(run.mask));
    if (export_all) {
        const auto spectrum = residual_spectrum(run.trace.residuals(), c.effective_rank(run.trace.a_full[0].rows(),
                                                                                         run.trace.a_full[0].cols()));
        write_stream(out_dir / "spectrum.csv", [&](std::ostream& o) { write_spectrum_csv(o, spectrum); });
        write_stream(out_dir / "alignment.csv", [&](std::ostream& o) { write_alignment_csv(o, spectrum); });
        write_stream(out_dir / "a_full_t0.csv", [&](std::ostream& o) { write_matrix_csv(o, run.trace.a_full[0]); });
        write_stream(out_dir / "a_sq_t0.csv", [&](std::ostream& o) { write_matrix_csv(o, run.trace.a_sq[0]); });
        export_caches(out_dir, run, c);
    }
    for (const ModeSeries& s : run.report.series) {
        std::cout << to_string(s.mode) << ": mean frob " << format_double(s.mean_frob) << ", mean psnr "
                  << format_double(s.mean_psnr) << '\n';
    }
    return kOk;
}

int cmd_sweep(const fs::path& config_path, const fs::path& grid_path, const fs::path& out_path, unsigned threads) {
    const std::string base = read_text_file(config_path);
    load_config(config_path);  // fail fast on a bad base config
    const SweepGrid grid = SweepGrid::from_json(read_text_file(grid_path));
    const unsigned budget = thread_budget();
    const auto rows = run_sweep(base, grid, threads == 0 ? budget : std::min(threads, budget));
    write_stream(out_path, [&](std::ostream& o) { write_sweep_csv(o, grid, rows); });
    std::size_t failed = 0;
    for (const auto& r : rows) failed += !r.ok;
    std::cout << rows.size() << " cells, " << failed << " failed\n";
    return kOk;
}

int cmd_report(const fs::path& in_dir, const std::string& format) {
    std::ifstream in(in_dir / "errors.csv");
    if (!in) throw ConfigError("cannot open '" + (in_dir / "errors.csv").string() + "'");
    const auto summary = summarize_errors_csv(in);
    if (format == "csv") {
        std::cout << "mode,steps,mean_frob,mean_psnr\n";
        for (const auto& m : summary)
            std::cout << m.mode << ',' << m.steps << ',' << format_double(m.mean_frob) << ','
                      << format_double(m.mean_psnr) << '\n';
    } else {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& m : summary) {
            j.push_back({{"mode", m.mode},
                         {"steps", m.steps},
                         {"mean_frob", m.mean_frob},
                         {"mean_psnr", std::isfinite(m.mean_psnr) ? nlohmann::json(m.mean_psnr)
                                                                  : nlohmann::json(format_double(m.mean_psnr))}});
        }
        std::cout << j.dump(2) << '\n';
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantized sparse attention lab: calibration, residual caching and sweeps"};
    app.require_subcommand(1);

    std::string config, out, calib, grid, in_dir, format = "csv", trace;
    std::optional<bool> mask_in_calib;
    bool freeze = false;
    bool export_all = false;
    unsigned threads = 0;

    auto* cal = app.add_subcommand("calibrate", "calibrate block quantizers, write a CalibResult JSON");
    cal->add_option("--config", config, "JSON config")->required();
    cal->add_option("--out", out, "output CalibResult JSON")->required();
    cal->add_option("--loss-trace", trace, "also write the per-epoch loss trace CSV here");
    cal->add_flag("--mask-in-calib,!--no-mask-in-calib", mask_in_calib,
                  "calibrate with the sparse mask active (default on)");

    auto* run = app.add_subcommand("run", "replay the workload, write errors.csv and summary.json");
    run->add_option("--config", config, "JSON config")->required();
    run->add_option("--calib", calib, "CalibResult JSON (min-max parameters when omitted)");
    run->add_option("--out", out, "output directory")->required();
    run->add_flag("--freeze-second-order", freeze, "build the second-order term once and reuse it");
    run->add_flag("--export", export_all, "also write spectrum, attention and cache exports");

    auto* sw = app.add_subcommand("sweep", "calibrate and run every cell of a parameter grid");
    sw->add_option("--config", config, "base JSON config")->required();
    sw->add_option("--grid", grid, "grid JSON of dotted keys to value lists")->required();
    sw->add_option("--out", out, "output CSV")->required();
    sw->add_option("--threads", threads, "worker threads (capped by QS_THREADS)");

    auto* rep = app.add_subcommand("report", "summarise a run directory");
    rep->add_option("--in", in_dir, "run output directory")->required();
    rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    try {
        if (*cal) return cmd_calibrate(config, out, mask_in_calib, trace);
        if (*run) return cmd_run(config, calib, out, freeze, export_all);
        if (*sw) return cmd_sweep(config, grid, out, threads);
        return cmd_report(in_dir, format);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParameterError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const Error& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kNumericalError;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    }
}
