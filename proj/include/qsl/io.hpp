// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "qsl/pipeline.hpp"

namespace qsl {

/// Shortest round-trip decimal form; "inf", "-inf" and "nan" for non-finite values.
std::string format_double(double v);

// QuantParams as {"bits", "granularity", "scales", "zero_points"}.
std::string quant_params_to_json(const QuantParams& p);
QuantParams quant_params_from_json(std::string_view text);

// CalibResult: learnable parameters, resolved weight quantizers and the loss trace.
std::string calib_result_to_json(const CalibResult& r);
CalibResult calib_result_from_json(std::string_view text);

/// Row-major run-length encoding: {"length", "first", "runs"}, where runs
/// alternate starting from the value `first`.
std::string mask_to_json(const SparsityMask& m);
SparsityMask mask_from_json(std::string_view text);

/// Long-form CSV with header `row,col,value`.
void write_matrix_csv(std::ostream& out, const Matrix& m);

/// Header `iter,l_quant,l_global,l_local,total`; iteration 0 is the initial point.
void write_loss_trace_csv(std::ostream& out, const CalibResult& r);

/// Header `step,mode,frob_err,psnr`, one row per corrected step and mode.
void write_errors_csv(std::ostream& out, const RunReport& r);

/// Header `step,k,sigma` and, separately, `step,leading_alignment,trailing_alignment`.
void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumRow>& rows);
void write_alignment_csv(std::ostream& out, const std::vector<SpectrumRow>& rows);

std::string run_summary_to_json(const RunReport& r, const Config& c);

/// Cache export: `<stem>.json` describes the matrices stored back to back as
/// little-endian float64, column-major, in `<stem>.bin`.
void write_cache(const std::filesystem::path& stem, const ResidualCache& c);
ResidualCache read_cache(const std::filesystem::path& stem);

/// Per-mode aggregate of an errors.csv table.
struct ModeSummary {
    std::string mode;
    Index steps = 0;
    double mean_frob = 0.0;
    double mean_psnr = 0.0;  // over finite entries
};
std::vector<ModeSummary> summarize_errors_csv(std::istream& in);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace qsl
