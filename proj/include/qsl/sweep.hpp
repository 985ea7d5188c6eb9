// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "qsl/pipeline.hpp"

namespace qsl {

/// One grid axis: a dotted config key and its values as JSON text.
struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

/// Cartesian grid parsed from {"msad.stride": [4, 8], "ssar.rank": [1, 4]}.
/// Axes are ordered by key; the last axis varies fastest.
struct SweepGrid {
    std::vector<SweepAxis> axes;

    static SweepGrid from_json(std::string_view text);
    std::size_t cells() const;
    /// Axis values (JSON text) of cell `index`.
    std::vector<std::string> cell(std::size_t index) const;
};

struct SweepRow {
    std::vector<std::string> values;
    bool ok = false;
    std::string error;
    double calib_initial = 0.0;
    double calib_final = 0.0;
    double attention_cost_fraction = 0.0;
    std::vector<ModeSeries> series;  // means only; per-step data dropped
};

/// QS_THREADS if set to a positive integer, else the hardware concurrency (at least 1).
unsigned thread_budget();

/// Runs calibrate + run for every cell. Cells are independent tasks; a
/// failing cell records its error and the sweep continues. Rows come back in
/// cell order whatever the thread count.
std::vector<SweepRow> run_sweep(std::string_view base_config, const SweepGrid& grid, unsigned threads);

/// Header: the axis keys, then status, calib_initial, calib_final,
/// attention_cost_fraction, mean_frob_<mode> and mean_psnr_<mode> for
/// none/first/second/ssar, then error.
void write_sweep_csv(std::ostream& out, const SweepGrid& grid, const std::vector<SweepRow>& rows);

/// RFC-4180 field quoting.
std::string csv_field(std::string_view s);

}  // namespace qsl
