// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/sweep.hpp"

#include <atomic>
#include <cstdlib>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "qsl/io.hpp"

namespace qsl {

using nlohmann::json;

SweepGrid SweepGrid::from_json(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("grid is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.empty()) throw ConfigError("grid must be a nonempty object of dotted keys");
    SweepGrid g;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it->is_array() || it->empty()) throw ConfigError("grid axis '" + it.key() + "' must be a nonempty array");
        SweepAxis a{it.key(), {}};
        for (const auto& v : *it) a.values.push_back(v.dump());
        g.axes.push_back(std::move(a));
    }
    return g;
}

std::size_t SweepGrid::cells() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.values.size();
    return n;
}

std::vector<std::string> SweepGrid::cell(std::size_t index) const {
    std::vector<std::string> out(axes.size());
    for (std::size_t k = axes.size(); k-- > 0;) {
        out[k] = axes[k].values[index % axes[k].values.size()];
        index /= axes[k].values.size();
    }
    return out;
}

unsigned thread_budget() {
    if (const char* env = std::getenv("QS_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

SweepRow run_cell(std::string_view base, const SweepGrid& grid, std::size_t index) {
    SweepRow row;
    row.values = grid.cell(index);
    try {
        std::string text(base);
        for (std::size_t k = 0; k < grid.axes.size(); ++k) text = apply_override(text, grid.axes[k].key, row.values[k]);
        const Config c = parse_config(text);
        const CalibResult cal = calibrate_from_config(c);
        RunArtifacts run = run_from_config(c, cal.params);
        row.calib_initial = cal.initial.total;
        row.calib_final = cal.final_report.total;
        row.attention_cost_fraction = run.report.attention_cost_fraction;
        for (ModeSeries& s : run.report.series) {
            s.steps.clear();
            s.frob_err.clear();
            s.psnr.clear();
            s.outputs.clear();
            row.series.push_back(std::move(s));
        }
        row.ok = true;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

}  // namespace

std::vector<SweepRow> run_sweep(std::string_view base_config, const SweepGrid& grid, unsigned threads) {
    const std::size_t n = grid.cells();
    std::vector<SweepRow> rows(n);
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), n));
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) rows[i] = run_cell(base_config, grid, i);
    };
    std::vector<std::jthread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    pool.clear();
    return rows;
}

std::string csv_field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

void write_sweep_csv(std::ostream& out, const SweepGrid& grid, const std::vector<SweepRow>& rows) {
    constexpr std::array<CacheMode, 4> modes{CacheMode::None, CacheMode::First, CacheMode::Second, CacheMode::Ssar};
    for (const auto& a : grid.axes) out << csv_field(a.key) << ',';
    out << "status,calib_initial,calib_final,attention_cost_fraction";
    for (CacheMode m : modes) out << ",mean_frob_" << to_string(m);
    for (CacheMode m : modes) out << ",mean_psnr_" << to_string(m);
    out << ",error\n";
    for (const SweepRow& r : rows) {
        for (const auto& v : r.values) out << csv_field(v) << ',';
        out << (r.ok ? "ok" : "error");
        if (r.ok) {
            out << ',' << format_double(r.calib_initial) << ',' << format_double(r.calib_final) << ','
                << format_double(r.attention_cost_fraction);
        } else {
            out << ",,,";
        }
        auto find = [&](CacheMode m) -> const ModeSeries* {
            for (const auto& s : r.series)
                if (s.mode == m) return &s;
            return nullptr;
        };
        for (CacheMode m : modes) {
            const ModeSeries* s = find(m);
            out << ',' << (s ? format_double(s->mean_frob) : "");
        }
        for (CacheMode m : modes) {
            const ModeSeries* s = find(m);
            out << ',' << (s ? format_double(s->mean_psnr) : "");
        }
        out << ',' << csv_field(r.error) << '\n';
    }
}

}  // namespace qsl
