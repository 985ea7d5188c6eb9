// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "qsl/calib.hpp"
#include "qsl/workload.hpp"

namespace qsl {

enum class MaskKind { Full, TopK, Random, Block };
std::string_view to_string(MaskKind k);
MaskKind mask_kind_from_string(std::string_view s);

struct MaskConfig {
    MaskKind kind = MaskKind::TopK;
    double density = 0.25;
    Index block = 8;
    std::uint64_t seed = 0;
};

/// Which corrections a run reports.
enum class CacheMode { None, First, Second, Ssar };
std::string_view to_string(CacheMode m);
CacheMode cache_mode_from_string(std::string_view s);

/// Map: residuals on the L x L attention map. Output: on A V (L x d).
enum class CacheLevel { Map, Output };
std::string_view to_string(CacheLevel l);
CacheLevel cache_level_from_string(std::string_view s);

struct SsarConfig {
    Index rank = 16;  // clamped to min(rank, L/4, matrix dimension) at run time
    Index interval = 5;
    bool all_modes = true;  // "all": report every mode
    CacheMode mode = CacheMode::Ssar;
    CacheLevel level = CacheLevel::Output;
    bool freeze_second_order = false;
};

struct Config {
    WorkloadSpec workload;
    QuantSettings quant;
    MaskConfig mask;
    DistillConfig msad = DistillConfig::defaults_for(64);
    CalibSchedule calib;
    SsarConfig ssar;
    bool mask_in_calib = true;
    bool rotate = false;

    void validate() const;
    /// Effective SVD rank for residuals with the given shape.
    Index effective_rank(Index rows, Index cols) const;
};

/// Parses a JSON document. Unknown keys and wrong types raise ConfigError.
/// Absent keys keep their defaults; msad.k defaults to max(4, L/4).
Config parse_config(std::string_view json_text);
Config load_config(const std::filesystem::path& path);
std::string config_to_json(const Config& c);

/// Applies a dotted-key override such as "ssar.rank" = 4 to a JSON config text.
std::string apply_override(std::string_view json_text, const std::string& dotted_key, const std::string& json_value);

}  // namespace qsl
