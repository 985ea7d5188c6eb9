// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qsl {

using nlohmann::json;

std::string_view to_string(MaskKind k) {
    switch (k) {
        case MaskKind::Full: return "full";
        case MaskKind::TopK: return "topk";
        case MaskKind::Random: return "random";
        case MaskKind::Block: return "block";
    }
    return "?";
}

MaskKind mask_kind_from_string(std::string_view s) {
    if (s == "full") return MaskKind::Full;
    if (s == "topk") return MaskKind::TopK;
    if (s == "random") return MaskKind::Random;
    if (s == "block") return MaskKind::Block;
    throw ConfigError("mask.kind: unknown value '" + std::string(s) + "' (full|topk|random|block)");
}

std::string_view to_string(CacheMode m) {
    switch (m) {
        case CacheMode::None: return "none";
        case CacheMode::First: return "first";
        case CacheMode::Second: return "second";
        case CacheMode::Ssar: return "ssar";
    }
    return "?";
}

CacheMode cache_mode_from_string(std::string_view s) {
    if (s == "none") return CacheMode::None;
    if (s == "first") return CacheMode::First;
    if (s == "second") return CacheMode::Second;
    if (s == "ssar") return CacheMode::Ssar;
    throw ConfigError("ssar.mode: unknown value '" + std::string(s) + "' (none|first|second|ssar|all)");
}

std::string_view to_string(CacheLevel l) { return l == CacheLevel::Map ? "map" : "output"; }

CacheLevel cache_level_from_string(std::string_view s) {
    if (s == "map") return CacheLevel::Map;
    if (s == "output") return CacheLevel::Output;
    throw ConfigError("ssar.level: unknown value '" + std::string(s) + "' (map|output)");
}

void Config::validate() const {
    try {
        workload.validate();
        calib.validate();
        msad.validate(workload.L);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    auto bits_ok = [](int b) { return b >= 2 && b <= 16; };
    if (!bits_ok(quant.wbits) || !bits_ok(quant.abits)) throw ConfigError("quant: bits must lie in [2, 16]");
    if (quant.act_granularity == Granularity::PerChannel) {
        throw ConfigError("quant.granularity: activations support per_token or per_tensor");
    }
    if (!(mask.density > 0.0 && mask.density <= 1.0)) throw ConfigError("mask.density must lie in (0, 1]");
    if (mask.block < 1 || mask.block > workload.L) throw ConfigError("mask.block must lie in [1, L]");
    if (ssar.rank < 1) throw ConfigError("ssar.rank must be >= 1");
    if (ssar.interval < 3 || ssar.interval > workload.T) {
        throw ConfigError("ssar.interval must lie in [3, T]: each interval needs a reference pair and a corrected step");
    }
}

Index Config::effective_rank(Index rows, Index cols) const {
    return std::max<Index>(1, std::min({ssar.rank, workload.L / 4, rows, cols}));
}

namespace {

class Reader {
public:
    Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) throw ConfigError(section_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError(path(key) + ": expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!it->is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0) {
                        throw ConfigError(path(key) + ": expected a nonnegative integer");
                    }
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError(path(key) + ": expected a number");
            } else {
                if (!it->is_string()) throw ConfigError(path(key) + ": expected a string");
            }
            out = it->template get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path(key) + ": " + e.what());
        }
    }

    bool has(const char* key) const { return j_.contains(key); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + path(it.key()) + "'");
        }
    }

private:
    std::string path(const std::string& key) const { return section_ + "." + key; }

    const json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

template <typename F>
void section(const json& root, const char* name, F&& body) {
    auto it = root.find(name);
    if (it == root.end()) return;
    Reader r(*it, name);
    body(r);
    r.finish();
}

}  // namespace

Config parse_config(std::string_view json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ConfigError("config root must be an object");
    for (auto it = root.begin(); it != root.end(); ++it) {
        static const std::set<std::string> known{"workload", "quant", "mask", "msad", "calib", "ssar"};
        if (!known.count(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    }

    Config c;
    std::string s;
    section(root, "workload", [&](Reader& r) {
        r.get("L", c.workload.L);
        r.get("d", c.workload.d);
        r.get("T", c.workload.T);
        r.get("rho", c.workload.rho);
        r.get("seed", c.workload.seed);
        r.get("drift", c.workload.drift);
        s.clear();
        r.get("noise_mode", s);
        if (!s.empty()) {
            try {
                c.workload.noise_mode = noise_mode_from_string(s);
            } catch (const ParameterError& e) {
                throw ConfigError(std::string("workload.noise_mode: ") + e.what());
            }
        }
    });
    section(root, "quant", [&](Reader& r) {
        r.get("wbits", c.quant.wbits);
        r.get("abits", c.quant.abits);
        r.get("rotate", c.rotate);
        s.clear();
        r.get("granularity", s);
        if (!s.empty()) {
            try {
                c.quant.act_granularity = granularity_from_string(s);
            } catch (const ParameterError& e) {
                throw ConfigError(std::string("quant.granularity: ") + e.what());
            }
        }
    });
    section(root, "mask", [&](Reader& r) {
        s.clear();
        r.get("kind", s);
        if (!s.empty()) c.mask.kind = mask_kind_from_string(s);
        r.get("density", c.mask.density);
        r.get("block", c.mask.block);
        r.get("seed", c.mask.seed);
    });
    c.msad = DistillConfig::defaults_for(c.workload.L);
    section(root, "msad", [&](Reader& r) {
        r.get("stride", c.msad.stride);
        r.get("k", c.msad.salient_k);
        r.get("lambda_global", c.msad.lambda_global);
        r.get("lambda_local", c.msad.lambda_local);
    });
    section(root, "calib", [&](Reader& r) {
        r.get("epochs", c.calib.epochs);
        r.get("samples", c.calib.samples);
        r.get("lr_scale", c.calib.lr_scale);
        r.get("lr_affine", c.calib.lr_affine);
        r.get("mask_in_calib", c.mask_in_calib);
        s.clear();
        r.get("lr_decay", s);
        if (s == "cosine") c.calib.lr_decay = LrDecay::Cosine;
        else if (s == "constant") c.calib.lr_decay = LrDecay::Constant;
        else if (!s.empty()) throw ConfigError("calib.lr_decay: unknown value '" + s + "' (cosine|constant)");
        s.clear();
        r.get("optimizer", s);
        if (s == "momentum") c.calib.optimizer = Optimizer::Momentum;
        else if (s == "adamw") c.calib.optimizer = Optimizer::AdamW;
        else if (!s.empty()) throw ConfigError("calib.optimizer: unknown value '" + s + "' (momentum|adamw)");
        s.clear();
        r.get("grad_rule", s);
        if (s == "straight_through") c.calib.grad_rule = GradRule::StraightThrough;
        else if (s == "frozen_code") c.calib.grad_rule = GradRule::FrozenCode;
        else if (!s.empty()) throw ConfigError("calib.grad_rule: unknown value '" + s + "' (straight_through|frozen_code)");
    });
    section(root, "ssar", [&](Reader& r) {
        r.get("rank", c.ssar.rank);
        r.get("interval", c.ssar.interval);
        r.get("freeze_second_order", c.ssar.freeze_second_order);
        s.clear();
        r.get("mode", s);
        if (s == "all") c.ssar.all_modes = true;
        else if (!s.empty()) {
            c.ssar.all_modes = false;
            c.ssar.mode = cache_mode_from_string(s);
        }
        s.clear();
        r.get("level", s);
        if (!s.empty()) c.ssar.level = cache_level_from_string(s);
    });
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string config_to_json(const Config& c) {
    json j;
    j["workload"] = {{"L", c.workload.L},
                     {"d", c.workload.d},
                     {"T", c.workload.T},
                     {"rho", c.workload.rho},
                     {"seed", c.workload.seed},
                     {"noise_mode", std::string(to_string(c.workload.noise_mode))},
                     {"drift", c.workload.drift}};
    j["quant"] = {{"wbits", c.quant.wbits},
                  {"abits", c.quant.abits},
                  {"granularity", std::string(to_string(c.quant.act_granularity))},
                  {"rotate", c.rotate}};
    j["mask"] = {{"kind", std::string(to_string(c.mask.kind))},
                 {"density", c.mask.density},
                 {"block", c.mask.block},
                 {"seed", c.mask.seed}};
    j["msad"] = {{"stride", c.msad.stride},
                 {"k", c.msad.salient_k},
                 {"lambda_global", c.msad.lambda_global},
                 {"lambda_local", c.msad.lambda_local}};
    j["calib"] = {{"epochs", c.calib.epochs},
                  {"samples", c.calib.samples},
                  {"lr_scale", c.calib.lr_scale},
                  {"lr_affine", c.calib.lr_affine},
                  {"lr_decay", c.calib.lr_decay == LrDecay::Cosine ? "cosine" : "constant"},
                  {"mask_in_calib", c.mask_in_calib},
                  {"optimizer", c.calib.optimizer == Optimizer::Momentum ? "momentum" : "adamw"},
                  {"grad_rule", c.calib.grad_rule == GradRule::StraightThrough ? "straight_through" : "frozen_code"}};
    j["ssar"] = {{"rank", c.ssar.rank},
                 {"interval", c.ssar.interval},
                 {"mode", c.ssar.all_modes ? std::string("all") : std::string(to_string(c.ssar.mode))},
                 {"level", std::string(to_string(c.ssar.level))},
                 {"freeze_second_order", c.ssar.freeze_second_order}};
    return j.dump(2);
}

std::string apply_override(std::string_view json_text, const std::string& dotted_key, const std::string& json_value) {
    json root;
    json value;
    try {
        root = json::parse(json_text);
        value = json::parse(json_value);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("override ") + dotted_key + ": " + e.what());
    }
    json* node = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = dotted_key.find('.', start);
        const std::string part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("malformed grid key '" + dotted_key + "'");
        if (!node->is_object()) throw ConfigError("grid key '" + dotted_key + "' crosses a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = json::object();
        start = dot + 1;
    }
    return root.dump();
}

}  // namespace qsl
