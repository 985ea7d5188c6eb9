// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace qsl {

using nlohmann::json;

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

constexpr std::array<const char*, 4> kProjNames{"q", "k", "v", "o"};

template <typename F>
auto parse_json(std::string_view text, const char* what, F&& body) {
    try {
        return body(json::parse(text));
    } catch (const json::exception& e) {
        throw ConfigError(std::string(what) + ": " + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(std::string(what) + ": " + e.what());
    }
}

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vec(const json& j) {
    const auto xs = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(xs.data(), static_cast<Index>(xs.size()));
}

json qp_json(const QuantParams& p) {
    return {{"bits", p.bits},
            {"granularity", std::string(to_string(p.granularity))},
            {"scales", p.scales},
            {"zero_points", p.zero_points}};
}

QuantParams json_qp(const json& j) {
    QuantParams p;
    p.bits = j.at("bits").get<int>();
    p.granularity = granularity_from_string(j.at("granularity").get<std::string>());
    p.scales = j.at("scales").get<std::vector<double>>();
    p.zero_points = j.at("zero_points").get<std::vector<int>>();
    if (p.bits < 1 || p.bits > 30) throw ParameterError("bits out of range");
    if (p.scales.size() != p.zero_points.size()) throw ParameterError("scales and zero_points differ in length");
    return p;
}

json terms_json(const DistillTerms& t) {
    return {{"l_quant", t.l_quant}, {"l_global", t.l_global}, {"l_local", t.l_local}, {"total", t.total}};
}

DistillTerms json_terms(const json& j) {
    DistillTerms t;
    t.l_quant = j.at("l_quant").get<double>();
    t.l_global = j.at("l_global").get<double>();
    t.l_local = j.at("l_local").get<double>();
    t.total = j.at("total").get<double>();
    return t;
}

}  // namespace

std::string quant_params_to_json(const QuantParams& p) { return qp_json(p).dump(2); }

QuantParams quant_params_from_json(std::string_view text) {
    return parse_json(text, "QuantParams", [](const json& j) { return json_qp(j); });
}

std::string calib_result_to_json(const CalibResult& r) {
    json j;
    const BlockQuantParams& p = r.params;
    j["settings"] = {{"wbits", p.settings.wbits},
                     {"abits", p.settings.abits},
                     {"act_granularity", std::string(to_string(p.settings.act_granularity))}};
    json steps;
    for (std::size_t i = 0; i < 4; ++i) steps[kProjNames[i]] = vec_json(p.weight_step[i]);
    j["params"] = {{"smoothing", vec_json(p.smoothing)},
                   {"weight_step", steps},
                   {"act_in_clip", p.act_in_clip},
                   {"act_out_clip", p.act_out_clip}};
    json wq;
    for (std::size_t i = 0; i < 4; ++i) wq[kProjNames[i]] = qp_json(r.weight_params[i]);
    j["weight_quant"] = wq;
    j["trace"] = r.loss_trace;
    json terms = json::array();
    for (const auto& t : r.term_trace) terms.push_back(terms_json(t));
    j["term_trace"] = terms;
    j["initial"] = terms_json(r.initial);
    j["final"] = terms_json(r.final_report);
    j["best_epoch"] = r.best_epoch;
    return j.dump(2);
}

CalibResult calib_result_from_json(std::string_view text) {
    return parse_json(text, "CalibResult", [](const json& j) {
        CalibResult r;
        BlockQuantParams& p = r.params;
        const json& s = j.at("settings");
        p.settings.wbits = s.at("wbits").get<int>();
        p.settings.abits = s.at("abits").get<int>();
        p.settings.act_granularity = granularity_from_string(s.at("act_granularity").get<std::string>());
        const json& pj = j.at("params");
        p.smoothing = json_vec(pj.at("smoothing"));
        for (std::size_t i = 0; i < 4; ++i) p.weight_step[i] = json_vec(pj.at("weight_step").at(kProjNames[i]));
        p.act_in_clip = pj.at("act_in_clip").get<double>();
        p.act_out_clip = pj.at("act_out_clip").get<double>();
        for (std::size_t i = 0; i < 4; ++i) {
            if (p.weight_step[i].size() != p.weight_step[0].size()) {
                throw ParameterError("weight_step vectors differ in length");
            }
            r.weight_params[i] = json_qp(j.at("weight_quant").at(kProjNames[i]));
        }
        if ((p.flatten().array() <= 0.0).any()) throw ParameterError("parameters must be positive");
        r.loss_trace = j.at("trace").get<std::vector<double>>();
        for (const auto& t : j.at("term_trace")) r.term_trace.push_back(json_terms(t));
        r.initial = json_terms(j.at("initial"));
        r.final_report = json_terms(j.at("final"));
        r.best_epoch = j.at("best_epoch").get<int>();
        return r;
    });
}

std::string mask_to_json(const SparsityMask& m) {
    const BoolMatrix& b = m.bits();
    const Index L = m.length();
    std::vector<Index> runs;
    bool first = L > 0 && b(0, 0);
    bool cur = first;
    Index run = 0;
    for (Index i = 0; i < L; ++i) {
        for (Index j = 0; j < L; ++j) {
            if (b(i, j) == cur) {
                ++run;
            } else {
                runs.push_back(run);
                cur = b(i, j);
                run = 1;
            }
        }
    }
    if (run > 0) runs.push_back(run);
    return json{{"length", L}, {"density", m.density()}, {"first", first}, {"runs", runs}}.dump();
}

SparsityMask mask_from_json(std::string_view text) {
    return parse_json(text, "mask", [](const json& j) {
        const Index L = j.at("length").get<Index>();
        if (L < 1) throw ParameterError("mask length must be >= 1");
        bool cur = j.at("first").get<bool>();
        const auto runs = j.at("runs").get<std::vector<Index>>();
        BoolMatrix b(L, L);
        Index at = 0;
        for (Index r : runs) {
            if (r < 1 || at + r > L * L) throw ParameterError("mask runs do not tile the L x L pattern");
            for (Index k = at; k < at + r; ++k) b(k / L, k % L) = cur;
            at += r;
            cur = !cur;
        }
        if (at != L * L) throw ParameterError("mask runs do not tile the L x L pattern");
        return SparsityMask(std::move(b));
    });
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
    out << "row,col,value\n";
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) out << i << ',' << j << ',' << format_double(m(i, j)) << '\n';
}

void write_loss_trace_csv(std::ostream& out, const CalibResult& r) {
    out << "iter,l_quant,l_global,l_local,total\n";
    auto row = [&out](std::size_t it, const DistillTerms& t) {
        out << it << ',' << format_double(t.l_quant) << ',' << format_double(t.l_global) << ','
            << format_double(t.l_local) << ',' << format_double(t.total) << '\n';
    };
    row(0, r.initial);
    for (std::size_t i = 0; i < r.term_trace.size(); ++i) row(i + 1, r.term_trace[i]);
}

void write_errors_csv(std::ostream& out, const RunReport& r) {
    out << "step,mode,frob_err,psnr\n";
    for (const ModeSeries& s : r.series) {
        for (std::size_t i = 0; i < s.steps.size(); ++i) {
            out << s.steps[i] << ',' << to_string(s.mode) << ',' << format_double(s.frob_err[i]) << ','
                << format_double(s.psnr[i]) << '\n';
        }
    }
}

void write_spectrum_csv(std::ostream& out, const std::vector<SpectrumRow>& rows) {
    out << "step,k,sigma\n";
    for (const SpectrumRow& r : rows)
        for (Index k = 0; k < r.singular_values.size(); ++k)
            out << r.step << ',' << k << ',' << format_double(r.singular_values(k)) << '\n';
}

void write_alignment_csv(std::ostream& out, const std::vector<SpectrumRow>& rows) {
    out << "step,leading_alignment,trailing_alignment\n";
    for (const SpectrumRow& r : rows) {
        if (r.step < 2) continue;  // alignment needs a previous difference
        out << r.step << ',' << format_double(r.leading_alignment) << ',' << format_double(r.trailing_alignment)
            << '\n';
    }
}

namespace {

// json has no inf; store non-finite numbers as strings.
json num(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

}  // namespace

std::string run_summary_to_json(const RunReport& r, const Config& c) {
    json j;
    json modes = json::array();
    for (const ModeSeries& s : r.series) {
        modes.push_back({{"mode", std::string(to_string(s.mode))},
                         {"corrected_steps", s.steps.size()},
                         {"mean_frob", num(s.mean_frob)},
                         {"mean_psnr", num(s.mean_psnr)},
                         {"max_row_sum_deviation", num(s.max_row_sum_deviation)}});
    }
    j["modes"] = modes;
    j["attention_cost_fraction"] = num(r.attention_cost_fraction);
    j["refresh_steps"] = r.plan.refresh_steps;
    j["pair_steps"] = r.plan.pair_steps;
    j["refresh_exact"] = r.refresh_exact;
    j["max_identity_gap"] = num(r.max_identity_gap);
    j["cache_elements"] = {{"first", r.first_cache_elements}, {"ssar", r.ssar_cache_elements}};
    j["shift"] = {{"delta_sparse", num(r.shift.delta_sparse)},
                  {"delta_quant", num(r.shift.delta_quant)},
                  {"delta_total", num(r.shift.delta_total)},
                  {"interaction", num(r.shift.interaction)}};
    j["config"] = json::parse(config_to_json(c));
    return j.dump(2);
}

namespace {

void write_blob(std::ostream& out, const Matrix& m) {
    static_assert(std::endian::native == std::endian::little, "cache blobs are little-endian");
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_blob(std::istream& in, Index rows, Index cols) {
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ConfigError("cache blob is truncated");
    return m;
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
    std::filesystem::path p = stem;
    p += ext;
    return p;
}

}  // namespace

void write_cache(const std::filesystem::path& stem, const ResidualCache& c) {
    const auto bin = with_ext(stem, ".bin");
    json h{{"rows", c.combined.rows()},
           {"cols", c.combined.cols()},
           {"t_ref", c.t_ref},
           {"t_ref_prev", c.t_ref_prev},
           {"rank", c.rank},
           {"dtype", "float64"},
           {"endian", "little"},
           {"order", "column-major"},
           {"matrices", {"combined", "delta_ref", "second_term"}},
           {"blob", bin.filename().string()}};
    write_text_file(with_ext(stem, ".json"), h.dump(2));
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + bin.string() + "'");
    write_blob(out, c.combined);
    write_blob(out, c.delta_ref);
    write_blob(out, c.second_term);
}

ResidualCache read_cache(const std::filesystem::path& stem) {
    const std::string header = read_text_file(with_ext(stem, ".json"));
    return parse_json(header, "cache header", [&](const json& h) {
        const Index rows = h.at("rows").get<Index>();
        const Index cols = h.at("cols").get<Index>();
        if (rows < 1 || cols < 1) throw ParameterError("cache shape must be positive");
        const auto bin = stem.parent_path() / h.at("blob").get<std::string>();
        std::ifstream in(bin, std::ios::binary);
        if (!in) throw ConfigError("cannot open '" + bin.string() + "'");
        ResidualCache c;
        c.combined = read_blob(in, rows, cols);
        c.delta_ref = read_blob(in, rows, cols);
        c.second_term = read_blob(in, rows, cols);
        c.t_ref = h.at("t_ref").get<Index>();
        c.t_ref_prev = h.at("t_ref_prev").get<Index>();
        c.rank = h.at("rank").get<Index>();
        return c;
    });
}

std::vector<ModeSummary> summarize_errors_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "step,mode,frob_err,psnr") {
        throw ConfigError("errors.csv: expected header 'step,mode,frob_err,psnr'");
    }
    std::vector<ModeSummary> out;
    std::map<std::string, std::size_t> index;
    std::vector<Index> finite;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 4) throw ConfigError("errors.csv line " + std::to_string(lineno) + ": expected 4 fields");
        auto it = index.find(f[1]);
        if (it == index.end()) {
            it = index.emplace(f[1], out.size()).first;
            out.push_back({f[1]});
            finite.push_back(0);
        }
        ModeSummary& m = out[it->second];
        double err = 0.0;
        double psnr = 0.0;
        try {
            err = std::stod(f[2]);
            psnr = f[3] == "inf" ? std::numeric_limits<double>::infinity() : std::stod(f[3]);
        } catch (const std::exception&) {
            throw ConfigError("errors.csv line " + std::to_string(lineno) + ": malformed number");
        }
        ++m.steps;
        m.mean_frob += err;
        if (std::isfinite(psnr)) {
            m.mean_psnr += psnr;
            ++finite[it->second];
        }
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].mean_frob /= double(out[i].steps);
        out[i].mean_psnr = finite[i] > 0 ? out[i].mean_psnr / double(finite[i]) : std::numeric_limits<double>::infinity();
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

}  // namespace qsl
