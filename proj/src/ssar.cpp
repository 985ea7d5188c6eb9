// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/ssar.hpp"

#include <string>

namespace qsl {

namespace {

void same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError(std::string(what) + ": shape mismatch");
}

}  // namespace

Matrix residual(const Matrix& a_full, const Matrix& a_sq) {
    same_shape(a_full, a_sq, "residual");
    return a_full - a_sq;
}

ResidualCache first_order_build(const Matrix& a_full_ref, const Matrix& a_sq_ref, Index t_ref) {
    ResidualCache c;
    c.delta_ref = residual(a_full_ref, a_sq_ref);
    c.second_term = Matrix::Zero(c.delta_ref.rows(), c.delta_ref.cols());
    c.combined = c.delta_ref;
    c.t_ref = t_ref;
    return c;
}

ResidualCache second_order_build(const Matrix& a_full_ref, const Matrix& a_sq_ref, const Matrix& a_full_prev,
                                 const Matrix& a_sq_prev, std::optional<Index> rank, Index t_ref, Index t_ref_prev) {
    same_shape(a_full_ref, a_full_prev, "second_order_build");
    ResidualCache c;
    c.delta_ref = residual(a_full_ref, a_sq_ref);
    const Matrix raw = c.delta_ref - residual(a_full_prev, a_sq_prev);
    if (rank) {
        const Index full = std::min(raw.rows(), raw.cols());
        if (*rank < 1 || *rank > full) {
            throw ParameterError("second_order_build: rank " + std::to_string(*rank) + " outside [1, " +
                                 std::to_string(full) + "]");
        }
        // Full rank keeps every component, so skip the factorisation round trip.
        c.second_term = *rank == full ? raw : truncate_rank(svd(raw), *rank);
        c.rank = *rank;
    } else {
        c.second_term = raw;
    }
    c.combined = c.delta_ref + c.second_term;
    c.t_ref = t_ref;
    c.t_ref_prev = t_ref_prev;
    return c;
}

Matrix first_order_apply(const Matrix& a_sq_t, const ResidualCache& cache) {
    same_shape(a_sq_t, cache.delta_ref, "first_order_apply");
    return a_sq_t + cache.delta_ref;
}

Matrix second_order_apply(const Matrix& a_sq_t, const ResidualCache& cache) {
    same_shape(a_sq_t, cache.combined, "second_order_apply");
    return a_sq_t + cache.combined;
}

bool RefreshPlan::is_refresh(Index t) const {
    return std::binary_search(refresh_steps.begin(), refresh_steps.end(), t);
}

bool RefreshPlan::is_pair(Index t) const { return std::binary_search(pair_steps.begin(), pair_steps.end(), t); }

double RefreshPlan::attention_cost_fraction(double density) const {
    return (double(full_count()) + double(corrected_count()) * density) / double(total_steps);
}

RefreshPlan make_refresh_plan(Index total, Index interval, bool reference_pairs) {
    if (interval < 2) throw ParameterError("refresh interval must be >= 2, got " + std::to_string(interval));
    if (total < interval) throw ParameterError("total steps must be >= interval");
    RefreshPlan p;
    p.total_steps = total;
    p.interval = interval;
    for (Index t = 0; t < total; t += interval) {
        p.refresh_steps.push_back(t);
        if (reference_pairs && t + 1 < total) p.pair_steps.push_back(t + 1);
    }
    return p;
}

ResidualPairResult residual_pair_check(const std::vector<Matrix>& residuals, Index tau) {
    if (tau < 1) throw ParameterError("residual_pair_check: tau must be >= 1");
    const auto n = static_cast<Index>(residuals.size());
    if (n < tau + 2) {
        throw ParameterError("residual_pair_check: trace of " + std::to_string(n) + " steps is shorter than tau + 2");
    }
    ResidualPairResult r;
    for (Index ref = 1; ref < n; ++ref) {
        const Matrix& d_ref = residuals[static_cast<std::size_t>(ref)];
        const Matrix step = d_ref - residuals[static_cast<std::size_t>(ref - 1)];
        for (Index t = ref + 1; t <= std::min(n - 1, ref + tau); ++t) {
            const Matrix drift = residuals[static_cast<std::size_t>(t)] - d_ref;
            r.e_first += frobenius(drift);
            r.e_second += frobenius(drift - step);
            ++r.pairs;
        }
    }
    r.e_first /= double(r.pairs);
    r.e_second /= double(r.pairs);
    return r;
}

namespace {

double mean_principal_cos(const Matrix& a, const Matrix& b) {
    if (a.cols() == 0) return 0.0;
    return svd(Matrix(a.transpose() * b)).S.mean();
}

}  // namespace

std::vector<SpectrumRow> residual_spectrum(const std::vector<Matrix>& residuals, Index r) {
    if (residuals.size() < 2) throw ParameterError("residual_spectrum: need at least two steps");
    if (r < 1) throw ParameterError("residual_spectrum: r must be >= 1");
    std::vector<SpectrumRow> rows;
    SvdFactors<double> prev;
    for (std::size_t t = 1; t < residuals.size(); ++t) {
        same_shape(residuals[t], residuals[t - 1], "residual_spectrum");
        SvdFactors<double> f = svd(Matrix(residuals[t] - residuals[t - 1]));
        SpectrumRow row;
        row.step = static_cast<Index>(t);
        row.singular_values = f.S;
        if (t >= 2) {
            const Index k = std::min<Index>(r, f.U.cols());
            const Index k2 = std::min<Index>(r, f.U.cols() - k);
            row.leading_alignment = mean_principal_cos(f.U.leftCols(k), prev.U.leftCols(k));
            row.trailing_alignment = k2 > 0 ? mean_principal_cos(f.U.middleCols(k, k2), prev.U.middleCols(k, k2)) : 0.0;
        }
        rows.push_back(std::move(row));
        prev = std::move(f);
    }
    return rows;
}

}  // namespace qsl
