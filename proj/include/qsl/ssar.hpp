// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <vector>

#include "qsl/numerics.hpp"

namespace qsl {

/// Cached sparse-attention correction built at a reference step.
///
/// `delta_ref` is the first-order residual A_full - A_sq at t_ref,
/// `second_term` the (optionally rank-truncated) change of that residual
/// since t_ref_prev, and `combined` their sum. Only `combined` is needed at
/// apply time, so a second-order cache deploys as one matrix, same as a
/// first-order one.
struct ResidualCache {
    Matrix delta_ref;
    Matrix second_term;
    Matrix combined;
    Index t_ref = 0;
    Index t_ref_prev = -1;  // -1 for a first-order cache
    Index rank = 0;         // 0 when the second term is not truncated

    bool is_second_order() const { return t_ref_prev >= 0; }
    /// Matrices that must be kept between refreshes.
    static constexpr int deployed_matrices() { return 1; }
    Index deployed_elements() const { return combined.size(); }
};

Matrix residual(const Matrix& a_full, const Matrix& a_sq);

ResidualCache first_order_build(const Matrix& a_full_ref, const Matrix& a_sq_ref, Index t_ref = 0);

/// `rank` nullopt keeps the raw second-order difference; otherwise it is
/// projected onto its top-`rank` singular components.
ResidualCache second_order_build(const Matrix& a_full_ref, const Matrix& a_sq_ref, const Matrix& a_full_prev,
                                 const Matrix& a_sq_prev, std::optional<Index> rank, Index t_ref = 1,
                                 Index t_ref_prev = 0);

/// A_sq + delta_ref.
Matrix first_order_apply(const Matrix& a_sq_t, const ResidualCache& cache);
/// A_sq + combined.
Matrix second_order_apply(const Matrix& a_sq_t, const ResidualCache& cache);

/// Full-attention schedule. Refreshes land on multiples of `interval`; with
/// `reference_pairs` the step after each refresh is also computed in full so
/// the second-order term can be formed from two consecutive residuals.
struct RefreshPlan {
    Index total_steps = 0;
    Index interval = 0;
    std::vector<Index> refresh_steps;
    std::vector<Index> pair_steps;

    bool is_refresh(Index t) const;
    bool is_pair(Index t) const;
    bool is_full(Index t) const { return is_refresh(t) || is_pair(t); }
    Index full_count() const { return Index(refresh_steps.size() + pair_steps.size()); }
    Index corrected_count() const { return total_steps - full_count(); }
    /// (full + corrected * density) / total.
    double attention_cost_fraction(double density) const;
};

RefreshPlan make_refresh_plan(Index total, Index interval, bool reference_pairs = true);

struct ResidualPairResult {
    double e_second = 0.0;
    double e_first = 0.0;
    Index pairs = 0;
};

/// Mean first- and second-order approximation errors over all
/// (t_ref, t) with 1 <= t - t_ref <= tau, using t_ref - 1 as the
/// second reference. Errors come from the residual identities
/// ||D_t - D_ref|| and ||(D_t - D_ref) - (D_ref - D_ref-1)||.
ResidualPairResult residual_pair_check(const std::vector<Matrix>& residuals, Index tau);

struct SpectrumRow {
    Index step = 0;
    Vector singular_values;
    double leading_alignment = 0.0;   // mean cos of principal angles, top-r subspaces vs previous step
    double trailing_alignment = 0.0;  // same for the next r directions
};

/// Singular values of D_t - D_{t-1} for t >= 1 and the alignment of their
/// leading / trailing r-dimensional left subspaces with the previous step.
std::vector<SpectrumRow> residual_spectrum(const std::vector<Matrix>& residuals, Index r);

}  // namespace qsl
