// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#include "qsl/numerics.hpp"

#include <random>
#include <string>

namespace qsl {

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    out.noalias() = a * b;
    return out;
}

IndexSet argsort_descending(const Vector& v) {
    IndexSet order(static_cast<std::size_t>(v.size()));
    std::iota(order.begin(), order.end(), Index(0));
    std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return v(x) > v(y); });
    return order;
}

IndexSet top_k_indices(const Vector& v, Index k) {
    if (k < 1 || k > v.size()) {
        throw ParameterError("top_k_indices: k=" + std::to_string(k) + " outside [1, " +
                             std::to_string(v.size()) + "]");
    }
    IndexSet order(static_cast<std::size_t>(v.size()));
    std::iota(order.begin(), order.end(), Index(0));
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index x, Index y) {
        return v(x) > v(y) || (v(x) == v(y) && x < y);
    });
    order.resize(static_cast<std::size_t>(k));
    return order;
}

Matrix random_orthogonal(Index dim, std::uint64_t seed) {
    if (dim < 1) throw ParameterError("random_orthogonal: dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix g(dim, dim);
    for (Index j = 0; j < dim; ++j)
        for (Index i = 0; i < dim; ++i) g(i, j) = gauss(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(dim, dim);
    const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Index j = 0; j < dim; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    return q;
}

double spectral_norm(const Matrix& m, int iterations) {
    if (m.size() == 0) return 0.0;
    Vector x = Vector::Ones(m.cols());
    for (Index i = 0; i < x.size(); ++i) x(i) += 1e-3 * double(i % 7);
    x.normalize();
    double estimate = 0.0;
    for (int it = 0; it < iterations; ++it) {
        Vector y = m.transpose() * (m * x);
        const double ny = y.norm();
        if (ny == 0.0) return 0.0;
        estimate = std::sqrt(x.dot(y));
        x = y / ny;
    }
    return std::max(estimate, (m * x).norm());
}

}  // namespace qsl
