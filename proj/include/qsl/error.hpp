// Copyright 2026 The QSL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar argument is outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A softmax row has no finite logit.
class DegenerateRowError : public Error {
public:
    DegenerateRowError(std::size_t row)
        : Error("degenerate softmax row " + std::to_string(row) + ": every logit is masked"),
          row_(row) {}
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

/// An iterative method failed to converge.
class NumericalError : public Error {
public:
    NumericalError(const std::string& what, std::size_t iterations)
        : Error(what + " (after " + std::to_string(iterations) + " iterations)"),
          iterations_(iterations) {}
    std::size_t iterations() const noexcept { return iterations_; }

private:
    std::size_t iterations_;
};

/// Calibration loss blew up; carries the per-epoch trace up to the failure.
class CalibrationDivergence : public Error {
public:
    CalibrationDivergence(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

/// A metric is undefined for its input (e.g. PSNR against a constant reference).
class MetricUndefined : public Error {
public:
    using Error::Error;
};

/// Malformed or missing configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace qsl
