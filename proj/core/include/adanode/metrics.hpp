#pragma once

// Point-forecast metrics. CC and CCC use population moments.

#include <span>

namespace adanode {

// UsageError for empty input or a length mismatch.
double mse(std::span<const double> pred, std::span<const double> truth);

// UsageError below two points; UndefinedCorrelationError if either side is constant.
double pearson_cc(std::span<const double> pred, std::span<const double> truth);

// 2 cov / (var_p + var_t + (mean_p - mean_t)^2). Two equal constants give 1;
// any other constant input is UndefinedCorrelationError.
double ccc(std::span<const double> pred, std::span<const double> truth);

}  // namespace adanode
