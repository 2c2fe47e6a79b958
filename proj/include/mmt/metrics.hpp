#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmt/common.hpp"

namespace mmt {

// Exact-match fraction.
double accuracy(std::span<const int> preds, std::span<const int> truths);

// Mean absolute error.
double mae(std::span<const double> x, std::span<const double> y);

// Pearson correlation (population moments).
double pearson(std::span<const double> x, std::span<const double> y);

// Concordance correlation: 2*cov / (var_x + var_y + (mean_x - mean_y)^2),
// population (1/n) variances. Throws when the denominator vanishes (both
// series constant with equal means) instead of returning NaN.
double ccc(std::span<const double> x, std::span<const double> y);

struct TargetMetrics {
    std::string name;
    double mae = 0.0;
    double ccc = 0.0;
};

struct MetricsReport {
    std::string task;  // "classify" | "regress"
    std::optional<double> accuracy;
    std::vector<TargetMetrics> targets;
    std::size_t sample_count = 0;

    std::string to_json() const;
};

}  // namespace mmt
