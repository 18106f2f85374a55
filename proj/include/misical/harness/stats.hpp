#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace misical::harness {

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double sample_std(std::span<const double> xs);
double median(std::vector<double> xs);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p_value = 1.0;  ///< two-sided
};

/// Welch's unequal-variance t-test. Needs at least two samples per group.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// Trailing mean over at most `window` values ending at each position; NaNs are skipped.
std::vector<double> moving_average(std::span<const double> xs, std::size_t window);

}  // namespace misical::harness
