#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace opsense::stats {

// Ranks starting at 1; tied values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

// Spearman rank correlation (Pearson on average ranks); nullopt when either
// input is constant.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
double stddev(std::span<const double> v);  // population
// Linear-interpolated quantile, q in [0, 1].
double quantile(std::vector<double> v, double q);
double median(std::vector<double> v);

// Correlation with an explanation when it is undefined.
struct Correlation {
  std::optional<double> value;
  std::string note;
  std::size_t samples = 0;
};
Correlation spearman_report(std::span<const double> x, std::span<const double> y);

}  // namespace opsense::stats
