#pragma once

#include <span>
#include <vector>

namespace lcalsbo::stats {

double mean(std::span<const double> xs);
/// Average of the two middle elements for even counts.
double median(std::span<const double> xs);
double pearson(std::span<const double> xs, std::span<const double> ys);
/// Average ranks for ties.
std::vector<double> ranks(std::span<const double> xs);
double spearman(std::span<const double> xs, std::span<const double> ys);

}  // namespace lcalsbo::stats
