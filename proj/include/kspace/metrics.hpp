#pragma once

#include <optional>
#include <vector>

namespace kspace::eval {

// Probability that a uniformly random positive outranks a uniformly random
// negative, ties credited 0.5; computed from rank statistics in O(n log n).
// Returns nullopt when only one class is present.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace kspace::eval
