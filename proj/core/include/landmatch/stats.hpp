#pragma once

#include <span>

namespace landmatch {

/// Quantile by linear interpolation between closest ranks (inclusive),
/// i.e. position q * (n - 1) in the sorted sample. Empty input yields 0.
double quantile(std::span<const double> values, double q);

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

Quartiles quartiles(std::span<const double> values);

}  // namespace landmatch
