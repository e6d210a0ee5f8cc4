#pragma once

#include <vector>

#include "landmatch/tensor.hpp"

namespace landmatch {

struct IndexPair {
  int i = 0;
  int j = 0;

  friend bool operator==(const IndexPair&, const IndexPair&) = default;
};

/// Accepts (i, j) iff j is the row-best and i the column-best under both
/// c_hat (maximum) and d2 (minimum); ties go to the lower index. The
/// result is one-to-one and ordered by ascending i.
template <typename T>
std::vector<IndexPair> inverse_consistent_match(const MatrixR<T>& c_hat, const MatrixR<T>& d2);

}  // namespace landmatch
