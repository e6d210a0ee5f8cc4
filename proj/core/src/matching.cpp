#include "landmatch/matching.hpp"

#include "landmatch/error.hpp"

namespace landmatch {

template <typename T>
std::vector<IndexPair> inverse_consistent_match(const MatrixR<T>& c_hat, const MatrixR<T>& d2) {
  if (c_hat.rows() != d2.rows() || c_hat.cols() != d2.cols()) {
    throw ArgumentError("inverse_consistent_match: matrices are not aligned");
  }
  const Eigen::Index k1 = c_hat.rows();
  const Eigen::Index k2 = c_hat.cols();
  std::vector<IndexPair> out;
  if (k1 == 0 || k2 == 0) return out;

  std::vector<Eigen::Index> row_c(static_cast<std::size_t>(k1), 0), row_d(static_cast<std::size_t>(k1), 0);
  std::vector<Eigen::Index> col_c(static_cast<std::size_t>(k2), 0), col_d(static_cast<std::size_t>(k2), 0);
  for (Eigen::Index i = 0; i < k1; ++i) {
    for (Eigen::Index j = 0; j < k2; ++j) {
      auto& rc = row_c[static_cast<std::size_t>(i)];
      auto& rd = row_d[static_cast<std::size_t>(i)];
      auto& cc = col_c[static_cast<std::size_t>(j)];
      auto& cd = col_d[static_cast<std::size_t>(j)];
      // Strict comparisons keep the first (lowest) index on ties.
      if (c_hat(i, j) > c_hat(i, rc)) rc = j;
      if (d2(i, j) < d2(i, rd)) rd = j;
      if (c_hat(i, j) > c_hat(cc, j)) cc = i;
      if (d2(i, j) < d2(cd, j)) cd = i;
    }
  }
  for (Eigen::Index i = 0; i < k1; ++i) {
    const Eigen::Index j = row_c[static_cast<std::size_t>(i)];
    if (row_d[static_cast<std::size_t>(i)] == j && col_c[static_cast<std::size_t>(j)] == i &&
        col_d[static_cast<std::size_t>(j)] == i) {
      out.push_back({static_cast<int>(i), static_cast<int>(j)});
    }
  }
  return out;
}

template std::vector<IndexPair> inverse_consistent_match<float>(const MatrixR<float>&, const MatrixR<float>&);
template std::vector<IndexPair> inverse_consistent_match<double>(const MatrixR<double>&, const MatrixR<double>&);

}  // namespace landmatch
