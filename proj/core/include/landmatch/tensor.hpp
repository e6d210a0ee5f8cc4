#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace landmatch {

template <typename T>
using MatrixR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major (C, H, W) activation volume.
template <typename T>
struct Tensor3 {
  int channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Tensor3() = default;
  Tensor3(int c, int r, int w, T fill = T{})
      : channels(c), rows(r), cols(w), data(static_cast<std::size_t>(c) * r * w, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(rows) * cols; }
  T& at(int c, int r, int w) noexcept { return data[c * plane() + static_cast<std::size_t>(r) * cols + w]; }
  const T& at(int c, int r, int w) const noexcept {
    return data[c * plane() + static_cast<std::size_t>(r) * cols + w];
  }
  T* channel(int c) noexcept { return data.data() + c * plane(); }
  const T* channel(int c) const noexcept { return data.data() + c * plane(); }
  bool same_shape(const Tensor3& o) const noexcept {
    return channels == o.channels && rows == o.rows && cols == o.cols;
  }
};

}  // namespace landmatch
