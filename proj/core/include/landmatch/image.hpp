#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "landmatch/error.hpp"

namespace landmatch {

/// Sub-pixel location in (row, col) order.
struct Point2 {
  double row = 0.0;
  double col = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Dense row-major 2D grid.
template <typename T>
class Array2D {
 public:
  Array2D() = default;
  Array2D(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ArgumentError("Array2D: negative shape");
  }

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const noexcept {
    return data_[static_cast<std::size_t>(r) * cols_ + c];
  }

  bool in_bounds(int r, int c) const noexcept { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  friend bool operator==(const Array2D&, const Array2D&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

/// Physical pixel spacing in millimetres.
struct Spacing {
  double row_mm = 1.0;
  double col_mm = 1.0;

  friend bool operator==(const Spacing&, const Spacing&) = default;
};

inline constexpr int kMinImageSide = 16;

/// 2D scalar intensity image. At least 16x16 pixels, strictly positive spacing.
class GrayImage {
 public:
  GrayImage() = default;
  explicit GrayImage(Array2D<float> pixels, Spacing spacing = {});

  int rows() const noexcept { return pixels_.rows(); }
  int cols() const noexcept { return pixels_.cols(); }
  const Array2D<float>& pixels() const noexcept { return pixels_; }
  Array2D<float>& pixels() noexcept { return pixels_; }
  const Spacing& spacing() const noexcept { return spacing_; }

  float operator()(int r, int c) const noexcept { return pixels_(r, c); }

  float max_intensity() const;
  float min_intensity() const;
  double mean_intensity() const;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  Array2D<float> pixels_;
  Spacing spacing_;
};

/// Foreground mask with values exactly 0 or 1.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int rows, int cols, std::uint8_t fill = 0);
  explicit BinaryMask(Array2D<std::uint8_t> values);

  int rows() const noexcept { return values_.rows(); }
  int cols() const noexcept { return values_.cols(); }
  const Array2D<std::uint8_t>& values() const noexcept { return values_; }

  bool at(int r, int c) const noexcept { return values_(r, c) != 0; }
  void set(int r, int c, bool on) noexcept { values_(r, c) = on ? 1 : 0; }
  std::size_t count() const noexcept;
  bool same_shape(const GrayImage& img) const noexcept {
    return rows() == img.rows() && cols() == img.cols();
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Array2D<std::uint8_t> values_;
};

/// Bilinear sample of a grid at a sub-pixel location; coordinates are
/// clamped to the grid, so callers check domain membership themselves.
template <typename T>
double bilinear_sample(const Array2D<T>& grid, double row, double col) {
  const double r = std::clamp(row, 0.0, static_cast<double>(grid.rows() - 1));
  const double c = std::clamp(col, 0.0, static_cast<double>(grid.cols() - 1));
  const int r0 = static_cast<int>(r);
  const int c0 = static_cast<int>(c);
  const int r1 = std::min(r0 + 1, grid.rows() - 1);
  const int c1 = std::min(c0 + 1, grid.cols() - 1);
  const double fr = r - r0;
  const double fc = c - c0;
  return (1.0 - fr) * ((1.0 - fc) * grid(r0, c0) + fc * grid(r0, c1)) +
         fr * ((1.0 - fc) * grid(r1, c0) + fc * grid(r1, c1));
}

/// Separable Gaussian blur with reflected borders; sigma <= 0 returns a copy.
Array2D<float> gaussian_blur(const Array2D<float>& grid, double sigma);

}  // namespace landmatch
