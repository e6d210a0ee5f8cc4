#include "landmatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace landmatch {

GrayImage::GrayImage(Array2D<float> pixels, Spacing spacing)
    : pixels_(std::move(pixels)), spacing_(spacing) {
  if (pixels_.rows() < kMinImageSide || pixels_.cols() < kMinImageSide) {
    throw ArgumentError("GrayImage: image must be at least 16x16, got " +
                        std::to_string(pixels_.rows()) + "x" + std::to_string(pixels_.cols()));
  }
  if (!(spacing_.row_mm > 0.0) || !(spacing_.col_mm > 0.0) || !std::isfinite(spacing_.row_mm) ||
      !std::isfinite(spacing_.col_mm)) {
    throw ArgumentError("GrayImage: spacing must be strictly positive");
  }
}

float GrayImage::max_intensity() const {
  const auto v = pixels_.values();
  return *std::max_element(v.begin(), v.end());
}

float GrayImage::min_intensity() const {
  const auto v = pixels_.values();
  return *std::min_element(v.begin(), v.end());
}

double GrayImage::mean_intensity() const {
  const auto v = pixels_.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

BinaryMask::BinaryMask(int rows, int cols, std::uint8_t fill)
    : values_(rows, cols, fill ? std::uint8_t{1} : std::uint8_t{0}) {}

BinaryMask::BinaryMask(Array2D<std::uint8_t> values) : values_(std::move(values)) {
  for (auto& v : values_.values()) {
    if (v > 1) throw ArgumentError("BinaryMask: values must be 0 or 1");
  }
}

std::size_t BinaryMask::count() const noexcept {
  const auto v = values_.values();
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), std::uint8_t{1}));
}

namespace {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Array2D<float> gaussian_blur(const Array2D<float>& grid, double sigma) {
  if (!(sigma > 0.0) || grid.empty()) return grid;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (auto& w : kernel) w /= sum;

  const int rows = grid.rows();
  const int cols = grid.cols();
  Array2D<float> tmp(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * grid(r, reflect_index(c + k, cols));
      }
      tmp(r, c) = static_cast<float>(acc);
    }
  }
  Array2D<float> out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(reflect_index(r + k, rows), c);
      }
      out(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace landmatch
