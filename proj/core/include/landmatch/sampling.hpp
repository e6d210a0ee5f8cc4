#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "landmatch/image.hpp"
#include "landmatch/transforms.hpp"

namespace landmatch {

/// Grid-constrained landmarks of one image, ordered by descending
/// probability (ties by ascending cell index).
struct LandmarkSet {
  std::vector<Point2> points;  // integer pixel locations
  std::vector<double> probs;   // probability-map value at each point
  std::vector<int> cells;      // row-major grid cell index of each point

  int count() const noexcept { return static_cast<int>(points.size()); }
};

/// One landmark per non-empty cell (masked argmax, ties to the lowest
/// row-major pixel), keeping the K cells with the highest maxima.
template <typename T>
LandmarkSet grid_sample_landmarks(const Array2D<T>& prob_map, const BinaryMask& mask, int cell_px, int k);

struct GroundTruth {
  std::vector<std::uint8_t> p1;
  std::vector<std::uint8_t> p2;
  Array2D<std::uint8_t> c;  // K1 x K2
  long k_pos = 0;
  long k_neg = 0;
};

/// c[i][j] = 1 iff |point1_i - phi(point2_j)| < thresh_px, phi(point2_j)
/// lies inside the reference image and mask1 at round(phi(point2_j)) is 1.
GroundTruth generate_ground_truth(const LandmarkSet& lm1, const LandmarkSet& lm2, const Transform& t,
                                  double thresh_px, const BinaryMask& mask1);

/// Debug export: header `row,col,prob`.
void write_landmarks_csv(const std::filesystem::path& path, const LandmarkSet& set);

}  // namespace landmatch
