#pragma once

#include <filesystem>
#include <vector>

#include "landmatch/image.hpp"
#include "landmatch/matching.hpp"
#include "landmatch/tensor.hpp"

namespace landmatch {

inline constexpr int kClassicDescriptorDim = 128;

struct ClassicKeypoint {
  Point2 location;  // original-image pixels
  double scale = 0.0;
  double orientation = 0.0;  // radians, atan2(d/drow, d/dcol)
  std::vector<float> descriptor;  // empty until computed, then unit norm
};

struct DogParams {
  int octaves = 3;
  int scales_per_octave = 3;
  double contrast_thresh = 0.01;  // on the [0, 1] rescaled image
  double sigma0 = 1.6;

  friend bool operator==(const DogParams&, const DogParams&) = default;
};

/// Gaussian and difference-of-Gaussian stacks per octave: s + 3 and s + 2 images.
struct DogPyramid {
  std::vector<std::vector<Array2D<float>>> gaussians;
  std::vector<std::vector<Array2D<float>>> dogs;
  int scales_per_octave = 3;
  double sigma0 = 1.6;
};

/// Throws ArgumentError when the smallest octave would be under 8 px.
DogPyramid build_dog_pyramid(const GrayImage& img, int octaves, int scales_per_octave, double sigma0 = 1.6);

struct ScaleSpacePoint {
  int octave = 0;
  int layer = 0;  // DoG index in [1, s]
  int row = 0;    // octave pixels
  int col = 0;
};

/// Strict 26-neighbour extrema with |DoG| > contrast_thresh, ordered by
/// (octave, layer, row, col).
std::vector<ScaleSpacePoint> find_dog_extrema(const DogPyramid& pyr, double contrast_thresh);

/// Keypoints with location, scale and dominant orientation.
std::vector<ClassicKeypoint> detect_keypoints_dog(const GrayImage& img, const DogParams& params = {});
std::vector<ClassicKeypoint> detect_keypoints_dog(const GrayImage& img, int octaves, int scales_per_octave,
                                                  double contrast_thresh);

/// Fills descriptors; keypoints whose window leaves the image, or whose
/// patch has no gradient, are dropped.
std::vector<ClassicKeypoint> compute_descriptors(const GrayImage& img, const std::vector<ClassicKeypoint>& kps,
                                                 const DogParams& params = {});

MatrixR<double> descriptor_matrix(const std::vector<ClassicKeypoint>& kps);

/// Euclidean descriptor distances (not squared), K1 x K2.
MatrixR<double> descriptor_distances(const MatrixR<double>& d1, const MatrixR<double>& d2);

/// Accepts i -> nearest j when d_nearest < ratio * d_second. Empty when d2 has fewer than two rows.
std::vector<IndexPair> match_ratio_test(const MatrixR<double>& d1, const MatrixR<double>& d2, double ratio = 0.75);

/// Mutual nearest neighbours by descriptor distance.
std::vector<IndexPair> match_inverse_consistency(const MatrixR<double>& d1, const MatrixR<double>& d2);

/// Header `row,col,scale,orientation,d0..d127`.
void write_keypoints_csv(const std::filesystem::path& path, const std::vector<ClassicKeypoint>& kps);

/// Descriptors are renormalized to unit length; zero descriptors are a FormatError.
std::vector<ClassicKeypoint> read_keypoints_csv(const std::filesystem::path& path);

}  // namespace landmatch
