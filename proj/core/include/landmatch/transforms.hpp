#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "landmatch/image.hpp"

namespace landmatch {

struct Range {
  double lo = 0.0;
  double hi = 0.0;

  friend bool operator==(const Range&, const Range&) = default;
};

enum class IntensityMode { brightness, contrast };

/// Brightness adds magnitude * max intensity; contrast scales about the
/// image mean by (1 + magnitude).
struct IntensityJitter {
  IntensityMode mode = IntensityMode::brightness;
  double magnitude = 0.0;
};

/// phi(x) = matrix * x + translation, with x in (row, col) pixel units.
struct AffineTransform2D {
  Eigen::Matrix2d matrix = Eigen::Matrix2d::Identity();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  Point2 apply(Point2 p) const noexcept;
  /// (*this) applied after `first`: x -> this(first(x)).
  AffineTransform2D after(const AffineTransform2D& first) const;
  double determinant() const noexcept { return matrix.determinant(); }
};

/// Rotation, isotropic scale and shear about `center`, then translation.
AffineTransform2D make_affine(double rotation_deg, double scale, double shear, Point2 translation, Point2 center);

struct GaussianBlob {
  Point2 center;
  double amp_row = 0.0;
  double amp_col = 0.0;
  double sigma = 1.0;
};

/// Displacement u(x) = sum_k a_k exp(-|x - c_k|^2 / (2 sigma_k^2)) on the
/// target grid; phi(x) = x + u(x).
class ElasticField {
 public:
  ElasticField() = default;
  ElasticField(int rows, int cols, std::vector<GaussianBlob> blobs);

  int rows() const noexcept { return du_row_.rows(); }
  int cols() const noexcept { return du_row_.cols(); }
  const std::vector<GaussianBlob>& blobs() const noexcept { return blobs_; }
  const Array2D<double>& du_row() const noexcept { return du_row_; }
  const Array2D<double>& du_col() const noexcept { return du_col_; }

  /// Bilinear interpolation of the raster field (clamped at the border).
  Point2 displacement_at(Point2 p) const;
  Point2 apply(Point2 p) const;

 private:
  std::vector<GaussianBlob> blobs_;
  Array2D<double> du_row_;
  Array2D<double> du_col_;
};

enum class TransformFamily { identity, brightness, contrast, rotation, scaling, shearing, affine, elastic };

std::string_view family_name(TransformFamily f);
TransformFamily parse_family(std::string_view name);
bool is_intensity_family(TransformFamily f);

/// A sampled transformation: an optional intensity jitter applied first,
/// then an optional geometric warp. Immutable after construction.
class Transform {
 public:
  using Geometry = std::variant<std::monostate, AffineTransform2D, ElasticField>;

  Transform() = default;
  Transform(TransformFamily family, std::optional<IntensityJitter> intensity, Geometry geometry);

  static Transform identity() { return {}; }

  TransformFamily family() const noexcept { return family_; }
  const std::optional<IntensityJitter>& intensity() const noexcept { return intensity_; }
  const Geometry& geometry() const noexcept { return geometry_; }
  bool is_geometric() const noexcept { return !std::holds_alternative<std::monostate>(geometry_); }

  /// Backward map phi: target location -> reference location.
  Point2 project_to_reference(Point2 pt_target) const;

 private:
  TransformFamily family_ = TransformFamily::identity;
  std::optional<IntensityJitter> intensity_;
  Geometry geometry_;
};

struct TransformSpec {
  TransformFamily family = TransformFamily::affine;
  Range intensity_magnitude{-0.2, 0.2};
  double intensity_cap = 0.2;
  Range rotation_deg{-15.0, 15.0};
  Range scale{0.85, 1.15};
  Range shear{-0.1, 0.1};
  Range translation_frac{-0.15, 0.15};
  int elastic_blobs = 4;
  Range elastic_sigma_frac{0.25, 0.5};
  Range elastic_amplitude_px{8.0, 20.0};

  void validate() const;
  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

/// Deterministic given (spec, shape, rng state).
Transform sample_transform(const TransformSpec& spec, int rows, int cols, std::mt19937_64& rng);

/// Backward warp with bilinear interpolation; samples outside the reference
/// domain take `background`.
GrayImage warp_image(const GrayImage& img, const Transform& t, float background = 0.0f);

/// Same map as warp_image with nearest-neighbour lookup; outside -> 0.
BinaryMask warp_mask(const BinaryMask& mask, const Transform& t);

struct DisplacementStats {
  double median_mm = 0.0;
  double q1_mm = 0.0;
  double q3_mm = 0.0;
};

DisplacementStats displacement_stats(const Transform& t, const BinaryMask& mask, Spacing spacing = {});

/// JSON record of the family and drawn parameters. Elastic fields store
/// the blob list and shape; the raster is regenerated on load.
std::string transform_to_json(const Transform& t);
Transform transform_from_json(std::string_view text);

}  // namespace landmatch
