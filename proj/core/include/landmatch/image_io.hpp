#pragma once

#include <filesystem>
#include <optional>

#include "landmatch/image.hpp"

namespace landmatch {

/// Linear intensity mapping applied on load: value = stored * slope + intercept.
struct IntensityRescale {
  double slope = 1.0;
  double intercept = 0.0;
};

/// Sidecar location for an image file: same stem, ".json" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

/// Loads an 8/16-bit grayscale PNG, a PGM (P2/P5) or a raw little-endian
/// float32 array. Raw arrays require a JSON sidecar with "shape", "spacing"
/// and "dtype"; for PNG/PGM the sidecar is optional and may carry "spacing"
/// and "rescale": {"slope", "intercept"}.
GrayImage load_grayscale(const std::filesystem::path& path);

/// Writes a 16-bit PNG covering the image's full intensity range plus a
/// sidecar holding spacing and the rescale needed to recover intensities.
void save_png16(const std::filesystem::path& path, const GrayImage& img);

/// Writes raw float32 pixels and a sidecar; lossless.
void save_raw(const std::filesystem::path& path, const GrayImage& img);

/// Masks are persisted as 8-bit PNG with values 0/255.
void save_mask_png(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask load_mask_png(const std::filesystem::path& path);

/// Bilinear resampling to isotropic spacing. Output shape is
/// round(shape * spacing / target_mm); identity spacing passes through.
GrayImage resample_to_isotropic(const GrayImage& img, double target_mm);

/// Threshold (pixels >= intensity_thresh) followed by removal of every
/// 8-connected component with fewer than min_component_px pixels.
BinaryMask compute_valid_mask(const GrayImage& img, float intensity_thresh, int min_component_px);

struct MaskConfig {
  double intensity_thresh_frac = 0.1;  // of the image maximum
  int min_component_px = 64;

  friend bool operator==(const MaskConfig&, const MaskConfig&) = default;
};

BinaryMask default_valid_mask(const GrayImage& img, const MaskConfig& cfg = {});

}  // namespace landmatch
