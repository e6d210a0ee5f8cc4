#include "landmatch/baseline.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace landmatch {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kMinOctaveSide = 8;
constexpr int kOrientationBins = 36;
constexpr int kSpatialBins = 4;
constexpr int kAngleBins = 8;

Array2D<float> downsample2(const Array2D<float>& g) {
  Array2D<float> out((g.rows() + 1) / 2, (g.cols() + 1) / 2);
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < out.cols(); ++c) out(r, c) = g(2 * r, 2 * c);
  }
  return out;
}

// Central-difference gradient at an interior pixel.
void gradient(const Array2D<float>& g, int r, int c, double& gr, double& gc) {
  gr = 0.5 * (static_cast<double>(g(r + 1, c)) - g(r - 1, c));
  gc = 0.5 * (static_cast<double>(g(r, c + 1)) - g(r, c - 1));
}

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  return a < 0.0 ? a + kTwoPi : a;
}

struct Level {
  int octave;
  int layer;
};

Level level_of_scale(double scale, int s, double sigma0) {
  const long total = std::lround(s * std::log2(scale / sigma0));
  if (total <= 0) return {0, 0};
  const int octave = static_cast<int>((total - 1) / s);
  return {octave, static_cast<int>(total - static_cast<long>(octave) * s)};
}

double octave_sigma(const DogPyramid& pyr, int layer) {
  return pyr.sigma0 * std::pow(2.0, static_cast<double>(layer) / pyr.scales_per_octave);
}

double dominant_orientation(const Array2D<float>& g, double row, double col, double sigma) {
  const int r0 = static_cast<int>(std::lround(row));
  const int c0 = static_cast<int>(std::lround(col));
  const double weight_sigma = 1.5 * sigma;
  const int radius = static_cast<int>(std::lround(3.0 * weight_sigma));
  std::vector<double> hist(kOrientationBins, 0.0);
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      const int r = r0 + dr;
      const int c = c0 + dc;
      if (r < 1 || c < 1 || r >= g.rows() - 1 || c >= g.cols() - 1) continue;
      double gr, gc;
      gradient(g, r, c, gr, gc);
      const double w = std::exp(-(dr * dr + dc * dc) / (2.0 * weight_sigma * weight_sigma));
      const double bin = wrap_angle(std::atan2(gr, gc)) / kTwoPi * kOrientationBins;
      hist[static_cast<std::size_t>(static_cast<int>(bin) % kOrientationBins)] += w * std::hypot(gr, gc);
    }
  }
  // Light circular smoothing, then parabolic peak refinement.
  std::vector<double> smooth(kOrientationBins);
  for (int b = 0; b < kOrientationBins; ++b) {
    const auto at = [&](int k) { return hist[static_cast<std::size_t>((k + kOrientationBins) % kOrientationBins)]; };
    smooth[static_cast<std::size_t>(b)] = 0.25 * at(b - 1) + 0.5 * at(b) + 0.25 * at(b + 1);
  }
  int best = 0;
  for (int b = 1; b < kOrientationBins; ++b) {
    if (smooth[static_cast<std::size_t>(b)] > smooth[static_cast<std::size_t>(best)]) best = b;
  }
  const double l = smooth[static_cast<std::size_t>((best + kOrientationBins - 1) % kOrientationBins)];
  const double m = smooth[static_cast<std::size_t>(best)];
  const double rr = smooth[static_cast<std::size_t>((best + 1) % kOrientationBins)];
  const double denom = l - 2.0 * m + rr;
  const double offset = denom != 0.0 ? 0.5 * (l - rr) / denom : 0.0;
  return wrap_angle((best + 0.5 + offset) * kTwoPi / kOrientationBins);
}

// Returns an empty vector when the window leaves the image or the patch is flat.
std::vector<float> describe(const Array2D<float>& g, double row, double col, double sigma, double theta) {
  const double hist_width = 3.0 * sigma;
  const int radius = static_cast<int>(std::ceil(hist_width * std::numbers::sqrt2 * (kSpatialBins + 1) * 0.5));
  const int r0 = static_cast<int>(std::lround(row));
  const int c0 = static_cast<int>(std::lround(col));
  if (r0 - radius < 1 || c0 - radius < 1 || r0 + radius >= g.rows() - 1 || c0 + radius >= g.cols() - 1) return {};

  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double weight_sigma = 0.5 * kSpatialBins;
  std::vector<double> hist(static_cast<std::size_t>(kSpatialBins * kSpatialBins * kAngleBins), 0.0);
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      // Offset expressed in the keypoint frame, in histogram cells.
      const double xc = (cos_t * dc + sin_t * dr) / hist_width;
      const double xr = (-sin_t * dc + cos_t * dr) / hist_width;
      const double rbin = xr + 0.5 * kSpatialBins - 0.5;
      const double cbin = xc + 0.5 * kSpatialBins - 0.5;
      if (rbin <= -1.0 || rbin >= kSpatialBins || cbin <= -1.0 || cbin >= kSpatialBins) continue;
      double gr, gc;
      gradient(g, r0 + dr, c0 + dc, gr, gc);
      const double mag = std::hypot(gr, gc);
      if (mag == 0.0) continue;
      const double obin = wrap_angle(std::atan2(gr, gc) - theta) / kTwoPi * kAngleBins;
      const double w = mag * std::exp(-(xr * xr + xc * xc) / (2.0 * weight_sigma * weight_sigma));

      const int rb = static_cast<int>(std::floor(rbin));
      const int cb = static_cast<int>(std::floor(cbin));
      const int ob = static_cast<int>(std::floor(obin));
      const double fr = rbin - rb;
      const double fc = cbin - cb;
      const double fo = obin - ob;
      for (int i = 0; i < 2; ++i) {
        const int ri = rb + i;
        if (ri < 0 || ri >= kSpatialBins) continue;
        const double wr = i ? fr : 1.0 - fr;
        for (int j = 0; j < 2; ++j) {
          const int cj = cb + j;
          if (cj < 0 || cj >= kSpatialBins) continue;
          const double wc = j ? fc : 1.0 - fc;
          for (int k = 0; k < 2; ++k) {
            const int ok = (ob + k) % kAngleBins;
            const double wo = k ? fo : 1.0 - fo;
            hist[static_cast<std::size_t>((ri * kSpatialBins + cj) * kAngleBins + ok)] += w * wr * wc * wo;
          }
        }
      }
    }
  }
  auto normalize = [&hist]() {
    double n2 = 0.0;
    for (const double v : hist) n2 += v * v;
    const double n = std::sqrt(n2);
    if (!(n > 0.0)) return false;
    for (double& v : hist) v /= n;
    return true;
  };
  if (!normalize()) return {};
  for (double& v : hist) v = std::min(v, 0.2);
  if (!normalize()) return {};
  return std::vector<float>(hist.begin(), hist.end());
}

void renormalize(std::vector<float>& d) {
  double n2 = 0.0;
  for (const float v : d) n2 += static_cast<double>(v) * v;
  const double n = std::sqrt(n2);
  for (float& v : d) v = static_cast<float>(v / n);
}

}  // namespace

DogPyramid build_dog_pyramid(const GrayImage& img, int octaves, int scales_per_octave, double sigma0) {
  if (octaves < 1 || scales_per_octave < 1) throw ArgumentError("DoG: octaves and scales must be >= 1");
  if (!(sigma0 > 0.5)) throw ArgumentError("DoG: sigma0 must exceed 0.5");
  const int min_side = std::min(img.rows(), img.cols());
  if ((min_side >> (octaves - 1)) < kMinOctaveSide) {
    throw ArgumentError("DoG: image too small for " + std::to_string(octaves) + " octaves");
  }
  const float lo = img.min_intensity();
  const float range = img.max_intensity() - lo;
  Array2D<float> base(img.rows(), img.cols(), 0.0f);
  if (range > 0.0f) {
    for (int r = 0; r < img.rows(); ++r) {
      for (int c = 0; c < img.cols(); ++c) base(r, c) = (img(r, c) - lo) / range;
    }
  }

  DogPyramid pyr;
  pyr.scales_per_octave = scales_per_octave;
  pyr.sigma0 = sigma0;
  const int s = scales_per_octave;
  // Input assumed pre-blurred with sigma 0.5.
  Array2D<float> first = gaussian_blur(base, std::sqrt(sigma0 * sigma0 - 0.25));
  for (int o = 0; o < octaves; ++o) {
    std::vector<Array2D<float>> g;
    g.push_back(o == 0 ? first : downsample2(pyr.gaussians.back()[static_cast<std::size_t>(s)]));
    for (int k = 1; k < s + 3; ++k) {
      const double prev = sigma0 * std::pow(2.0, (k - 1.0) / s);
      const double cur = sigma0 * std::pow(2.0, static_cast<double>(k) / s);
      g.push_back(gaussian_blur(g.back(), std::sqrt(cur * cur - prev * prev)));
    }
    std::vector<Array2D<float>> d;
    for (int k = 0; k + 1 < s + 3; ++k) {
      Array2D<float> diff(g[0].rows(), g[0].cols());
      for (std::size_t i = 0; i < diff.size(); ++i) {
        diff.values()[i] = g[static_cast<std::size_t>(k + 1)].values()[i] - g[static_cast<std::size_t>(k)].values()[i];
      }
      d.push_back(std::move(diff));
    }
    pyr.gaussians.push_back(std::move(g));
    pyr.dogs.push_back(std::move(d));
  }
  return pyr;
}

std::vector<ScaleSpacePoint> find_dog_extrema(const DogPyramid& pyr, double contrast_thresh) {
  std::vector<ScaleSpacePoint> out;
  for (int o = 0; o < static_cast<int>(pyr.dogs.size()); ++o) {
    const auto& d = pyr.dogs[static_cast<std::size_t>(o)];
    for (int l = 1; l + 1 < static_cast<int>(d.size()); ++l) {
      const auto& cur = d[static_cast<std::size_t>(l)];
      for (int r = 1; r + 1 < cur.rows(); ++r) {
        for (int c = 1; c + 1 < cur.cols(); ++c) {
          const float v = cur(r, c);
          if (!(std::abs(v) > contrast_thresh)) continue;
          bool is_max = true;
          bool is_min = true;
          for (int dl = -1; dl <= 1 && (is_max || is_min); ++dl) {
            const auto& layer = d[static_cast<std::size_t>(l + dl)];
            for (int dr = -1; dr <= 1; ++dr) {
              for (int dc = -1; dc <= 1; ++dc) {
                if (dl == 0 && dr == 0 && dc == 0) continue;
                const float n = layer(r + dr, c + dc);
                if (!(v > n)) is_max = false;
                if (!(v < n)) is_min = false;
              }
            }
          }
          if (is_max || is_min) out.push_back({o, l, r, c});
        }
      }
    }
  }
  return out;
}

std::vector<ClassicKeypoint> detect_keypoints_dog(const GrayImage& img, const DogParams& params) {
  const DogPyramid pyr = build_dog_pyramid(img, params.octaves, params.scales_per_octave, params.sigma0);
  std::vector<ClassicKeypoint> out;
  for (const auto& e : find_dog_extrema(pyr, params.contrast_thresh)) {
    const double factor = std::ldexp(1.0, e.octave);
    const double sigma = octave_sigma(pyr, e.layer);
    ClassicKeypoint kp;
    kp.location = {e.row * factor, e.col * factor};
    kp.scale = sigma * factor;
    kp.orientation = dominant_orientation(pyr.gaussians[static_cast<std::size_t>(e.octave)][static_cast<std::size_t>(e.layer)],
                                          e.row, e.col, sigma);
    out.push_back(std::move(kp));
  }
  return out;
}

std::vector<ClassicKeypoint> detect_keypoints_dog(const GrayImage& img, int octaves, int scales_per_octave,
                                                  double contrast_thresh) {
  DogParams p;
  p.octaves = octaves;
  p.scales_per_octave = scales_per_octave;
  p.contrast_thresh = contrast_thresh;
  return detect_keypoints_dog(img, p);
}

std::vector<ClassicKeypoint> compute_descriptors(const GrayImage& img, const std::vector<ClassicKeypoint>& kps,
                                                 const DogParams& params) {
  if (kps.empty()) return {};
  int octaves = 1;
  for (const auto& kp : kps) {
    if (!(kp.scale > 0.0)) throw ArgumentError("compute_descriptors: keypoint scale must be positive");
    octaves = std::max(octaves, level_of_scale(kp.scale, params.scales_per_octave, params.sigma0).octave + 1);
  }
  const int min_side = std::min(img.rows(), img.cols());
  while (octaves > 1 && (min_side >> (octaves - 1)) < kMinOctaveSide) --octaves;
  const DogPyramid pyr = build_dog_pyramid(img, octaves, params.scales_per_octave, params.sigma0);

  std::vector<ClassicKeypoint> out;
  for (const auto& kp : kps) {
    Level lv = level_of_scale(kp.scale, params.scales_per_octave, params.sigma0);
    if (lv.octave >= octaves) continue;
    const double factor = std::ldexp(1.0, lv.octave);
    const auto& g = pyr.gaussians[static_cast<std::size_t>(lv.octave)][static_cast<std::size_t>(lv.layer)];
    std::vector<float> d = describe(g, kp.location.row / factor, kp.location.col / factor, kp.scale / factor,
                                    kp.orientation);
    if (d.empty()) continue;
    ClassicKeypoint k = kp;
    k.descriptor = std::move(d);
    out.push_back(std::move(k));
  }
  return out;
}

MatrixR<double> descriptor_matrix(const std::vector<ClassicKeypoint>& kps) {
  MatrixR<double> m(static_cast<Eigen::Index>(kps.size()), kClassicDescriptorDim);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (kps[i].descriptor.size() != static_cast<std::size_t>(kClassicDescriptorDim)) {
      throw ArgumentError("descriptor_matrix: keypoint without a 128-d descriptor");
    }
    for (int k = 0; k < kClassicDescriptorDim; ++k) {
      m(static_cast<Eigen::Index>(i), k) = kps[i].descriptor[static_cast<std::size_t>(k)];
    }
  }
  return m;
}

MatrixR<double> descriptor_distances(const MatrixR<double>& d1, const MatrixR<double>& d2) {
  MatrixR<double> out(d1.rows(), d2.rows());
  for (Eigen::Index i = 0; i < d1.rows(); ++i) {
    for (Eigen::Index j = 0; j < d2.rows(); ++j) out(i, j) = (d1.row(i) - d2.row(j)).norm();
  }
  return out;
}

std::vector<IndexPair> match_ratio_test(const MatrixR<double>& d1, const MatrixR<double>& d2, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ArgumentError("match_ratio_test: ratio must lie in (0, 1)");
  std::vector<IndexPair> out;
  if (d2.rows() < 2) return out;
  const MatrixR<double> dist = descriptor_distances(d1, d2);
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    Eigen::Index best = -1;
    double first = std::numeric_limits<double>::infinity();
    double second = first;
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      const double v = dist(i, j);
      if (v < first) {
        second = first;
        first = v;
        best = j;
      } else if (v < second) {
        second = v;
      }
    }
    if (first < ratio * second) out.push_back({static_cast<int>(i), static_cast<int>(best)});
  }
  return out;
}

std::vector<IndexPair> match_inverse_consistency(const MatrixR<double>& d1, const MatrixR<double>& d2) {
  if (d1.rows() == 0 || d2.rows() == 0) return {};
  const MatrixR<double> dist = descriptor_distances(d1, d2);
  const MatrixR<double> neg = -dist;
  return inverse_consistent_match(neg, dist);
}

void write_keypoints_csv(const std::filesystem::path& path, const std::vector<ClassicKeypoint>& kps) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << "row,col,scale,orientation";
    for (int k = 0; k < kClassicDescriptorDim; ++k) out << ",d" << k;
    out << '\n';
    out.precision(9);
    for (const auto& kp : kps) {
      if (kp.descriptor.size() != static_cast<std::size_t>(kClassicDescriptorDim)) {
        throw ArgumentError("write_keypoints_csv: keypoint without a 128-d descriptor");
      }
      out << kp.location.row << ',' << kp.location.col << ',' << kp.scale << ',' << kp.orientation;
      for (const float v : kp.descriptor) out << ',' << v;
      out << '\n';
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<ClassicKeypoint> read_keypoints_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("row,col,scale,orientation", 0) != 0) {
    throw FormatError(path.string() + ": missing keypoint header");
  }
  std::vector<ClassicKeypoint> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != 4 + static_cast<std::size_t>(kClassicDescriptorDim)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 132 columns");
    }
    ClassicKeypoint kp;
    kp.location = {v[0], v[1]};
    kp.scale = v[2];
    kp.orientation = v[3];
    kp.descriptor.assign(v.begin() + 4, v.end());
    double n2 = 0.0;
    for (const float x : kp.descriptor) n2 += static_cast<double>(x) * x;
    if (!(n2 > 0.0)) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": zero descriptor");
    renormalize(kp.descriptor);
    out.push_back(std::move(kp));
  }
  return out;
}

}  // namespace landmatch
