#include "landmatch/texture.hpp"

#include <cmath>

namespace landmatch {

GrayImage make_texture(int size, std::mt19937_64& rng) {
  if (size < kMinImageSide) throw ArgumentError("make_texture: size must be >= 16");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double n = size;

  const double cr = uni(0.45, 0.55) * (n - 1);
  const double cc = uni(0.45, 0.55) * (n - 1);
  const double ar = uni(0.38, 0.47) * n;
  const double ac = uni(0.38, 0.47) * n;
  const double gr = uni(-0.25, 0.25) / n;
  const double gc = uni(-0.25, 0.25) / n;
  const double level = uni(0.35, 0.5);

  struct Blob {
    double r, c, sigma, amp;
  };
  const int n_blobs = static_cast<int>(std::lround(uni(0.6, 1.0) * n * n / 300.0));
  std::vector<Blob> blobs;
  for (int i = 0; i < n_blobs; ++i) {
    const double sign = u01(rng) < 0.6 ? 1.0 : -1.0;
    blobs.push_back({uni(0.0, n - 1), uni(0.0, n - 1), uni(1.2, 4.0), sign * uni(0.15, 0.4)});
  }

  Array2D<float> noise(size, size);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : noise.values()) v = static_cast<float>(gauss(rng));
  noise = gaussian_blur(noise, 1.0);

  Array2D<float> px(size, size, 0.0f);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      const double er = (r - cr) / ar;
      const double ec = (c - cc) / ac;
      if (er * er + ec * ec > 1.0) continue;
      double v = level + gr * (r - cr) + gc * (c - cc);
      for (const auto& b : blobs) {
        const double d2 = (r - b.r) * (r - b.r) + (c - b.c) * (c - b.c);
        if (d2 < 16.0 * b.sigma * b.sigma) v += b.amp * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
      }
      v += 0.08 * noise(r, c);
      px(r, c) = static_cast<float>(std::clamp(v, 0.15, 1.0));
    }
  }
  return GrayImage(std::move(px));
}

std::vector<GrayImage> make_texture_set(int count, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GrayImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_texture(size, rng));
  return out;
}

}  // namespace landmatch
