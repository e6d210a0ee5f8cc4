#pragma once

#include <random>
#include <vector>

#include "landmatch/image.hpp"

namespace landmatch {

/// Procedural textured image: an elliptical body on a zero background,
/// filled with a linear gradient, Gaussian blobs and smoothed noise.
/// Values lie in [0, 1].
GrayImage make_texture(int size, std::mt19937_64& rng);

std::vector<GrayImage> make_texture_set(int count, int size, std::uint64_t seed);

}  // namespace landmatch
