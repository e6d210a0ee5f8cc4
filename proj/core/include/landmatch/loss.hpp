#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "landmatch/sampling.hpp"
#include "landmatch/tensor.hpp"

namespace landmatch {

inline constexpr double kProbEpsilon = 1e-7;

template <typename T>
struct LandmarkLoss {
  T value = T(0);
  std::vector<T> d_p_hat;  // dL / dp_hat
};

/// (1/K) sum_i [(1 - p_hat_i) + CE(p_hat_i, p_i)], p_hat clamped to
/// [eps, 1 - eps]. Empty input is defined as zero.
template <typename T>
LandmarkLoss<T> landmark_probability_loss(std::span<const T> p_hat, std::span<const std::uint8_t> p);

template <typename T>
struct DescriptorLoss {
  T value = T(0);
  T hinge_pos = T(0);
  T hinge_neg = T(0);
  T weighted_ce = T(0);
  MatrixR<T> d_f1;     // K1 x D
  MatrixR<T> d_f2;     // K2 x D
  MatrixR<T> d_c_hat;  // K1 x K2
  MatrixR<T> d_d2;     // K1 x K2
};

/// Positive hinge on d^2 - m_pos normalized by K_pos, negative hinge on
/// m_neg - d^2 normalized by K_neg, and class-frequency weighted binary
/// cross entropy on c_hat normalized by K_pos + K_neg. Terms with a zero
/// denominator contribute zero.
template <typename T>
DescriptorLoss<T> descriptor_matching_loss(const MatrixR<T>& f1, const MatrixR<T>& f2, const MatrixR<T>& c_hat,
                                           const GroundTruth& gt, double m_pos, double m_neg);

/// Same loss evaluated from precomputed squared descriptor distances;
/// only d_d2 and d_c_hat are filled.
template <typename T>
DescriptorLoss<T> descriptor_matching_loss_from_distances(const MatrixR<T>& d2, const MatrixR<T>& c_hat,
                                                          const GroundTruth& gt, double m_pos, double m_neg);

/// Squared Euclidean distances between all descriptor pairs, clamped at 0.
template <typename T>
MatrixR<T> pairwise_sq_distances(const MatrixR<T>& f1, const MatrixR<T>& f2);

struct LossBreakdown {
  double landmark_loss_i1 = 0.0;
  double landmark_loss_i2 = 0.0;
  double descriptor_loss = 0.0;
  double total = 0.0;
  double hinge_pos = 0.0;
  double hinge_neg = 0.0;
  double weighted_ce = 0.0;
};

/// Sums the three task losses; throws NumericError naming the first
/// non-finite component.
LossBreakdown total_loss(double landmark_loss_i1, double landmark_loss_i2, double descriptor_loss,
                         double hinge_pos = 0.0, double hinge_neg = 0.0, double weighted_ce = 0.0);

}  // namespace landmatch
