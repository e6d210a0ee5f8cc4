#include "landmatch/loss.hpp"

#include <algorithm>
#include <cmath>

#include "landmatch/error.hpp"

namespace landmatch {

template <typename T>
LandmarkLoss<T> landmark_probability_loss(std::span<const T> p_hat, std::span<const std::uint8_t> p) {
  if (p_hat.size() != p.size()) throw ArgumentError("landmark_probability_loss: length mismatch");
  LandmarkLoss<T> out;
  out.d_p_hat.assign(p_hat.size(), T(0));
  if (p_hat.empty()) return out;
  const T eps = static_cast<T>(kProbEpsilon);
  const T inv_k = T(1) / static_cast<T>(p_hat.size());
  T sum = T(0);
  for (std::size_t i = 0; i < p_hat.size(); ++i) {
    const bool clamped = p_hat[i] < eps || p_hat[i] > T(1) - eps;
    const T q = std::clamp(p_hat[i], eps, T(1) - eps);
    const T ce = p[i] ? -std::log(q) : -std::log(T(1) - q);
    sum += (T(1) - q) + ce;
    const T dce = p[i] ? -T(1) / q : T(1) / (T(1) - q);
    out.d_p_hat[i] = clamped ? T(0) : (dce - T(1)) * inv_k;
  }
  out.value = sum * inv_k;
  return out;
}

template <typename T>
MatrixR<T> pairwise_sq_distances(const MatrixR<T>& f1, const MatrixR<T>& f2) {
  MatrixR<T> d2 = T(-2) * (f1 * f2.transpose());
  d2.colwise() += f1.rowwise().squaredNorm();
  d2.rowwise() += f2.rowwise().squaredNorm().transpose();
  return d2.cwiseMax(T(0));
}

template <typename T>
DescriptorLoss<T> descriptor_matching_loss_from_distances(const MatrixR<T>& d2, const MatrixR<T>& c_hat,
                                                          const GroundTruth& gt, double m_pos, double m_neg) {
  if (!(m_neg > m_pos) || m_pos < 0.0) throw ArgumentError("descriptor_matching_loss: need m_neg > m_pos >= 0");
  const Eigen::Index k1 = d2.rows();
  const Eigen::Index k2 = d2.cols();
  if (c_hat.rows() != k1 || c_hat.cols() != k2 || gt.c.rows() != k1 || gt.c.cols() != k2) {
    throw ArgumentError("descriptor_matching_loss: shape mismatch");
  }
  DescriptorLoss<T> out;
  MatrixR<T> d_d2 = MatrixR<T>::Zero(k1, k2);
  out.d_c_hat = MatrixR<T>::Zero(k1, k2);
  const double k_pos = static_cast<double>(gt.k_pos);
  const double k_neg = static_cast<double>(gt.k_neg);
  const double k_all = k_pos + k_neg;
  const T inv_pos = k_pos > 0 ? static_cast<T>(1.0 / k_pos) : T(0);
  const T inv_neg = k_neg > 0 ? static_cast<T>(1.0 / k_neg) : T(0);
  const T inv_all = k_all > 0 ? static_cast<T>(1.0 / k_all) : T(0);
  const T w_pos = k_all > 0 ? static_cast<T>(k_neg / k_all) : T(0);
  const T w_neg = k_all > 0 ? static_cast<T>(k_pos / k_all) : T(0);
  const T mp = static_cast<T>(m_pos);
  const T mn = static_cast<T>(m_neg);
  const T eps = static_cast<T>(kProbEpsilon);

  for (Eigen::Index i = 0; i < k1; ++i) {
    for (Eigen::Index j = 0; j < k2; ++j) {
      const T d = d2(i, j);
      const T chat = c_hat(i, j);
      const bool clamped = chat < eps || chat > T(1) - eps;
      const T q = std::clamp(chat, eps, T(1) - eps);
      if (gt.c(static_cast<int>(i), static_cast<int>(j))) {
        if (d > mp) {
          out.hinge_pos += (d - mp) * inv_pos;
          d_d2(i, j) = inv_pos;
        }
        out.weighted_ce += -w_pos * std::log(q) * inv_all;
        if (!clamped) out.d_c_hat(i, j) = -w_pos / q * inv_all;
      } else {
        if (d < mn) {
          out.hinge_neg += (mn - d) * inv_neg;
          d_d2(i, j) = -inv_neg;
        }
        out.weighted_ce += -w_neg * std::log(T(1) - q) * inv_all;
        if (!clamped) out.d_c_hat(i, j) = w_neg / (T(1) - q) * inv_all;
      }
    }
  }
  out.value = out.hinge_pos + out.hinge_neg + out.weighted_ce;
  out.d_d2 = std::move(d_d2);
  return out;
}

template <typename T>
DescriptorLoss<T> descriptor_matching_loss(const MatrixR<T>& f1, const MatrixR<T>& f2, const MatrixR<T>& c_hat,
                                           const GroundTruth& gt, double m_pos, double m_neg) {
  if (f1.cols() != f2.cols()) throw ArgumentError("descriptor_matching_loss: descriptor dimension mismatch");
  if (f1.rows() != c_hat.rows() || f2.rows() != c_hat.cols()) {
    throw ArgumentError("descriptor_matching_loss: shape mismatch");
  }
  DescriptorLoss<T> out =
      descriptor_matching_loss_from_distances<T>(pairwise_sq_distances(f1, f2), c_hat, gt, m_pos, m_neg);
  const MatrixR<T>& g = out.d_d2;
  // d2_ij = |f1_i - f2_j|^2
  out.d_f1 = T(2) * (g.rowwise().sum().asDiagonal() * f1 - g * f2);
  out.d_f2 = T(2) * (g.colwise().sum().transpose().asDiagonal() * f2 - g.transpose() * f1);
  return out;
}

LossBreakdown total_loss(double landmark_loss_i1, double landmark_loss_i2, double descriptor_loss,
                         double hinge_pos, double hinge_neg, double weighted_ce) {
  const std::pair<const char*, double> parts[] = {{"landmark_loss_I1", landmark_loss_i1},
                                                  {"landmark_loss_I2", landmark_loss_i2},
                                                  {"descriptor_loss", descriptor_loss}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericError(name, "non-finite loss component");
  }
  LossBreakdown b;
  b.landmark_loss_i1 = landmark_loss_i1;
  b.landmark_loss_i2 = landmark_loss_i2;
  b.descriptor_loss = descriptor_loss;
  b.total = landmark_loss_i1 + landmark_loss_i2 + descriptor_loss;
  b.hinge_pos = hinge_pos;
  b.hinge_neg = hinge_neg;
  b.weighted_ce = weighted_ce;
  return b;
}

template LandmarkLoss<float> landmark_probability_loss<float>(std::span<const float>, std::span<const std::uint8_t>);
template LandmarkLoss<double> landmark_probability_loss<double>(std::span<const double>,
                                                                std::span<const std::uint8_t>);
template MatrixR<float> pairwise_sq_distances<float>(const MatrixR<float>&, const MatrixR<float>&);
template MatrixR<double> pairwise_sq_distances<double>(const MatrixR<double>&, const MatrixR<double>&);
template DescriptorLoss<float> descriptor_matching_loss_from_distances<float>(const MatrixR<float>&,
                                                                              const MatrixR<float>&,
                                                                              const GroundTruth&, double, double);
template DescriptorLoss<double> descriptor_matching_loss_from_distances<double>(const MatrixR<double>&,
                                                                                const MatrixR<double>&,
                                                                                const GroundTruth&, double, double);
template DescriptorLoss<float> descriptor_matching_loss<float>(const MatrixR<float>&, const MatrixR<float>&,
                                                               const MatrixR<float>&, const GroundTruth&, double,
                                                               double);
template DescriptorLoss<double> descriptor_matching_loss<double>(const MatrixR<double>&, const MatrixR<double>&,
                                                                 const MatrixR<double>&, const GroundTruth&, double,
                                                                 double);

}  // namespace landmatch
