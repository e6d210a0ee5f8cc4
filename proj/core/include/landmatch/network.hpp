#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "landmatch/image.hpp"
#include "landmatch/tensor.hpp"

namespace landmatch {

/// Architecture of the Siamese branch. Filters double at each level.
struct ModelConfig {
  std::vector<int> encoder_filters{16, 32, 64, 128, 256};
  std::vector<int> descriptor_blocks{3, 4};

  int levels() const noexcept { return static_cast<int>(encoder_filters.size()); }
  int descriptor_dim() const;
  /// Width of the match-head pair feature [f1 * f2 ; (f1 - f2)^2].
  int head_input_width() const { return 2 * descriptor_dim(); }
  /// Input side lengths must be multiples of this (padding handles the rest).
  int size_multiple() const noexcept { return 1 << (levels() - 1); }
  int stride_of_block(int block) const noexcept { return 1 << block; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);
  std::uint64_t hash() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamSlot {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  friend bool operator==(const ParamSlot&, const ParamSlot&) = default;
};

/// All learnable weights of the branch and the match head, stored as one
/// flat buffer. Both Siamese branches read this single copy.
template <typename T>
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<ParamSlot>& slots() const noexcept { return slots_; }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<T> slot(std::size_t index) noexcept { return {values_.data() + slots_[index].offset, slots_[index].size}; }
  std::span<const T> slot(std::size_t index) const noexcept {
    return {values_.data() + slots_[index].offset, slots_[index].size};
  }
  std::size_t slot_index(std::string_view name) const;
  std::span<T> slot(std::string_view name) { return slot(slot_index(name)); }
  std::span<const T> slot(std::string_view name) const { return slot(slot_index(name)); }

  /// Same layout, all zeros.
  ModelParams zeros_like() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out(config_);
    auto dst = out.values();
    for (std::size_t i = 0; i < values_.size(); ++i) dst[i] = static_cast<U>(values_[i]);
    return out;
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ModelConfig config_;
  std::vector<ParamSlot> slots_;
  std::vector<T> values_;
};

/// He-normal convolution weights, zero biases; deterministic in `seed`.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename T>
struct BranchTape;

template <typename T>
struct BranchOutput {
  Array2D<T> prob;                  // landmark probability, image shape
  std::vector<Tensor3<T>> pyramid;  // raw descriptor-block maps, ceil(shape / stride)
  std::vector<int> strides;
  std::shared_ptr<const BranchTape<T>> tape;  // set when recorded for backward
};

/// Rescales intensities to [0,1] (constant images map to 0).
template <typename T>
Array2D<T> normalize_unit_range(const GrayImage& img);

/// Forward pass on an already-normalized input. Inputs whose sides are not
/// multiples of config.size_multiple() are zero-padded and outputs cropped.
template <typename T>
BranchOutput<T> forward_branch(const ModelParams<T>& params, const Array2D<T>& input, bool record_tape);

template <typename T>
BranchOutput<T> forward_branch(const ModelParams<T>& params, const GrayImage& img, bool record_tape = false);

/// Accumulates parameter gradients into `grad` for upstream gradients on
/// the probability map and the pyramid (an empty pyramid gradient is zero).
template <typename T>
void backward_branch(const ModelParams<T>& params, const BranchOutput<T>& out, const Array2D<T>& d_prob,
                     const std::vector<Tensor3<T>>& d_pyramid, ModelParams<T>& grad);

/// Unit-norm descriptors, one row per point.
template <typename T>
struct DescriptorSet {
  MatrixR<T> values;
  MatrixR<T> raw;             // pre-normalization concatenation
  std::vector<T> norms;       // L2 norm of each raw row
  std::vector<Point2> points;

  int count() const noexcept { return static_cast<int>(values.rows()); }
  int dim() const noexcept { return static_cast<int>(values.cols()); }
};

/// Bilinear lookup of every pyramid level at point / stride, concatenated
/// and L2-normalized. Points must lie within [0, rows-1] x [0, cols-1].
template <typename T>
DescriptorSet<T> sample_descriptors(const std::vector<Tensor3<T>>& pyramid, const std::vector<int>& strides,
                                    std::span<const Point2> points, int image_rows, int image_cols);

/// Gradient w.r.t. the pyramid values; `d_pyramid` is resized as needed.
template <typename T>
void sample_descriptors_backward(const std::vector<Tensor3<T>>& pyramid, const std::vector<int>& strides,
                                 const DescriptorSet<T>& set, const MatrixR<T>& d_values,
                                 std::vector<Tensor3<T>>& d_pyramid);

/// Matching probability sigmoid(w . [f1 * f2 ; (f1 - f2)^2] + b).
template <typename T>
T match_head(const ModelParams<T>& params, std::span<const T> f1, std::span<const T> f2);

/// Logits for all K1 x K2 pairs.
template <typename T>
MatrixR<T> match_head_logits(const ModelParams<T>& params, const MatrixR<T>& f1, const MatrixR<T>& f2);

template <typename T>
void match_head_backward(const ModelParams<T>& params, const MatrixR<T>& f1, const MatrixR<T>& f2,
                         const MatrixR<T>& d_logits, MatrixR<T>& d_f1, MatrixR<T>& d_f2, ModelParams<T>& grad);

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace landmatch
