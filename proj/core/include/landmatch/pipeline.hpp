#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "landmatch/image_io.hpp"
#include "landmatch/loss.hpp"
#include "landmatch/matching.hpp"
#include "landmatch/network.hpp"
#include "landmatch/transforms.hpp"

namespace landmatch {

struct FamilyWeight {
  TransformFamily family;
  double weight;

  friend bool operator==(const FamilyWeight&, const FamilyWeight&) = default;
};

std::vector<FamilyWeight> default_family_weights();

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  int pairs_per_image = 1;  // synthesized pairs per training image per epoch
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int k = 400;
  int cell_px = 8;
  double thresh_pixels = 2.0;
  double m_pos = 0.1;
  double m_neg = 1.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: numeric_threads()
  std::vector<FamilyWeight> family_weights = default_family_weights();
  TransformSpec transform;  // ranges; family is overridden per draw
  MaskConfig mask;
  ModelConfig model;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// A reference image, its synthetic target and the known map between them.
struct TrainingPair {
  GrayImage reference;
  GrayImage target;
  BinaryMask reference_mask;
  BinaryMask target_mask;
  Transform transform;
};

TrainingPair synthesize_pair(const GrayImage& reference, const TransformSpec& spec, const MaskConfig& mask_cfg,
                             std::mt19937_64& rng);

TransformFamily draw_family(std::span<const FamilyWeight> weights, std::mt19937_64& rng);

struct PairLossOptions {
  int k = 400;
  int cell_px = 8;
  double thresh_pixels = 2.0;
  double m_pos = 0.1;
  double m_neg = 1.0;
};

struct PairLossResult {
  LossBreakdown loss;
  long k_pos = 0;
  long k_neg = 0;
};

/// Full multi-task loss of one pair. When `grad` is given, the gradient of
/// the total is accumulated into it (scaled by `grad_scale`).
template <typename T>
PairLossResult pair_loss(const ModelParams<T>& params, const TrainingPair& pair, const PairLossOptions& opts,
                         ModelParams<T>* grad = nullptr, T grad_scale = T(1));

/// Adam with L2 weight decay added to the gradient.
class Adam {
 public:
  Adam(std::size_t size, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(std::span<float> params, std::span<const float> grad);
  long steps() const noexcept { return t_; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

struct StepRecord {
  long step = 0;
  int epoch = 0;
  LossBreakdown loss;  // mean over the batch
  double k_pos = 0.0;  // mean over the batch
  double k_neg = 0.0;
  std::uint64_t seed_state_digest = 0;
};

std::string step_record_json(const StepRecord& r);

struct TrainResult {
  ModelParams<float> params;
  std::vector<StepRecord> log;
  std::vector<double> epoch_mean_total;
  std::vector<double> validation_mean_total;
};

struct TrainOutputs {
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_NNN.lmck + latest.lmck
  std::optional<std::filesystem::path> log_path;        // JSON lines
  std::function<void(const StepRecord&)> on_step;
};

/// On-the-fly self-supervised training. Deterministic for a fixed seed
/// (each batch's gradient is reduced in a fixed order). A non-finite loss
/// throws NumericError; the latest checkpoint is left untouched.
TrainResult train(const TrainConfig& config, const std::vector<GrayImage>& dataset, const TrainOutputs& outputs = {});

struct InferenceOptions {
  double thresh_landmark = 0.5;
  int cell_px = 8;
  int max_candidates = 0;  // 0: every non-empty grid cell
  MaskConfig mask;
};

struct Match {
  Point2 pt1;
  Point2 pt2;
  double match_prob = 0.0;
  double desc_dist2 = 0.0;
  int index1 = -1;
  int index2 = -1;
};

struct MatchSet {
  std::vector<Match> pairs;
  int candidates1 = 0;
  int candidates2 = 0;
};

/// Thresholded candidates (p_hat > thresh_landmark) matched inverse-consistently.
MatchSet infer_pair(const ModelParams<float>& params, const GrayImage& i1, const BinaryMask& mask1,
                    const GrayImage& i2, const BinaryMask& mask2, const InferenceOptions& opts = {});

/// Computes the valid masks from the images first.
MatchSet infer_pair(const ModelParams<float>& params, const GrayImage& i1, const GrayImage& i2,
                    const InferenceOptions& opts = {});

/// CSV header `row1,col1,row2,col2,match_prob,desc_dist2`.
void write_matches_csv(const std::filesystem::path& path, const MatchSet& matches);
MatchSet read_matches_csv(const std::filesystem::path& path);

}  // namespace landmatch
