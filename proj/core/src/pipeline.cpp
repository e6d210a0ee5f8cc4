#include "landmatch/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "landmatch/checkpoint.hpp"
#include "landmatch/error.hpp"
#include "landmatch/sampling.hpp"
#include "landmatch/threading.hpp"

namespace landmatch {

namespace fs = std::filesystem;

std::vector<FamilyWeight> default_family_weights() {
  return {{TransformFamily::brightness, 1.0}, {TransformFamily::contrast, 1.0}, {TransformFamily::rotation, 1.0},
          {TransformFamily::scaling, 1.0},    {TransformFamily::shearing, 1.0}, {TransformFamily::elastic, 1.0}};
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (pairs_per_image < 1) throw ConfigError("pairs_per_image must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (cell_px < 1) throw ConfigError("cell_px must be >= 1");
  if (!(thresh_pixels > 0.0)) throw ConfigError("thresh_pixels must be positive");
  if (m_pos < 0.0 || !(m_neg > m_pos)) throw ConfigError("need m_neg > m_pos >= 0");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw ConfigError("validation_fraction must lie in [0,1)");
  }
  if (family_weights.empty()) throw ConfigError("family_weights must not be empty");
  double total = 0.0;
  for (const auto& fw : family_weights) {
    if (fw.weight < 0.0) throw ConfigError("family weights must be >= 0");
    total += fw.weight;
  }
  if (!(total > 0.0)) throw ConfigError("family weights must not all be zero");
  try {
    transform.validate();
    model.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

TrainingPair synthesize_pair(const GrayImage& reference, const TransformSpec& spec, const MaskConfig& mask_cfg,
                             std::mt19937_64& rng) {
  TrainingPair pair;
  pair.reference = reference;
  pair.reference_mask = default_valid_mask(reference, mask_cfg);
  pair.transform = sample_transform(spec, reference.rows(), reference.cols(), rng);
  pair.target = warp_image(reference, pair.transform);
  pair.target_mask = warp_mask(pair.reference_mask, pair.transform);
  return pair;
}

TransformFamily draw_family(std::span<const FamilyWeight> weights, std::mt19937_64& rng) {
  double total = 0.0;
  for (const auto& w : weights) total += w.weight;
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (const auto& w : weights) {
    if (u < w.weight) return w.family;
    u -= w.weight;
  }
  return weights.back().family;
}

template <typename T>
PairLossResult pair_loss(const ModelParams<T>& params, const TrainingPair& pair, const PairLossOptions& opts,
                         ModelParams<T>* grad, T grad_scale) {
  const bool backward = grad != nullptr;
  const BranchOutput<T> o1 = forward_branch(params, normalize_unit_range<T>(pair.reference), backward);
  const BranchOutput<T> o2 = forward_branch(params, normalize_unit_range<T>(pair.target), backward);
  const LandmarkSet lm1 = grid_sample_landmarks(o1.prob, pair.reference_mask, opts.cell_px, opts.k);
  const LandmarkSet lm2 = grid_sample_landmarks(o2.prob, pair.target_mask, opts.cell_px, opts.k);
  const GroundTruth gt = generate_ground_truth(lm1, lm2, pair.transform, opts.thresh_pixels, pair.reference_mask);

  const DescriptorSet<T> f1 =
      sample_descriptors(o1.pyramid, o1.strides, lm1.points, pair.reference.rows(), pair.reference.cols());
  const DescriptorSet<T> f2 =
      sample_descriptors(o2.pyramid, o2.strides, lm2.points, pair.target.rows(), pair.target.cols());
  const MatrixR<T> logits = match_head_logits(params, f1.values, f2.values);
  const MatrixR<T> c_hat = logits.unaryExpr([](T x) { return sigmoid(x); });

  auto probs_at = [](const Array2D<T>& map, const LandmarkSet& lm) {
    std::vector<T> p;
    p.reserve(lm.points.size());
    for (const auto& pt : lm.points) p.push_back(map(static_cast<int>(pt.row), static_cast<int>(pt.col)));
    return p;
  };
  const std::vector<T> p_hat1 = probs_at(o1.prob, lm1);
  const std::vector<T> p_hat2 = probs_at(o2.prob, lm2);
  const LandmarkLoss<T> l1 = landmark_probability_loss<T>(p_hat1, gt.p1);
  const LandmarkLoss<T> l2 = landmark_probability_loss<T>(p_hat2, gt.p2);
  const DescriptorLoss<T> dl = descriptor_matching_loss(f1.values, f2.values, c_hat, gt, opts.m_pos, opts.m_neg);

  PairLossResult result;
  result.loss = total_loss(static_cast<double>(l1.value), static_cast<double>(l2.value),
                           static_cast<double>(dl.value), static_cast<double>(dl.hinge_pos),
                           static_cast<double>(dl.hinge_neg), static_cast<double>(dl.weighted_ce));
  result.k_pos = gt.k_pos;
  result.k_neg = gt.k_neg;
  if (!backward) return result;

  auto scatter = [grad_scale](const Array2D<T>& like, const LandmarkSet& lm, const std::vector<T>& d) {
    Array2D<T> out(like.rows(), like.cols(), T(0));
    for (std::size_t i = 0; i < lm.points.size(); ++i) {
      out(static_cast<int>(lm.points[i].row), static_cast<int>(lm.points[i].col)) += grad_scale * d[i];
    }
    return out;
  };
  const Array2D<T> d_prob1 = scatter(o1.prob, lm1, l1.d_p_hat);
  const Array2D<T> d_prob2 = scatter(o2.prob, lm2, l2.d_p_hat);

  const MatrixR<T> d_logits =
      grad_scale * dl.d_c_hat.cwiseProduct(c_hat.unaryExpr([](T c) { return c * (T(1) - c); }));
  MatrixR<T> d_f1_head, d_f2_head;
  match_head_backward(params, f1.values, f2.values, d_logits, d_f1_head, d_f2_head, *grad);
  const MatrixR<T> d_f1 = grad_scale * dl.d_f1 + d_f1_head;
  const MatrixR<T> d_f2 = grad_scale * dl.d_f2 + d_f2_head;

  std::vector<Tensor3<T>> d_pyr1, d_pyr2;
  sample_descriptors_backward(o1.pyramid, o1.strides, f1, d_f1, d_pyr1);
  sample_descriptors_backward(o2.pyramid, o2.strides, f2, d_f2, d_pyr2);
  backward_branch(params, o1, d_prob1, d_pyr1, *grad);
  backward_branch(params, o2, d_prob2, d_pyr2, *grad);
  return result;
}

template PairLossResult pair_loss<float>(const ModelParams<float>&, const TrainingPair&, const PairLossOptions&,
                                         ModelParams<float>*, float);
template PairLossResult pair_loss<double>(const ModelParams<double>&, const TrainingPair&, const PairLossOptions&,
                                          ModelParams<double>*, double);

Adam::Adam(std::size_t size, double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<float> params, std::span<const float> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ArgumentError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i] + wd_ * params[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g * g;
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr_ * mh / (std::sqrt(vh) + eps_));
  }
}

std::string step_record_json(const StepRecord& r) {
  nlohmann::json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["total"] = r.loss.total;
  j["landmark_loss_I1"] = r.loss.landmark_loss_i1;
  j["landmark_loss_I2"] = r.loss.landmark_loss_i2;
  j["descriptor_loss"] = r.loss.descriptor_loss;
  j["hinge_pos"] = r.loss.hinge_pos;
  j["hinge_neg"] = r.loss.hinge_neg;
  j["weighted_ce"] = r.loss.weighted_ce;
  j["k_pos"] = r.k_pos;
  j["k_neg"] = r.k_neg;
  std::ostringstream digest;
  digest << std::hex << r.seed_state_digest;
  j["seed_state_digest"] = digest.str();
  return j.dump();
}

namespace {

std::uint64_t rng_digest(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char ch : os.str()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b, double w) {
  acc.landmark_loss_i1 += w * b.landmark_loss_i1;
  acc.landmark_loss_i2 += w * b.landmark_loss_i2;
  acc.descriptor_loss += w * b.descriptor_loss;
  acc.total += w * b.total;
  acc.hinge_pos += w * b.hinge_pos;
  acc.hinge_neg += w * b.hinge_neg;
  acc.weighted_ce += w * b.weighted_ce;
}

std::string epoch_name(int epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".lmck";
  return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::vector<GrayImage>& dataset, const TrainOutputs& outputs) {
  config.validate();
  if (dataset.empty()) throw ArgumentError("train: dataset is empty");
  const int threads = config.threads > 0 ? config.threads : numeric_threads();

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.params = init_params<float>(config.model, config.seed);

  std::vector<int> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  int n_val = static_cast<int>(std::floor(config.validation_fraction * static_cast<double>(dataset.size())));
  if (n_val >= static_cast<int>(dataset.size())) n_val = static_cast<int>(dataset.size()) - 1;
  const std::vector<int> val_idx(order.begin(), order.begin() + n_val);
  std::vector<int> train_idx(order.begin() + n_val, order.end());

  const PairLossOptions opts{config.k, config.cell_px, config.thresh_pixels, config.m_pos, config.m_neg};

  std::vector<TrainingPair> val_pairs;
  {
    std::mt19937_64 val_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    for (const int i : val_idx) {
      TransformSpec spec = config.transform;
      spec.family = draw_family(config.family_weights, val_rng);
      val_pairs.push_back(synthesize_pair(dataset[static_cast<std::size_t>(i)], spec, config.mask, val_rng));
    }
  }

  std::optional<std::ofstream> log;
  if (outputs.log_path) {
    if (outputs.log_path->has_parent_path()) fs::create_directories(outputs.log_path->parent_path());
    log.emplace(*outputs.log_path, std::ios::trunc);
    if (!*log) throw IoError("cannot write training log " + outputs.log_path->string());
  }
  if (outputs.checkpoint_dir) {
    fs::create_directories(*outputs.checkpoint_dir);
    save_checkpoint(*outputs.checkpoint_dir / "latest.lmck", result.params, {0, config.seed});
  }

  Adam adam(result.params.size(), config.learning_rate, config.weight_decay);
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<int> epoch_idx;
    epoch_idx.reserve(train_idx.size() * static_cast<std::size_t>(config.pairs_per_image));
    for (int rep = 0; rep < config.pairs_per_image; ++rep) epoch_idx.insert(epoch_idx.end(), train_idx.begin(), train_idx.end());
    std::shuffle(epoch_idx.begin(), epoch_idx.end(), rng);
    double epoch_total = 0.0;
    int epoch_steps = 0;
    for (std::size_t start = 0; start < epoch_idx.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(epoch_idx.size(), start + static_cast<std::size_t>(config.batch_size));
      const int batch = static_cast<int>(end - start);
      std::vector<TrainingPair> pairs;
      pairs.reserve(static_cast<std::size_t>(batch));
      for (std::size_t b = start; b < end; ++b) {
        TransformSpec spec = config.transform;
        spec.family = draw_family(config.family_weights, rng);
        pairs.push_back(synthesize_pair(dataset[static_cast<std::size_t>(epoch_idx[b])], spec, config.mask, rng));
      }

      std::vector<ModelParams<float>> grads(static_cast<std::size_t>(batch));
      std::vector<PairLossResult> losses(static_cast<std::size_t>(batch));
      const float scale = 1.0f / static_cast<float>(batch);
      parallel_for(batch, threads, [&](int b) {
        grads[static_cast<std::size_t>(b)] = result.params.zeros_like();
        losses[static_cast<std::size_t>(b)] =
            pair_loss(result.params, pairs[static_cast<std::size_t>(b)], opts, &grads[static_cast<std::size_t>(b)], scale);
      });

      ModelParams<float> grad = std::move(grads[0]);
      for (int b = 1; b < batch; ++b) {
        auto dst = grad.values();
        const auto src = grads[static_cast<std::size_t>(b)].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
      for (const float g : grad.values()) {
        if (!std::isfinite(g)) throw NumericError("gradient", "non-finite gradient at step " + std::to_string(step + 1));
      }
      adam.step(result.params.values(), grad.values());

      StepRecord rec;
      rec.step = ++step;
      rec.epoch = epoch;
      for (const auto& l : losses) {
        accumulate(rec.loss, l.loss, 1.0 / batch);
        rec.k_pos += static_cast<double>(l.k_pos) / batch;
        rec.k_neg += static_cast<double>(l.k_neg) / batch;
      }
      rec.seed_state_digest = rng_digest(rng);
      if (log) *log << step_record_json(rec) << '\n' << std::flush;
      if (outputs.on_step) outputs.on_step(rec);
      result.log.push_back(rec);
      epoch_total += rec.loss.total;
      ++epoch_steps;
    }
    result.epoch_mean_total.push_back(epoch_steps ? epoch_total / epoch_steps : 0.0);

    if (!val_pairs.empty()) {
      std::vector<double> v(val_pairs.size());
      parallel_for(static_cast<int>(val_pairs.size()), threads, [&](int i) {
        v[static_cast<std::size_t>(i)] = pair_loss(result.params, val_pairs[static_cast<std::size_t>(i)], opts).loss.total;
      });
      result.validation_mean_total.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    }
    if (outputs.checkpoint_dir) {
      save_checkpoint(*outputs.checkpoint_dir / epoch_name(epoch), result.params, {epoch, config.seed});
      save_checkpoint(*outputs.checkpoint_dir / "latest.lmck", result.params, {epoch, config.seed});
    }
  }
  return result;
}

MatchSet infer_pair(const ModelParams<float>& params, const GrayImage& i1, const BinaryMask& mask1,
                    const GrayImage& i2, const BinaryMask& mask2, const InferenceOptions& opts) {
  if (!mask1.same_shape(i1) || !mask2.same_shape(i2)) throw ArgumentError("infer_pair: mask shape mismatch");
  auto candidates = [&](const GrayImage& img, const BinaryMask& mask, BranchOutput<float>& out) {
    out = forward_branch<float>(params, img);
    const int cells = ((img.rows() + opts.cell_px - 1) / opts.cell_px) * ((img.cols() + opts.cell_px - 1) / opts.cell_px);
    LandmarkSet all = grid_sample_landmarks(out.prob, mask, opts.cell_px,
                                            opts.max_candidates > 0 ? opts.max_candidates : cells);
    LandmarkSet kept;
    for (int i = 0; i < all.count(); ++i) {
      if (all.probs[static_cast<std::size_t>(i)] > opts.thresh_landmark) {
        kept.points.push_back(all.points[static_cast<std::size_t>(i)]);
        kept.probs.push_back(all.probs[static_cast<std::size_t>(i)]);
        kept.cells.push_back(all.cells[static_cast<std::size_t>(i)]);
      }
    }
    return kept;
  };
  BranchOutput<float> o1, o2;
  const LandmarkSet lm1 = candidates(i1, mask1, o1);
  const LandmarkSet lm2 = candidates(i2, mask2, o2);

  MatchSet result;
  result.candidates1 = lm1.count();
  result.candidates2 = lm2.count();
  if (lm1.count() == 0 || lm2.count() == 0) return result;

  const DescriptorSet<float> f1 = sample_descriptors(o1.pyramid, o1.strides, lm1.points, i1.rows(), i1.cols());
  const DescriptorSet<float> f2 = sample_descriptors(o2.pyramid, o2.strides, lm2.points, i2.rows(), i2.cols());
  const MatrixR<float> c_hat = match_head_logits(params, f1.values, f2.values).unaryExpr([](float x) {
    return sigmoid(x);
  });
  const MatrixR<float> d2 = pairwise_sq_distances(f1.values, f2.values);
  for (const auto& [i, j] : inverse_consistent_match(c_hat, d2)) {
    Match m;
    m.pt1 = lm1.points[static_cast<std::size_t>(i)];
    m.pt2 = lm2.points[static_cast<std::size_t>(j)];
    m.match_prob = c_hat(i, j);
    m.desc_dist2 = (f1.values.row(i) - f2.values.row(j)).squaredNorm();
    m.index1 = i;
    m.index2 = j;
    result.pairs.push_back(m);
  }
  return result;
}

MatchSet infer_pair(const ModelParams<float>& params, const GrayImage& i1, const GrayImage& i2,
                    const InferenceOptions& opts) {
  return infer_pair(params, i1, default_valid_mask(i1, opts.mask), i2, default_valid_mask(i2, opts.mask), opts);
}

void write_matches_csv(const fs::path& path, const MatchSet& matches) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << "row1,col1,row2,col2,match_prob,desc_dist2\n";
    out.precision(9);
    for (const auto& m : matches.pairs) {
      out << m.pt1.row << ',' << m.pt1.col << ',' << m.pt2.row << ',' << m.pt2.col << ',' << m.match_prob << ','
          << m.desc_dist2 << '\n';
    }
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

MatchSet read_matches_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("row1,col1,row2,col2", 0) != 0) {
    throw FormatError(path.string() + ": missing MatchSet header");
  }
  MatchSet set;
  int index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) {
      try {
        v.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError(path.string() + ": bad number '" + cell + "'");
      }
    }
    if (v.size() != 6) throw FormatError(path.string() + ": expected 6 columns");
    Match m;
    m.pt1 = {v[0], v[1]};
    m.pt2 = {v[2], v[3]};
    m.match_prob = v[4];
    m.desc_dist2 = v[5];
    m.index1 = m.index2 = index++;
    set.pairs.push_back(m);
  }
  return set;
}

}  // namespace landmatch
