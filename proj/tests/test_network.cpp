#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "landmatch/checkpoint.hpp"
#include "landmatch/network.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace landmatch;
using landmatch::testing::TempDir;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.encoder_filters = {2, 4, 8, 16, 32};
  return c;
}

template <typename T>
void randomize_biases(ModelParams<T>& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (std::size_t s = 0; s < p.slots().size(); ++s) {
    if (p.slots()[s].name.find("bias") == std::string::npos) continue;
    for (auto& v : p.slot(s)) v = static_cast<T>(nd(rng));
  }
}

Array2D<double> random_input(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Array2D<double> a(rows, cols);
  for (auto& v : a.values()) v = u(rng);
  return a;
}

std::vector<Tensor3<double>> random_pyramid(const std::vector<int>& channels, int rows, int cols,
                                            std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Tensor3<double>> out;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const int stride = 8 << i;
    Tensor3<double> t(channels[i], (rows + stride - 1) / stride, (cols + stride - 1) / stride);
    for (auto& v : t.data) v = nd(rng);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST(ModelConfig, DefaultWidths) {
  const ModelConfig c;
  EXPECT_EQ(c.descriptor_dim(), 384);
  EXPECT_EQ(c.head_input_width(), 768);
  EXPECT_EQ(c.size_multiple(), 16);
}

TEST(ModelConfig, InvalidRejected) {
  ModelConfig c;
  c.descriptor_blocks = {5};
  EXPECT_THROW(c.validate(), ArgumentError);
  c = ModelConfig{};
  c.encoder_filters = {};
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(ModelConfig, JsonRoundTripAndHash) {
  const ModelConfig c = small_config();
  EXPECT_EQ(ModelConfig::from_json(c.to_json()), c);
  EXPECT_EQ(ModelConfig::from_json(c.to_json()).hash(), c.hash());
  EXPECT_NE(ModelConfig{}.hash(), c.hash());
}

TEST(InitParams, DeterministicAndSeedDependent) {
  const auto a = init_params<float>(ModelConfig{}, 7);
  const auto b = init_params<float>(ModelConfig{}, 7);
  const auto c = init_params<float>(ModelConfig{}, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.slot("head.weight").size(), 768u);
  for (const float v : a.slot("enc0.conv1.bias")) EXPECT_EQ(v, 0.0f);
}

TEST(ForwardBranch, OutputShapes) {
  const auto p = init_params<float>(ModelConfig{}, 1);
  for (const auto& [r, c] : {std::pair{96, 96}, std::pair{50, 70}}) {
    const auto out = forward_branch(p, GrayImage(Array2D<float>(r, c, 1.0f)));
    EXPECT_EQ(out.prob.rows(), r);
    EXPECT_EQ(out.prob.cols(), c);
    ASSERT_EQ(out.pyramid.size(), 2u);
    EXPECT_EQ(out.strides, (std::vector<int>{8, 16}));
    EXPECT_EQ(out.pyramid[0].channels, 128);
    EXPECT_EQ(out.pyramid[1].channels, 256);
    EXPECT_EQ(out.pyramid[0].rows, (r + 7) / 8);
    EXPECT_EQ(out.pyramid[0].cols, (c + 7) / 8);
    EXPECT_EQ(out.pyramid[1].rows, (r + 15) / 16);
    EXPECT_EQ(out.pyramid[1].cols, (c + 15) / 16);
  }
}

TEST(ForwardBranch, ProbabilitiesInUnitInterval) {
  auto p = init_params<float>(ModelConfig{}, 2);
  randomize_biases(p, 3);
  std::mt19937_64 rng(4);
  const GrayImage img(oracle::random_image_pixels(64, 48, rng));
  const auto out = forward_branch(p, img);
  for (const float v : out.prob.values()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(ForwardBranch, ConstantImageNormalizesToZero) {
  const auto n = normalize_unit_range<float>(GrayImage(Array2D<float>(16, 16, 5.0f)));
  for (const float v : n.values()) EXPECT_EQ(v, 0.0f);
  // Zero input and zero biases: every activation is zero and prob is 0.5.
  const auto out = forward_branch(init_params<float>(small_config(), 5), n, false);
  for (const float v : out.prob.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(ForwardBranch, Deterministic) {
  const auto p = init_params<float>(ModelConfig{}, 9);
  std::mt19937_64 rng(10);
  const GrayImage img(oracle::random_image_pixels(48, 48, rng));
  const auto a = forward_branch(p, img);
  const auto b = forward_branch(p, img);
  EXPECT_EQ(a.prob, b.prob);
  EXPECT_EQ(a.pyramid[1].data, b.pyramid[1].data);
}

TEST(SampleDescriptors, OneHotNode) {
  std::vector<Tensor3<double>> pyr{Tensor3<double>(3, 4, 4), Tensor3<double>(2, 2, 2)};
  pyr[0].at(1, 2, 3) = 5.0;
  const std::vector<Point2> pts{{16.0, 24.0}};
  const auto set = sample_descriptors<double>(pyr, {8, 16}, pts, 32, 32);
  ASSERT_EQ(set.dim(), 5);
  for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(set.values(0, j), j == 1 ? 1.0 : 0.0);
  EXPECT_DOUBLE_EQ(set.norms[0], 5.0);
}

TEST(SampleDescriptors, MatchesBilinearOracle) {
  std::mt19937_64 rng(11);
  const int rows = 60, cols = 44;
  const auto pyr = random_pyramid({3, 2}, rows, cols, rng);
  std::uniform_real_distribution<double> ur(0.0, rows - 1.0), uc(0.0, cols - 1.0);
  std::vector<Point2> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({ur(rng), uc(rng)});
  pts.push_back({0, 0});
  pts.push_back({rows - 1.0, cols - 1.0});
  const auto set = sample_descriptors<double>(pyr, {8, 16}, pts, rows, cols);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<double> raw;
    for (int l = 0; l < 2; ++l) {
      const int s = 8 << l;
      for (int ch = 0; ch < pyr[l].channels; ++ch) {
        Array2D<double> plane(pyr[l].rows, pyr[l].cols);
        for (int r = 0; r < plane.rows(); ++r) {
          for (int c = 0; c < plane.cols(); ++c) plane(r, c) = pyr[l].at(ch, r, c);
        }
        raw.push_back(oracle::bilinear(plane, pts[i].row / s, pts[i].col / s));
      }
    }
    double norm = 0.0;
    for (const double v : raw) norm += v * v;
    norm = std::sqrt(norm);
    for (int j = 0; j < 5; ++j) ASSERT_NEAR(set.values(i, j), raw[j] / norm, 1e-12);
    EXPECT_NEAR(set.values.row(i).norm(), 1.0, 1e-12);
  }
}

TEST(SampleDescriptors, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  auto pyr = random_pyramid({3, 2}, 40, 40, rng);
  const std::vector<Point2> pts{{5.5, 7.25}, {20.0, 31.0}, {33.3, 2.2}};
  MatrixR<double> w(3, 5);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
  auto loss = [&] { return (sample_descriptors<double>(pyr, {8, 16}, pts, 40, 40).values.cwiseProduct(w)).sum(); };
  const auto set = sample_descriptors<double>(pyr, {8, 16}, pts, 40, 40);
  std::vector<Tensor3<double>> grad;
  sample_descriptors_backward<double>(pyr, {8, 16}, set, w, grad);
  for (int l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < pyr[l].data.size(); ++i) {
      const double orig = pyr[l].data[i];
      pyr[l].data[i] = orig + 1e-6;
      const double lp = loss();
      pyr[l].data[i] = orig - 1e-6;
      const double lm = loss();
      pyr[l].data[i] = orig;
      ASSERT_NEAR(grad[l].data[i], (lp - lm) / 2e-6, 1e-6);
    }
  }
}

TEST(MatchHead, ZeroWeightsGiveHalf) {
  auto p = init_params<double>(small_config(), 1);
  for (auto& v : p.slot("head.weight")) v = 0.0;
  for (auto& v : p.slot("head.bias")) v = 0.0;
  const std::vector<double> f(p.config().descriptor_dim(), 0.3);
  EXPECT_DOUBLE_EQ(match_head<double>(p, f, f), 0.5);
}

TEST(MatchHead, BatchLogitsMatchScalarAndAreSymmetric) {
  auto p = init_params<double>(small_config(), 2);
  randomize_biases(p, 3);
  const int d = p.config().descriptor_dim();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixR<double> f1(4, d), f2(3, d);
  for (int i = 0; i < f1.size(); ++i) f1.data()[i] = nd(rng);
  for (int i = 0; i < f2.size(); ++i) f2.data()[i] = nd(rng);
  const MatrixR<double> logits = match_head_logits(p, f1, f2);
  const MatrixR<double> swapped = match_head_logits(p, f2, f1);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double c = match_head<double>(p, {f1.row(i).data(), std::size_t(d)}, {f2.row(j).data(), std::size_t(d)});
      EXPECT_NEAR(sigmoid(logits(i, j)), c, 1e-12);
      EXPECT_NEAR(logits(i, j), swapped(j, i), 1e-12);
    }
  }
}

TEST(MatchHead, BackwardMatchesFiniteDifferences) {
  auto p = init_params<double>(small_config(), 5);
  randomize_biases(p, 6);
  const int d = p.config().descriptor_dim();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (auto& v : p.slot("head.weight")) v = nd(rng);
  MatrixR<double> f1(2, d), f2(3, d), dl(2, 3);
  for (int i = 0; i < f1.size(); ++i) f1.data()[i] = nd(rng);
  for (int i = 0; i < f2.size(); ++i) f2.data()[i] = nd(rng);
  for (int i = 0; i < dl.size(); ++i) dl.data()[i] = nd(rng);
  auto loss = [&] { return match_head_logits(p, f1, f2).cwiseProduct(dl).sum(); };
  MatrixR<double> d1, d2;
  auto grad = p.zeros_like();
  match_head_backward(p, f1, f2, dl, d1, d2, grad);
  const double h = 1e-4;
  for (int i = 0; i < f1.size(); ++i) {
    const double o = f1.data()[i];
    f1.data()[i] = o + h;
    const double lp = loss();
    f1.data()[i] = o - h;
    const double lm = loss();
    f1.data()[i] = o;
    ASSERT_NEAR(d1.data()[i], (lp - lm) / (2 * h), 1e-6);
  }
  for (int i = 0; i < f2.size(); ++i) {
    const double o = f2.data()[i];
    f2.data()[i] = o + h;
    const double lp = loss();
    f2.data()[i] = o - h;
    const double lm = loss();
    f2.data()[i] = o;
    ASSERT_NEAR(d2.data()[i], (lp - lm) / (2 * h), 1e-6);
  }
  auto w = p.slot("head.weight");
  const auto gw = grad.slot("head.weight");
  for (int i = 0; i < d * 2; i += 7) {
    const double o = w[i];
    w[i] = o + h;
    const double lp = loss();
    w[i] = o - h;
    const double lm = loss();
    w[i] = o;
    ASSERT_NEAR(gw[i], (lp - lm) / (2 * h), 1e-6);
  }
  EXPECT_NEAR(grad.slot("head.bias")[0], dl.sum(), 1e-12);
}

TEST(BackwardBranch, MatchesFiniteDifferences) {
  auto p = init_params<double>(small_config(), 13);
  randomize_biases(p, 14);
  const Array2D<double> input = random_input(32, 32, 15);
  std::mt19937_64 rng(16);
  std::normal_distribution<double> nd(0.0, 1.0);
  Array2D<double> a(32, 32);
  for (auto& v : a.values()) v = nd(rng);
  const auto ref = forward_branch(p, input, true);
  std::vector<Tensor3<double>> b;
  for (const auto& t : ref.pyramid) {
    Tensor3<double> x(t.channels, t.rows, t.cols);
    for (auto& v : x.data) v = nd(rng);
    b.push_back(std::move(x));
  }
  auto loss = [&] {
    const auto o = forward_branch(p, input, false);
    double s = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * o.prob.values()[i];
    for (std::size_t l = 0; l < b.size(); ++l) {
      for (std::size_t i = 0; i < b[l].data.size(); ++i) s += b[l].data[i] * o.pyramid[l].data[i];
    }
    return s;
  };
  auto grad = p.zeros_like();
  backward_branch(p, ref, a, b, grad);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t s = 0; s < p.slots().size(); ++s) {
    const auto& slot = p.slots()[s];
    if (slot.name.rfind("head", 0) == 0) continue;
    for (const std::size_t k : {std::size_t(0), slot.size / 2, slot.size - 1}) {
      const std::size_t idx = slot.offset + k;
      const double o = p.values()[idx];
      p.values()[idx] = o + h;
      const double lp = loss();
      p.values()[idx] = o - h;
      const double lm = loss();
      p.values()[idx] = o;
      const double num = (lp - lm) / (2 * h);
      const double ana = grad.values()[idx];
      worst = std::max(worst, std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6}));
    }
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir;
  auto p = init_params<float>(small_config(), 21);
  randomize_biases(p, 22);
  save_checkpoint(dir / "m.lmck", p, {3, 99});
  const auto loaded = load_checkpoint(dir / "m.lmck", small_config());
  EXPECT_EQ(loaded.params, p);
  EXPECT_EQ(loaded.meta.epoch, 3);
  EXPECT_EQ(loaded.meta.seed, 99u);
}

TEST(Checkpoint, RejectsMismatchAndCorruption) {
  TempDir dir;
  save_checkpoint(dir / "m.lmck", init_params<float>(small_config(), 1));
  EXPECT_THROW(load_checkpoint(dir / "m.lmck", ModelConfig{}), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "missing.lmck"), IoError);
  std::filesystem::resize_file(dir / "m.lmck", 100);
  EXPECT_THROW(load_checkpoint(dir / "m.lmck"), IoError);
}
