#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "landmatch/checkpoint.hpp"
#include "landmatch/pipeline.hpp"
#include "landmatch/texture.hpp"
#include "support/temp_dir.hpp"

using namespace landmatch;
using landmatch::testing::TempDir;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.k = 16;
  c.seed = 5;
  c.threads = 1;
  c.model.encoder_filters = {2, 4, 8, 16, 32};
  return c;
}

std::vector<GrayImage> textures(int count, int size) { return make_texture_set(count, size, 11); }

}  // namespace

TEST(TrainConfig, ValidationRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.m_neg = 0.05;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.family_weights = {{TransformFamily::affine, 0.0}};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DrawFamily, RespectsWeights) {
  std::mt19937_64 rng(1);
  const std::vector<FamilyWeight> w{{TransformFamily::rotation, 1.0}, {TransformFamily::elastic, 3.0}};
  int elastic = 0;
  for (int i = 0; i < 4000; ++i) elastic += draw_family(w, rng) == TransformFamily::elastic;
  EXPECT_NEAR(elastic / 4000.0, 0.75, 0.03);
  const auto defaults = default_family_weights();
  EXPECT_EQ(defaults.size(), 6u);
}

TEST(SynthesizePair, ConsistentShapesAndMasks) {
  std::mt19937_64 rng(2);
  const GrayImage ref = make_texture(64, rng);
  TransformSpec spec;
  spec.family = TransformFamily::affine;
  const TrainingPair p = synthesize_pair(ref, spec, MaskConfig{}, rng);
  EXPECT_EQ(p.target.rows(), 64);
  EXPECT_EQ(p.target_mask.rows(), 64);
  EXPECT_EQ(p.reference, ref);
  long on = 0;
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) on += p.reference_mask.at(r, c);
  }
  EXPECT_GT(on, 64 * 64 / 4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam opt(3, 0.01, 0.0);
  std::vector<float> p{1.0f, -2.0f, 0.5f};
  const std::vector<float> g{0.3f, -4.0f, 0.0f};
  opt.step(p, g);
  EXPECT_NEAR(p[0], 0.99f, 1e-6);
  EXPECT_NEAR(p[1], -1.99f, 1e-6);
  EXPECT_EQ(p[2], 0.5f);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, WeightDecayActsWithoutGradient) {
  Adam opt(1, 0.01, 1e-4);
  std::vector<float> p{2.0f};
  opt.step(p, std::vector<float>{0.0f});
  EXPECT_LT(p[0], 2.0f);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  TrainConfig c = tiny_config();
  c.epochs = 0;
  TempDir dir;
  const auto r = train(c, textures(4, 32), {dir.path(), std::nullopt, {}});
  EXPECT_EQ(r.params, init_params<float>(c.model, c.seed));
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(load_checkpoint(dir / "latest.lmck").params, r.params);
}

TEST(Train, DeterministicForFixedSeed) {
  const TrainConfig c = tiny_config();
  const auto data = textures(8, 96);
  TempDir dir;
  const auto a = train(c, data, {std::nullopt, dir / "a.jsonl", {}});
  const auto b = train(c, data, {std::nullopt, dir / "b.jsonl", {}});
  ASSERT_FALSE(a.log.empty());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss.total, b.log[i].loss.total);
    EXPECT_EQ(a.log[i].seed_state_digest, b.log[i].seed_state_digest);
  }
  EXPECT_EQ(a.params, b.params);
  std::ifstream fa(dir / "a.jsonl"), fb(dir / "b.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
  EXPECT_NE(sa.find("\"landmark_loss_I1\""), std::string::npos);
  EXPECT_EQ(a.epoch_mean_total.size(), 2u);
}

TEST(Train, WritesEpochCheckpoints) {
  TrainConfig c = tiny_config();
  c.epochs = 1;
  TempDir dir;
  int steps = 0;
  const auto r = train(c, textures(4, 32), {dir.path(), std::nullopt, [&](const StepRecord&) { ++steps; }});
  EXPECT_EQ(steps, static_cast<int>(r.log.size()));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_001.lmck"));
  const auto ck = load_checkpoint(dir / "latest.lmck", c.model);
  EXPECT_EQ(ck.params, r.params);
  EXPECT_EQ(ck.meta.epoch, 1);
}

TEST(Train, EmptyDatasetRejected) {
  EXPECT_THROW(train(tiny_config(), {}), ArgumentError);
}

TEST(InferPair, ZeroModelGivesNoMatches) {
  // sigmoid(0) = 0.5 is not above the 0.5 threshold.
  ModelConfig mc;
  mc.encoder_filters = {2, 4, 8, 16, 32};
  const auto zero = init_params<float>(mc, 1).zeros_like();
  std::mt19937_64 rng(3);
  const GrayImage img = make_texture(64, rng);
  const MatchSet m = infer_pair(zero, img, img);
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.candidates1, 0);
}

TEST(InferPair, ThresholdOneGivesNoMatches) {
  ModelConfig mc;
  mc.encoder_filters = {2, 4, 8, 16, 32};
  const auto p = init_params<float>(mc, 1);
  std::mt19937_64 rng(4);
  const GrayImage img = make_texture(64, rng);
  InferenceOptions o;
  o.thresh_landmark = 1.0;
  EXPECT_TRUE(infer_pair(p, img, img, o).pairs.empty());
}

TEST(InferPair, SelfPairOneToOneWithZeroDistance) {
  ModelConfig mc;
  mc.encoder_filters = {2, 4, 8, 16, 32};
  auto p = init_params<float>(mc, 6);
  for (auto& v : p.slot("out.bias")) v = 3.0f;
  // Head rewarding similar descriptors: +f1*f2, -(f1-f2)^2.
  auto hw = p.slot("head.weight");
  for (std::size_t i = 0; i < hw.size(); ++i) hw[i] = i < hw.size() / 2 ? 1.0f : -1.0f;
  std::mt19937_64 rng(5);
  const GrayImage img = make_texture(64, rng);
  InferenceOptions o;
  o.thresh_landmark = 0.1;
  const MatchSet m = infer_pair(p, img, img, o);
  ASSERT_FALSE(m.pairs.empty());
  std::set<int> i1, i2;
  for (const auto& x : m.pairs) {
    EXPECT_TRUE(i1.insert(x.index1).second);
    EXPECT_TRUE(i2.insert(x.index2).second);
    EXPECT_EQ(x.pt1, x.pt2);
    EXPECT_NEAR(x.desc_dist2, 0.0, 1e-9);
  }
}

TEST(MatchesCsv, RoundTrip) {
  TempDir dir;
  MatchSet m;
  m.pairs.push_back({{1, 2}, {3.5, 4}, 0.875, 0.0625, 0, 1});
  m.pairs.push_back({{10, 20}, {30, 40}, 0.123456789, 1.5, 2, 3});
  write_matches_csv(dir / "m.csv", m);
  const MatchSet back = read_matches_csv(dir / "m.csv");
  ASSERT_EQ(back.pairs.size(), 2u);
  EXPECT_EQ(back.pairs[0].pt2, (Point2{3.5, 4}));
  EXPECT_NEAR(back.pairs[1].match_prob, 0.123456789, 1e-9);
  EXPECT_DOUBLE_EQ(back.pairs[1].desc_dist2, 1.5);
  std::ifstream in(dir / "m.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "row1,col1,row2,col2,match_prob,desc_dist2");
}

TEST(MatchesCsv, MalformedRejected) {
  TempDir dir;
  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n";
  EXPECT_THROW(read_matches_csv(dir / "bad.csv"), FormatError);
  std::ofstream(dir / "short.csv") << "row1,col1,row2,col2,match_prob,desc_dist2\n1,2,3\n";
  EXPECT_THROW(read_matches_csv(dir / "short.csv"), FormatError);
  EXPECT_THROW(read_matches_csv(dir / "none.csv"), IoError);
}
