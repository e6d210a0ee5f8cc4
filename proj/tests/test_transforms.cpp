#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "landmatch/stats.hpp"
#include "landmatch/transforms.hpp"
#include "support/oracles.hpp"

using namespace landmatch;

namespace {

Transform translation(double dr, double dc) {
  AffineTransform2D a;
  a.translation = Eigen::Vector2d(dr, dc);
  return Transform(TransformFamily::affine, std::nullopt, a);
}

TransformSpec fixed_affine_spec() {
  TransformSpec s;
  s.family = TransformFamily::affine;
  s.rotation_deg = {0.0, 0.0};
  s.scale = {1.0, 1.0};
  s.shear = {0.0, 0.0};
  s.translation_frac = {0.0, 0.0};
  return s;
}

// Blob sum evaluated directly at a grid node.
Point2 blob_displacement(const std::vector<GaussianBlob>& blobs, int r, int c) {
  double ur = 0.0, uc = 0.0;
  for (const auto& b : blobs) {
    const double d2 = (r - b.center.row) * (r - b.center.row) + (c - b.center.col) * (c - b.center.col);
    const double w = std::exp(-d2 / (2.0 * b.sigma * b.sigma));
    ur += b.amp_row * w;
    uc += b.amp_col * w;
  }
  return {ur, uc};
}

}  // namespace

TEST(SampleTransform, DegenerateAffineRangesGiveIdentity) {
  std::mt19937_64 rng(1);
  const Transform t = sample_transform(fixed_affine_spec(), 64, 64, rng);
  const auto& a = std::get<AffineTransform2D>(t.geometry());
  EXPECT_TRUE(a.matrix.isApprox(Eigen::Matrix2d::Identity(), 1e-15));
  EXPECT_NEAR(a.translation.norm(), 0.0, 1e-12);
}

TEST(SampleTransform, FixedBrightnessMagnitude) {
  TransformSpec s;
  s.family = TransformFamily::brightness;
  s.intensity_magnitude = {0.2, 0.2};
  std::mt19937_64 rng(1);
  const Transform t = sample_transform(s, 32, 32, rng);
  ASSERT_TRUE(t.intensity().has_value());
  EXPECT_EQ(t.intensity()->mode, IntensityMode::brightness);
  EXPECT_DOUBLE_EQ(t.intensity()->magnitude, 0.2);
  EXPECT_FALSE(t.is_geometric());
}

TEST(SampleTransform, ZeroAmplitudeElasticIsIdentity) {
  TransformSpec s;
  s.family = TransformFamily::elastic;
  s.elastic_amplitude_px = {0.0, 0.0};
  std::mt19937_64 rng(2);
  const Transform t = sample_transform(s, 40, 40, rng);
  for (const Point2 p : {Point2{0, 0}, Point2{3.25, 17.5}, Point2{39, 39}}) {
    EXPECT_EQ(t.project_to_reference(p), p);
  }
  std::mt19937_64 img_rng(3);
  const GrayImage img(oracle::random_image_pixels(40, 40, img_rng));
  EXPECT_EQ(warp_image(img, t), img);
}

TEST(SampleTransform, DeterministicGivenSeed) {
  for (auto fam : {TransformFamily::affine, TransformFamily::elastic, TransformFamily::contrast}) {
    TransformSpec s;
    s.family = fam;
    std::mt19937_64 a(9), b(9);
    EXPECT_EQ(transform_to_json(sample_transform(s, 50, 60, a)), transform_to_json(sample_transform(s, 50, 60, b)));
  }
}

TEST(SampleTransform, InvalidRangesRejected) {
  std::mt19937_64 rng(1);
  TransformSpec s;
  s.scale = {1.2, 0.9};
  EXPECT_THROW(sample_transform(s, 32, 32, rng), ArgumentError);
  TransformSpec cap;
  cap.family = TransformFamily::brightness;
  cap.intensity_magnitude = {-0.5, 0.5};
  EXPECT_THROW(sample_transform(cap, 32, 32, rng), ArgumentError);
}

TEST(SampleTransform, SingleComponentFamilies) {
  std::mt19937_64 rng(4);
  TransformSpec s;
  s.family = TransformFamily::rotation;
  const auto rot = std::get<AffineTransform2D>(sample_transform(s, 65, 65, rng).geometry());
  EXPECT_NEAR(rot.determinant(), 1.0, 1e-12);
  // About the image centre: the centre is a fixed point.
  EXPECT_NEAR(rot.apply({32, 32}).row, 32.0, 1e-9);
  EXPECT_NEAR(rot.apply({32, 32}).col, 32.0, 1e-9);
  s.family = TransformFamily::scaling;
  const auto sc = std::get<AffineTransform2D>(sample_transform(s, 65, 65, rng).geometry());
  EXPECT_NEAR(sc.matrix(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(sc.matrix(0, 0), sc.matrix(1, 1), 1e-15);
}

TEST(Transform, SingularAffineRejected) {
  AffineTransform2D a;
  a.matrix << 1.0, 2.0, 0.5, 1.0;
  EXPECT_THROW(Transform(TransformFamily::affine, std::nullopt, a), ArgumentError);
}

TEST(WarpImage, IdentityIsPixelIdentical) {
  std::mt19937_64 rng(5);
  const GrayImage img(oracle::random_image_pixels(33, 47, rng));
  EXPECT_EQ(warp_image(img, Transform::identity()), img);
  EXPECT_EQ(warp_image(img, translation(0.0, 0.0)), img);
}

TEST(WarpImage, BrightnessOnConstantImage) {
  const GrayImage img(Array2D<float>(20, 20, 3.0f));
  const Transform t(TransformFamily::brightness, IntensityJitter{IntensityMode::brightness, 0.2}, std::monostate{});
  const GrayImage out = warp_image(img, t);
  for (const float v : out.pixels().values()) EXPECT_FLOAT_EQ(v, 3.0f + 0.2f * 3.0f);
}

TEST(WarpImage, ContrastScalesAboutMean) {
  Array2D<float> px(16, 16, 1.0f);
  for (int c = 0; c < 16; ++c) px(0, c) = 3.0f;
  const GrayImage img(px);
  const double mean = img.mean_intensity();
  const Transform t(TransformFamily::contrast, IntensityJitter{IntensityMode::contrast, -0.1}, std::monostate{});
  const GrayImage out = warp_image(img, t);
  EXPECT_NEAR(out(0, 0), mean + (3.0 - mean) * 0.9, 1e-5);
  EXPECT_NEAR(out(5, 5), mean + (1.0 - mean) * 0.9, 1e-5);
}

TEST(WarpImage, TranslationMovesDeltaBackward) {
  Array2D<float> px(32, 32, 0.0f);
  px(20, 10) = 1.0f;
  const GrayImage out = warp_image(GrayImage(px), translation(5.0, 0.0));
  EXPECT_EQ(out(15, 10), 1.0f);
  EXPECT_EQ(out(20, 10), 0.0f);
}

TEST(WarpImage, MatchesPerPixelOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const GrayImage img(oracle::random_image_pixels(40, 36, rng));
    const Transform t = oracle::random_geometric(40, 36, rng);
    const GrayImage out = warp_image(img, t, -1.0f);
    Array2D<double> ref(40, 36);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 36; ++c) ref(r, c) = img(r, c);
    }
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 36; ++c) {
        const Point2 q = t.project_to_reference({double(r), double(c)});
        const bool in = q.row >= 0 && q.col >= 0 && q.row <= 39 && q.col <= 35;
        const double expect = in ? oracle::bilinear(ref, q.row, q.col) : -1.0;
        ASSERT_NEAR(out(r, c), expect, 1e-5) << r << "," << c;
      }
    }
  }
}

TEST(WarpMask, NearestNeighbourOfSameMap) {
  std::mt19937_64 rng(7);
  BinaryMask m(30, 30, 0);
  for (int r = 5; r < 25; ++r) {
    for (int c = 8; c < 20; ++c) m.set(r, c, true);
  }
  const Transform t = oracle::random_geometric(30, 30, rng);
  const BinaryMask w = warp_mask(m, t);
  for (int r = 0; r < 30; ++r) {
    for (int c = 0; c < 30; ++c) {
      const Point2 q = t.project_to_reference({double(r), double(c)});
      const int rr = static_cast<int>(std::lround(q.row));
      const int cc = static_cast<int>(std::lround(q.col));
      const bool expect = rr >= 0 && cc >= 0 && rr < 30 && cc < 30 && m.at(rr, cc);
      ASSERT_EQ(w.at(r, c), expect);
    }
  }
}

TEST(Project, IdentityAndTranslation) {
  EXPECT_EQ(Transform::identity().project_to_reference({10, 20}), (Point2{10, 20}));
  const Point2 p = translation(3.0, -4.0).project_to_reference({10, 20});
  EXPECT_DOUBLE_EQ(p.row, 13.0);
  EXPECT_DOUBLE_EQ(p.col, 16.0);
  const Transform bright(TransformFamily::brightness, IntensityJitter{}, std::monostate{});
  EXPECT_EQ(bright.project_to_reference({1.5, 2.5}), (Point2{1.5, 2.5}));
}

TEST(Project, ElasticMatchesManualBilinear) {
  std::mt19937_64 rng(8);
  TransformSpec s;
  s.family = TransformFamily::elastic;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Transform t = sample_transform(s, 48, 56, rng);
    const auto& e = std::get<ElasticField>(t.geometry());
    Array2D<double> ur(48, 56), uc(48, 56);
    for (int r = 0; r < 48; ++r) {
      for (int c = 0; c < 56; ++c) {
        const Point2 u = blob_displacement(e.blobs(), r, c);
        ur(r, c) = u.row;
        uc(r, c) = u.col;
      }
    }
    std::uniform_real_distribution<double> ur_d(0.0, 47.0), uc_d(0.0, 55.0);
    for (int k = 0; k < 50; ++k) {
      const Point2 p{ur_d(rng), uc_d(rng)};
      const Point2 q = t.project_to_reference(p);
      worst = std::max({worst, std::abs(q.row - (p.row + oracle::bilinear(ur, p.row, p.col))),
                        std::abs(q.col - (p.col + oracle::bilinear(uc, p.row, p.col)))});
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Project, WarpAndProjectionShareTheMap) {
  // A reference image holding its own coordinates reveals where each target
  // pixel was sampled from.
  Array2D<float> rows(64, 64), cols(64, 64);
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      rows(r, c) = static_cast<float>(r);
      cols(r, c) = static_cast<float>(c);
    }
  }
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 6; ++trial) {
    const Transform t = oracle::random_geometric(64, 64, rng);
    const GrayImage wr = warp_image(GrayImage(rows), t, -1.0f);
    const GrayImage wc = warp_image(GrayImage(cols), t, -1.0f);
    for (int r = 0; r < 64; ++r) {
      for (int c = 0; c < 64; ++c) {
        if (wr(r, c) < 0.0f) continue;
        const Point2 q = t.project_to_reference({double(r), double(c)});
        ASSERT_NEAR(wr(r, c), q.row, 1e-4);
        ASSERT_NEAR(wc(r, c), q.col, 1e-4);
      }
    }
  }
}

TEST(Affine, CompositionMatchesComposedMatrix) {
  const AffineTransform2D a = make_affine(12.0, 1.1, 0.05, {3.0, -2.0}, {20, 20});
  const AffineTransform2D b = make_affine(-7.0, 0.9, -0.08, {-1.0, 4.0}, {10, 30});
  const AffineTransform2D ab = a.after(b);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 150.0);
  for (int k = 0; k < 100; ++k) {
    const Point2 p{u(rng), u(rng)};
    const Point2 seq = a.apply(b.apply(p));
    const Point2 one = ab.apply(p);
    EXPECT_NEAR(seq.row, one.row, 1e-9);
    EXPECT_NEAR(seq.col, one.col, 1e-9);
  }
}

TEST(DisplacementStats, IdentityIsZero) {
  const BinaryMask m(32, 32, 1);
  const DisplacementStats s = displacement_stats(Transform::identity(), m);
  EXPECT_EQ(s.median_mm, 0.0);
  EXPECT_EQ(s.q1_mm, 0.0);
  EXPECT_EQ(s.q3_mm, 0.0);
}

TEST(DisplacementStats, TranslationIsConstant) {
  const DisplacementStats s = displacement_stats(translation(3.0, 4.0), BinaryMask(32, 32, 1));
  EXPECT_DOUBLE_EQ(s.median_mm, 5.0);
  EXPECT_DOUBLE_EQ(s.q1_mm, 5.0);
  EXPECT_DOUBLE_EQ(s.q3_mm, 5.0);
  const DisplacementStats mm = displacement_stats(translation(3.0, 4.0), BinaryMask(32, 32, 1), {2.0, 2.0});
  EXPECT_DOUBLE_EQ(mm.median_mm, 10.0);
}

TEST(DisplacementStats, EmptyMaskRejected) {
  EXPECT_THROW(displacement_stats(Transform::identity(), BinaryMask(32, 32, 0)), ArgumentError);
}

TEST(TransformJson, RoundTripsEveryFamily) {
  std::mt19937_64 rng(12);
  for (auto fam : {TransformFamily::identity, TransformFamily::brightness, TransformFamily::contrast,
                   TransformFamily::rotation, TransformFamily::scaling, TransformFamily::shearing,
                   TransformFamily::affine, TransformFamily::elastic}) {
    TransformSpec s;
    s.family = fam;
    const Transform t = sample_transform(s, 40, 44, rng);
    const Transform back = transform_from_json(transform_to_json(t));
    EXPECT_EQ(back.family(), fam);
    for (const Point2 p : {Point2{0, 0}, Point2{12.5, 30.25}, Point2{39, 43}}) {
      const Point2 a = t.project_to_reference(p);
      const Point2 b = back.project_to_reference(p);
      EXPECT_DOUBLE_EQ(a.row, b.row);
      EXPECT_DOUBLE_EQ(a.col, b.col);
    }
  }
}

TEST(TransformJson, MalformedIsFormatError) {
  EXPECT_THROW(transform_from_json("{not json"), FormatError);
  EXPECT_THROW(transform_from_json(R"({"family": "warp"})"), FormatError);
}
