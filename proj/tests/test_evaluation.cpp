#include <algorithm>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "landmatch/evaluation.hpp"
#include "landmatch/stats.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

using namespace landmatch;

namespace {

Transform translation(double dr, double dc) {
  AffineTransform2D a;
  a.translation = Eigen::Vector2d(dr, dc);
  return Transform(TransformFamily::affine, std::nullopt, a);
}

MatchSet random_matches(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 63.0);
  MatchSet m;
  for (int i = 0; i < n; ++i) m.pairs.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}, 0.9, 0.1, i, i});
  return m;
}

PairEvaluation pair(std::string id, std::string family, std::vector<double> errors) {
  return {std::move(id), std::move(family), std::move(errors)};
}

}  // namespace

TEST(Quartiles, LinearInterpolationConvention) {
  const std::vector<double> one{639};
  const Quartiles a = quartiles(one);
  EXPECT_EQ(a.median, 639);
  EXPECT_EQ(a.q1, 639);
  EXPECT_EQ(a.q3, 639);
  const std::vector<double> five{5, 3, 1, 4, 2};
  const Quartiles b = quartiles(five);
  EXPECT_EQ(b.median, 3);
  EXPECT_EQ(b.q1, 2);
  EXPECT_EQ(b.q3, 4);
  const std::vector<double> four{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quartiles(four).q1, 1.75);
}

TEST(MatchingErrors, IdentitySelfMatchesAreZero) {
  MatchSet m;
  m.pairs.push_back({{5, 6}, {5, 6}, 0.9, 0.0, 0, 0});
  m.pairs.push_back({{20, 1}, {20, 1}, 0.9, 0.0, 1, 1});
  for (const double e : compute_matching_errors(m, Transform::identity(), 1.0)) EXPECT_EQ(e, 0.0);
}

TEST(MatchingErrors, UncompensatedTranslation) {
  MatchSet m;
  m.pairs.push_back({{10, 10}, {10, 10}, 0.9, 0.0, 0, 0});
  EXPECT_DOUBLE_EQ(compute_matching_errors(m, translation(3, 4), 1.0)[0], 5.0);
  EXPECT_DOUBLE_EQ(compute_matching_errors(m, translation(3, 4), 0.5)[0], 2.5);
  EXPECT_DOUBLE_EQ(compute_matching_errors(m, translation(3, 4), Spacing{1.0, 2.0})[0], std::hypot(3.0, 8.0));
}

TEST(MatchingErrors, MatchesDirectRecomputationAndOrderInvariant) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Transform t = oracle::random_geometric(64, 64, rng);
    MatchSet m = random_matches(30, rng);
    const auto errors = compute_matching_errors(m, t, 0.8);
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
      const Point2 q = t.project_to_reference(m.pairs[i].pt2);
      EXPECT_NEAR(errors[i], 0.8 * std::hypot(m.pairs[i].pt1.row - q.row, m.pairs[i].pt1.col - q.col), 1e-12);
    }
    std::reverse(m.pairs.begin(), m.pairs.end());
    auto reversed = compute_matching_errors(m, t, 0.8);
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_EQ(reversed, errors);
  }
}

TEST(CumulativeCurve, CountingExamples) {
  const std::vector<double> errors{0, 1, 2, 3}, thresholds{1, 2, 4};
  EXPECT_EQ(cumulative_curve(errors, thresholds).fractions, (std::vector<double>{0.5, 0.75, 1.0}));
  const std::vector<double> zeros{0, 0, 0};
  for (const double f : cumulative_curve(zeros, thresholds).fractions) EXPECT_EQ(f, 1.0);
}

TEST(CumulativeCurve, EmptyWarnsAndBadThresholdsRejected) {
  const std::vector<double> none, thresholds{1, 2};
  const auto c = cumulative_curve(none, thresholds);
  EXPECT_TRUE(c.warning);
  EXPECT_EQ(c.fractions, (std::vector<double>{0.0, 0.0}));
  const std::vector<double> errors{1}, descending{2, 1};
  EXPECT_THROW(cumulative_curve(errors, descending), ArgumentError);
}

TEST(CumulativeCurve, MonotoneOnRandomInput) {
  std::mt19937_64 rng(2);
  std::exponential_distribution<double> ex(0.3);
  const auto th = default_curve_thresholds();
  ASSERT_TRUE(std::is_sorted(th.begin(), th.end()));
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> e(100);
    for (auto& v : e) v = ex(rng);
    const auto c = cumulative_curve(e, th);
    EXPECT_TRUE(std::is_sorted(c.fractions.begin(), c.fractions.end()));
  }
}

TEST(Summarize, FamiliesSortedWithAllLast) {
  const EvalReport r = summarize("m", {pair("a", "elastic", {1, 2}), pair("b", "affine", {0.5}),
                                       pair("c", "elastic", {4, 8, 9})});
  ASSERT_EQ(r.families.size(), 3u);
  EXPECT_EQ(r.families[0].family, "affine");
  EXPECT_EQ(r.families[1].family, "elastic");
  EXPECT_EQ(r.families[2].family, "all");
  EXPECT_EQ(r.families[1].pairs, 2);
  EXPECT_DOUBLE_EQ(r.families[1].matches.median, 2.5);
  EXPECT_DOUBLE_EQ(r.families[1].error_mm.median, (1.5 + 8.0) / 2);
  EXPECT_EQ(r.families[2].pairs, 3);
  EXPECT_THROW(summarize("m", {}), ArgumentError);
}

TEST(Summarize, RepeatedPairEqualsSinglePair) {
  const auto p = pair("x", "affine", {0.0, 1.0, 2.5, 7.0});
  const EvalReport one = summarize("m", {p});
  const EvalReport many = summarize("m", {p, p, p, p, p});
  ASSERT_EQ(one.families.size(), many.families.size());
  for (std::size_t f = 0; f < one.families.size(); ++f) {
    EXPECT_EQ(one.families[f].matches.median, many.families[f].matches.median);
    EXPECT_EQ(one.families[f].matches.q1, many.families[f].matches.q1);
    EXPECT_EQ(one.families[f].error_mm.median, many.families[f].error_mm.median);
    EXPECT_EQ(one.families[f].error_mm.q1, many.families[f].error_mm.q1);
    EXPECT_EQ(one.families[f].error_mm.q3, many.families[f].error_mm.q3);
    EXPECT_EQ(one.families[f].curve.fractions, many.families[f].curve.fractions);
  }
}

TEST(Summarize, FamilyWithoutMatchesWarns) {
  const EvalReport r = summarize("m", {pair("a", "elastic", {}), pair("b", "affine", {1.0})});
  EXPECT_TRUE(r.families[1].warning);
  EXPECT_FALSE(r.families[0].warning);
  EXPECT_TRUE(r.warning);
}

TEST(Reports, JsonRoundTrip) {
  const EvalReport r = summarize("proposed", {pair("a", "elastic", {1, 2}), pair("b", "affine", {0.5})});
  const EvalReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back.method, "proposed");
  ASSERT_EQ(back.pairs.size(), 2u);
  EXPECT_EQ(back.pairs[0].errors_mm, r.pairs[0].errors_mm);
  ASSERT_EQ(back.families.size(), r.families.size());
  EXPECT_EQ(back.families[1].curve.fractions, r.families[1].curve.fractions);
  EXPECT_THROW(report_from_json("[1,2"), FormatError);
}

TEST(Reports, CsvAndTableAndSvg) {
  const std::vector<EvalReport> reports{summarize("proposed", {pair("a", "elastic", {1, 2})}),
                                        summarize("sift", {pair("a", "elastic", {3})})};
  const std::string csv = render_summary_csv(reports);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "method,family,pairs,matches_median,matches_q1,matches_q3,error_median_mm,error_q1_mm,error_q3_mm,warning");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const std::string table = render_summary_table(reports);
  EXPECT_NE(table.find("proposed"), std::string::npos);
  EXPECT_NE(table.find("sift"), std::string::npos);
  const std::vector<CurveSeries> series{{"proposed", reports[0].families[0].curve}};
  const std::string svg = render_cumulative_svg(series, "elastic");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(WriteTextAtomic, ReplacesContent) {
  landmatch::testing::TempDir dir;
  write_text_atomic(dir / "a.txt", "one");
  write_text_atomic(dir / "a.txt", "two");
  std::ifstream in(dir / "a.txt");
  std::string s;
  in >> s;
  EXPECT_EQ(s, "two");
  EXPECT_FALSE(std::filesystem::exists(dir / "a.txt.tmp"));
}
