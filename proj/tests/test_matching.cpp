#include <random>
#include <set>

#include <gtest/gtest.h>

#include "landmatch/matching.hpp"
#include "support/oracles.hpp"

using namespace landmatch;

namespace {

MatrixR<double> mat(int rows, int cols, std::initializer_list<double> v) {
  MatrixR<double> m(rows, cols);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

// Coarse levels make ties common.
MatrixR<double> random_scores(int rows, int cols, int levels, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, levels - 1);
  MatrixR<double> m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = u(rng) / double(levels);
  return m;
}

}  // namespace

TEST(InverseConsistentMatch, AgreeingScoresMatchDiagonal) {
  const auto c = mat(2, 2, {0.9, 0.1, 0.2, 0.8});
  const auto d = mat(2, 2, {0.1, 1.5, 1.2, 0.2});
  EXPECT_EQ(inverse_consistent_match(c, d), (std::vector<IndexPair>{{0, 0}, {1, 1}}));
}

TEST(InverseConsistentMatch, DisagreeingCriteriaRejected) {
  // Row 0 prefers column 0 under c_hat but column 1 under distance.
  const auto c = mat(1, 2, {0.9, 0.5});
  const auto d = mat(1, 2, {0.8, 0.2});
  EXPECT_TRUE(inverse_consistent_match(c, d).empty());
}

TEST(InverseConsistentMatch, ColumnCompetitionRejected) {
  // Both rows prefer column 0; row 1 wins it, row 0 gets nothing.
  const auto c = mat(2, 2, {0.7, 0.1, 0.9, 0.2});
  const auto d = mat(2, 2, {0.3, 1.0, 0.1, 1.0});
  EXPECT_EQ(inverse_consistent_match(c, d), (std::vector<IndexPair>{{1, 0}}));
}

TEST(InverseConsistentMatch, EmptyInputs) {
  EXPECT_TRUE(inverse_consistent_match(MatrixR<double>(0, 3), MatrixR<double>(0, 3)).empty());
  EXPECT_TRUE(inverse_consistent_match(MatrixR<double>(3, 0), MatrixR<double>(3, 0)).empty());
  EXPECT_THROW(inverse_consistent_match(MatrixR<double>(2, 3), MatrixR<double>(3, 2)), ArgumentError);
}

TEST(InverseConsistentMatch, TiesGoToLowerIndex) {
  const auto c = mat(1, 3, {0.5, 0.5, 0.5});
  const auto d = mat(1, 3, {0.2, 0.2, 0.2});
  EXPECT_EQ(inverse_consistent_match(c, d), (std::vector<IndexPair>{{0, 0}}));
}

TEST(InverseConsistentMatch, MatchesOracleOneToOneOrdered) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> kk(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    const int k1 = kk(rng), k2 = kk(rng);
    const int levels = trial % 2 == 0 ? 5 : 1000;
    const auto c = random_scores(k1, k2, levels, rng);
    const auto d = random_scores(k1, k2, levels, rng);
    const auto got = inverse_consistent_match(c, d);
    ASSERT_EQ(got, oracle::mutual_best(c, d)) << "trial " << trial;
    std::set<int> is, js;
    for (std::size_t n = 0; n < got.size(); ++n) {
      EXPECT_TRUE(is.insert(got[n].i).second);
      EXPECT_TRUE(js.insert(got[n].j).second);
      if (n > 0) EXPECT_LT(got[n - 1].i, got[n].i);
    }
  }
}

TEST(InverseConsistentMatch, InvariantToMonotoneRescaling) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = random_scores(15, 12, 1000, rng);
    const auto d = random_scores(15, 12, 1000, rng);
    const MatrixR<double> c2 = c.unaryExpr([](double x) { return std::exp(3.0 * x) + 1.0; });
    const MatrixR<double> d2 = d.unaryExpr([](double x) { return x * x * 7.0; });
    EXPECT_EQ(inverse_consistent_match(c, d), inverse_consistent_match(c2, d2));
  }
}

TEST(InverseConsistentMatch, FloatAndDoubleAgree) {
  std::mt19937_64 rng(3);
  const auto c = random_scores(20, 20, 1000, rng);
  const auto d = random_scores(20, 20, 1000, rng);
  const MatrixR<float> cf = c.cast<float>(), df = d.cast<float>();
  EXPECT_EQ(inverse_consistent_match(c, d), inverse_consistent_match(cf, df));
}
