#include "landmatch/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "landmatch/error.hpp"

namespace landmatch {

template <typename T>
LandmarkSet grid_sample_landmarks(const Array2D<T>& prob_map, const BinaryMask& mask, int cell_px, int k) {
  if (cell_px < 1) throw ArgumentError("grid_sample_landmarks: cell_px must be >= 1");
  if (k < 1) throw ArgumentError("grid_sample_landmarks: K must be >= 1");
  if (mask.rows() != prob_map.rows() || mask.cols() != prob_map.cols()) {
    throw ArgumentError("grid_sample_landmarks: mask shape differs from probability map");
  }
  const int cell_rows = (prob_map.rows() + cell_px - 1) / cell_px;
  const int cell_cols = (prob_map.cols() + cell_px - 1) / cell_px;

  struct Candidate {
    double value;
    int cell;
    int row;
    int col;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(static_cast<std::size_t>(cell_rows) * cell_cols);
  for (int cr = 0; cr < cell_rows; ++cr) {
    for (int cc = 0; cc < cell_cols; ++cc) {
      Candidate best{-std::numeric_limits<double>::infinity(), cr * cell_cols + cc, -1, -1};
      const int r_end = std::min(prob_map.rows(), (cr + 1) * cell_px);
      const int c_end = std::min(prob_map.cols(), (cc + 1) * cell_px);
      for (int r = cr * cell_px; r < r_end; ++r) {
        for (int c = cc * cell_px; c < c_end; ++c) {
          if (!mask.at(r, c)) continue;
          const double v = static_cast<double>(prob_map(r, c));
          if (best.row < 0 || v > best.value) best = {v, best.cell, r, c};
        }
      }
      if (best.row >= 0) candidates.push_back(best);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.value != b.value ? a.value > b.value : a.cell < b.cell;
  });
  if (static_cast<int>(candidates.size()) > k) candidates.resize(static_cast<std::size_t>(k));

  LandmarkSet set;
  for (const auto& c : candidates) {
    set.points.push_back({static_cast<double>(c.row), static_cast<double>(c.col)});
    set.probs.push_back(c.value);
    set.cells.push_back(c.cell);
  }
  return set;
}

template LandmarkSet grid_sample_landmarks<float>(const Array2D<float>&, const BinaryMask&, int, int);
template LandmarkSet grid_sample_landmarks<double>(const Array2D<double>&, const BinaryMask&, int, int);

GroundTruth generate_ground_truth(const LandmarkSet& lm1, const LandmarkSet& lm2, const Transform& t,
                                  double thresh_px, const BinaryMask& mask1) {
  if (!(thresh_px > 0.0)) throw ArgumentError("generate_ground_truth: thresh_px must be positive");
  const int k1 = lm1.count();
  const int k2 = lm2.count();
  GroundTruth gt;
  gt.p1.assign(static_cast<std::size_t>(k1), 0);
  gt.p2.assign(static_cast<std::size_t>(k2), 0);
  gt.c = Array2D<std::uint8_t>(k1, k2, 0);
  const double rows = mask1.rows();
  const double cols = mask1.cols();
  for (int j = 0; j < k2; ++j) {
    const Point2 q = t.project_to_reference(lm2.points[static_cast<std::size_t>(j)]);
    if (!(q.row >= 0.0 && q.col >= 0.0 && q.row <= rows - 1.0 && q.col <= cols - 1.0)) continue;
    if (!mask1.at(static_cast<int>(std::lround(q.row)), static_cast<int>(std::lround(q.col)))) continue;
    for (int i = 0; i < k1; ++i) {
      const Point2& p = lm1.points[static_cast<std::size_t>(i)];
      const double dr = p.row - q.row;
      const double dc = p.col - q.col;
      if (std::sqrt(dr * dr + dc * dc) < thresh_px) {
        gt.c(i, j) = 1;
        gt.p1[static_cast<std::size_t>(i)] = 1;
        gt.p2[static_cast<std::size_t>(j)] = 1;
        ++gt.k_pos;
      }
    }
  }
  gt.k_neg = static_cast<long>(k1) * k2 - gt.k_pos;
  return gt;
}

void write_landmarks_csv(const std::filesystem::path& path, const LandmarkSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "row,col,prob\n";
  out.precision(9);
  for (int i = 0; i < set.count(); ++i) {
    out << set.points[static_cast<std::size_t>(i)].row << ',' << set.points[static_cast<std::size_t>(i)].col << ','
        << set.probs[static_cast<std::size_t>(i)] << '\n';
  }
}

}  // namespace landmatch
