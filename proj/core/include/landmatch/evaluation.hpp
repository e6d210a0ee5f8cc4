#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "landmatch/pipeline.hpp"
#include "landmatch/stats.hpp"
#include "landmatch/transforms.hpp"

namespace landmatch {

/// ||pt1 - project_to_reference(pt2)|| in millimetres, one entry per match.
std::vector<double> compute_matching_errors(const MatchSet& matches, const Transform& t, double spacing_mm);
std::vector<double> compute_matching_errors(const MatchSet& matches, const Transform& t, Spacing spacing);

struct CumulativeCurve {
  std::vector<double> thresholds_mm;
  std::vector<double> fractions;
  bool warning = false;  // no errors to count
};

/// Fraction of errors <= each threshold. Thresholds must be ascending.
CumulativeCurve cumulative_curve(std::span<const double> errors_mm, std::span<const double> thresholds_mm);

std::vector<double> default_curve_thresholds();

struct PairEvaluation {
  std::string pair_id;
  std::string family;
  std::vector<double> errors_mm;

  int match_count() const noexcept { return static_cast<int>(errors_mm.size()); }
};

struct FamilySummary {
  std::string family;  // "all" aggregates every pair
  int pairs = 0;
  Quartiles matches;
  Quartiles error_mm;  // over per-pair median errors
  CumulativeCurve curve;  // over pooled per-match errors
  bool warning = false;   // no matches at all in this family
};

struct EvalReport {
  std::string method;
  std::vector<PairEvaluation> pairs;
  std::vector<FamilySummary> families;  // sorted by family name, "all" last
  bool warning = false;
};

/// Per-family aggregates. Requires at least one pair.
EvalReport summarize(const std::string& method, const std::vector<PairEvaluation>& pairs,
                     std::span<const double> thresholds_mm = {});

/// Reference rows of the published table (CT data), for captions only.
struct PublishedRow {
  const char* method;
  const char* intensity;
  const char* affine;
  const char* elastic;
};
inline constexpr PublishedRow kPublishedMatchCounts[] = {
    {"Proposed Approach", "639 (547 - 729)", "466 (391 - 555)", "370 (293 - 452)"},
    {"SIFT - InverseConsistency", "711 (594 - 862)", "610 (509 - 749)", "542 (450 - 670)"},
    {"SIFT - RatioTest", "698 (578 - 849)", "520 (426 - 663)", "418 (330 - 541)"},
};

/// Aligned text table with one row per (method, family).
std::string render_summary_table(std::span<const EvalReport> reports);

/// Header `method,family,pairs,matches_median,matches_q1,matches_q3,error_median_mm,error_q1_mm,error_q3_mm,warning`.
std::string render_summary_csv(std::span<const EvalReport> reports);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

struct CurveSeries {
  std::string label;
  CumulativeCurve curve;
};

/// Static SVG line plot of cumulative curves.
std::string render_cumulative_svg(std::span<const CurveSeries> series, const std::string& title);

/// Writes through a temporary file and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace landmatch
