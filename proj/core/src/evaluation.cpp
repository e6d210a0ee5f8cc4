#include "landmatch/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

namespace landmatch {

namespace fs = std::filesystem;

std::vector<double> compute_matching_errors(const MatchSet& matches, const Transform& t, Spacing spacing) {
  std::vector<double> out;
  out.reserve(matches.pairs.size());
  for (const auto& m : matches.pairs) {
    const Point2 q = t.project_to_reference(m.pt2);
    out.push_back(std::hypot((m.pt1.row - q.row) * spacing.row_mm, (m.pt1.col - q.col) * spacing.col_mm));
  }
  return out;
}

std::vector<double> compute_matching_errors(const MatchSet& matches, const Transform& t, double spacing_mm) {
  return compute_matching_errors(matches, t, Spacing{spacing_mm, spacing_mm});
}

CumulativeCurve cumulative_curve(std::span<const double> errors_mm, std::span<const double> thresholds_mm) {
  if (!std::is_sorted(thresholds_mm.begin(), thresholds_mm.end())) {
    throw ArgumentError("cumulative_curve: thresholds must be ascending");
  }
  CumulativeCurve curve;
  curve.thresholds_mm.assign(thresholds_mm.begin(), thresholds_mm.end());
  curve.fractions.assign(thresholds_mm.size(), 0.0);
  if (errors_mm.empty()) {
    curve.warning = true;
    return curve;
  }
  std::vector<double> sorted(errors_mm.begin(), errors_mm.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < thresholds_mm.size(); ++i) {
    const auto n = std::upper_bound(sorted.begin(), sorted.end(), thresholds_mm[i]) - sorted.begin();
    curve.fractions[i] = static_cast<double>(n) / static_cast<double>(sorted.size());
  }
  return curve;
}

std::vector<double> default_curve_thresholds() {
  return {0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0};
}

namespace {

FamilySummary summarize_group(const std::string& family, const std::vector<const PairEvaluation*>& group,
                              std::span<const double> thresholds) {
  FamilySummary s;
  s.family = family;
  s.pairs = static_cast<int>(group.size());
  std::vector<double> counts, medians, pooled;
  for (const auto* p : group) {
    counts.push_back(p->match_count());
    if (!p->errors_mm.empty()) medians.push_back(quantile(p->errors_mm, 0.5));
    pooled.insert(pooled.end(), p->errors_mm.begin(), p->errors_mm.end());
  }
  s.matches = quartiles(counts);
  s.error_mm = quartiles(medians);
  s.curve = cumulative_curve(pooled, thresholds);
  s.warning = pooled.empty();
  return s;
}

}  // namespace

EvalReport summarize(const std::string& method, const std::vector<PairEvaluation>& pairs,
                     std::span<const double> thresholds_mm) {
  if (pairs.empty()) throw ArgumentError("summarize: no evaluated pairs");
  const std::vector<double> defaults = default_curve_thresholds();
  if (thresholds_mm.empty()) thresholds_mm = defaults;
  EvalReport report;
  report.method = method;
  report.pairs = pairs;
  std::map<std::string, std::vector<const PairEvaluation*>> groups;
  std::vector<const PairEvaluation*> all;
  for (const auto& p : report.pairs) {
    groups[p.family].push_back(&p);
    all.push_back(&p);
  }
  for (const auto& [family, group] : groups) report.families.push_back(summarize_group(family, group, thresholds_mm));
  report.families.push_back(summarize_group("all", all, thresholds_mm));
  report.warning = std::any_of(report.families.begin(), report.families.end(),
                               [](const FamilySummary& f) { return f.warning; });
  return report;
}

namespace {

std::string fmt(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string with_iqr(const Quartiles& q, int precision) {
  return fmt(q.median, precision) + " (" + fmt(q.q1, precision) + " - " + fmt(q.q3, precision) + ")";
}

}  // namespace

std::string render_summary_table(std::span<const EvalReport> reports) {
  std::vector<std::array<std::string, 5>> rows;
  rows.push_back({"Method", "Family", "Pairs", "Matches median (IQR)", "Error mm median (IQR)"});
  for (const auto& r : reports) {
    for (const auto& f : r.families) {
      rows.push_back({r.method, f.family, std::to_string(f.pairs), with_iqr(f.matches, 1),
                      f.warning ? std::string("n/a (no matches)") : with_iqr(f.error_mm, 2)});
    }
  }
  std::array<std::size_t, 5> width{};
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::ostringstream os;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      os << std::left << std::setw(static_cast<int>(width[i])) << rows[k][i] << (i + 1 < rows[k].size() ? "  " : "");
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (const auto w : width) total += w;
      os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return os.str();
}

std::string render_summary_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << "method,family,pairs,matches_median,matches_q1,matches_q3,error_median_mm,error_q1_mm,error_q3_mm,warning\n";
  os.precision(10);
  for (const auto& r : reports) {
    for (const auto& f : r.families) {
      os << r.method << ',' << f.family << ',' << f.pairs << ',' << f.matches.median << ',' << f.matches.q1 << ','
         << f.matches.q3 << ',' << f.error_mm.median << ',' << f.error_mm.q1 << ',' << f.error_mm.q3 << ','
         << (f.warning ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

namespace {

nlohmann::json quartiles_json(const Quartiles& q) { return {{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}}; }

Quartiles quartiles_from(const nlohmann::json& j) {
  return {j.at("q1").get<double>(), j.at("median").get<double>(), j.at("q3").get<double>()};
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["method"] = report.method;
  j["warning"] = report.warning;
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : report.pairs) {
    j["pairs"].push_back({{"pair_id", p.pair_id}, {"family", p.family}, {"match_count", p.match_count()},
                          {"errors_mm", p.errors_mm}});
  }
  j["families"] = nlohmann::json::array();
  for (const auto& f : report.families) {
    j["families"].push_back({{"family", f.family},
                             {"pairs", f.pairs},
                             {"matches", quartiles_json(f.matches)},
                             {"error_mm", quartiles_json(f.error_mm)},
                             {"curve", {{"thresholds_mm", f.curve.thresholds_mm}, {"fractions", f.curve.fractions}}},
                             {"warning", f.warning}});
  }
  return j.dump(2);
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.warning = j.at("warning").get<bool>();
    for (const auto& p : j.at("pairs")) {
      r.pairs.push_back({p.at("pair_id").get<std::string>(), p.at("family").get<std::string>(),
                         p.at("errors_mm").get<std::vector<double>>()});
    }
    for (const auto& f : j.at("families")) {
      FamilySummary s;
      s.family = f.at("family").get<std::string>();
      s.pairs = f.at("pairs").get<int>();
      s.matches = quartiles_from(f.at("matches"));
      s.error_mm = quartiles_from(f.at("error_mm"));
      s.curve.thresholds_mm = f.at("curve").at("thresholds_mm").get<std::vector<double>>();
      s.curve.fractions = f.at("curve").at("fractions").get<std::vector<double>>();
      s.warning = f.at("warning").get<bool>();
      s.curve.warning = s.warning;
      r.families.push_back(std::move(s));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("EvalReport JSON: ") + e.what());
  }
}

std::string render_cumulative_svg(std::span<const CurveSeries> series, const std::string& title) {
  constexpr double kWidth = 640, kHeight = 420, kLeft = 60, kRight = 180, kTop = 40, kBottom = 50;
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  double x_max = 1.0;
  for (const auto& s : series) {
    if (!s.curve.thresholds_mm.empty()) x_max = std::max(x_max, s.curve.thresholds_mm.back());
  }
  auto px = [&](double x) { return kLeft + plot_w * x / x_max; };
  auto py = [&](double y) { return kTop + plot_h * (1.0 - y); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";
  os << "<g stroke=\"#ccc\" stroke-width=\"1\">\n";
  for (int k = 0; k <= 10; ++k) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(k / 10.0) << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
       << py(k / 10.0) << "\"/>\n";
  }
  os << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 10; k += 2) {
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(k / 10.0) + 4 << "\" text-anchor=\"end\">" << k * 10
       << "%</text>\n";
  }
  for (int k = 0; k <= 8; ++k) {
    const double x = x_max * k / 8.0;
    os << "<text x=\"" << px(x) << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">" << x << "</text>\n";
  }
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
     << "\" text-anchor=\"middle\">spatial matching error (mm)</text>\n</g>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& c = series[i].curve;
    const char* color = colors[i % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < c.thresholds_mm.size(); ++k) {
      os << px(c.thresholds_mm[k]) << ',' << py(c.fractions[k]) << ' ';
    }
    os << "\"/>\n";
    const double ly = kTop + 16.0 + 18.0 * static_cast<double>(i);
    os << "<line x1=\"" << kLeft + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + plot_w + 32 << "\" y2=\""
       << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + plot_w + 38 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << series[i].label << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace landmatch
