#include "landmatch/transforms.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/LU>

#include "json.hpp"
#include "landmatch/stats.hpp"

namespace landmatch {

using nlohmann::json;

Point2 AffineTransform2D::apply(Point2 p) const noexcept {
  return {matrix(0, 0) * p.row + matrix(0, 1) * p.col + translation(0),
          matrix(1, 0) * p.row + matrix(1, 1) * p.col + translation(1)};
}

AffineTransform2D AffineTransform2D::after(const AffineTransform2D& first) const {
  AffineTransform2D out;
  out.matrix = matrix * first.matrix;
  out.translation = matrix * first.translation + translation;
  return out;
}

AffineTransform2D make_affine(double rotation_deg, double scale, double shear, Point2 translation, Point2 center) {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  Eigen::Matrix2d rot;
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  Eigen::Matrix2d sh;
  sh << 1.0, shear, 0.0, 1.0;
  AffineTransform2D a;
  a.matrix = rot * (scale * sh);
  const Eigen::Vector2d c(center.row, center.col);
  a.translation = c - a.matrix * c + Eigen::Vector2d(translation.row, translation.col);
  return a;
}

ElasticField::ElasticField(int rows, int cols, std::vector<GaussianBlob> blobs)
    : blobs_(std::move(blobs)), du_row_(rows, cols, 0.0), du_col_(rows, cols, 0.0) {
  for (const auto& b : blobs_) {
    if (!(b.sigma > 0.0)) throw ArgumentError("ElasticField: blob sigma must be positive");
  }
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double ur = 0.0, uc = 0.0;
      for (const auto& b : blobs_) {
        const double dr = r - b.center.row;
        const double dc = c - b.center.col;
        const double w = std::exp(-(dr * dr + dc * dc) / (2.0 * b.sigma * b.sigma));
        ur += b.amp_row * w;
        uc += b.amp_col * w;
      }
      du_row_(r, c) = ur;
      du_col_(r, c) = uc;
    }
  }
}

Point2 ElasticField::displacement_at(Point2 p) const {
  return {bilinear_sample(du_row_, p.row, p.col), bilinear_sample(du_col_, p.row, p.col)};
}

Point2 ElasticField::apply(Point2 p) const {
  const Point2 u = displacement_at(p);
  return {p.row + u.row, p.col + u.col};
}

namespace {

struct FamilyName {
  TransformFamily family;
  std::string_view name;
};

constexpr FamilyName kFamilies[] = {
    {TransformFamily::identity, "identity"}, {TransformFamily::brightness, "brightness"},
    {TransformFamily::contrast, "contrast"}, {TransformFamily::rotation, "rotation"},
    {TransformFamily::scaling, "scaling"},   {TransformFamily::shearing, "shearing"},
    {TransformFamily::affine, "affine"},     {TransformFamily::elastic, "elastic"},
};

void check_range(const Range& r, const char* what) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
    throw ArgumentError(std::string("TransformSpec: invalid range for ") + what);
  }
}

double draw(const Range& r, std::mt19937_64& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

}  // namespace

std::string_view family_name(TransformFamily f) {
  for (const auto& fn : kFamilies) {
    if (fn.family == f) return fn.name;
  }
  return "unknown";
}

TransformFamily parse_family(std::string_view name) {
  for (const auto& fn : kFamilies) {
    if (fn.name == name) return fn.family;
  }
  throw ArgumentError("unknown transform family '" + std::string(name) + "'");
}

bool is_intensity_family(TransformFamily f) {
  return f == TransformFamily::brightness || f == TransformFamily::contrast;
}

Transform::Transform(TransformFamily family, std::optional<IntensityJitter> intensity, Geometry geometry)
    : family_(family), intensity_(intensity), geometry_(std::move(geometry)) {
  if (const auto* a = std::get_if<AffineTransform2D>(&geometry_)) {
    if (!(std::abs(a->determinant()) > 1e-6)) throw ArgumentError("Transform: singular affine matrix");
  }
}

Point2 Transform::project_to_reference(Point2 pt) const {
  if (const auto* a = std::get_if<AffineTransform2D>(&geometry_)) return a->apply(pt);
  if (const auto* e = std::get_if<ElasticField>(&geometry_)) return e->apply(pt);
  return pt;
}

void TransformSpec::validate() const {
  check_range(intensity_magnitude, "intensity_magnitude");
  check_range(rotation_deg, "rotation_deg");
  check_range(scale, "scale");
  check_range(shear, "shear");
  check_range(translation_frac, "translation_frac");
  check_range(elastic_sigma_frac, "elastic_sigma_frac");
  check_range(elastic_amplitude_px, "elastic_amplitude_px");
  if (intensity_magnitude.lo < -intensity_cap || intensity_magnitude.hi > intensity_cap) {
    throw ArgumentError("TransformSpec: intensity magnitude exceeds cap");
  }
  if (scale.lo <= 0.0) throw ArgumentError("TransformSpec: scale must be positive");
  if (elastic_sigma_frac.lo <= 0.0) throw ArgumentError("TransformSpec: elastic sigma must be positive");
  if (elastic_amplitude_px.lo < 0.0) throw ArgumentError("TransformSpec: elastic amplitude must be >= 0");
  if (elastic_blobs < 0) throw ArgumentError("TransformSpec: elastic_blobs must be >= 0");
}

Transform sample_transform(const TransformSpec& spec, int rows, int cols, std::mt19937_64& rng) {
  spec.validate();
  const Point2 center{(rows - 1) / 2.0, (cols - 1) / 2.0};
  switch (spec.family) {
    case TransformFamily::identity:
      return Transform::identity();
    case TransformFamily::brightness:
    case TransformFamily::contrast: {
      const IntensityMode mode =
          spec.family == TransformFamily::brightness ? IntensityMode::brightness : IntensityMode::contrast;
      return Transform(spec.family, IntensityJitter{mode, draw(spec.intensity_magnitude, rng)}, std::monostate{});
    }
    case TransformFamily::rotation:
      return Transform(spec.family, std::nullopt, make_affine(draw(spec.rotation_deg, rng), 1.0, 0.0, {}, center));
    case TransformFamily::scaling:
      return Transform(spec.family, std::nullopt, make_affine(0.0, draw(spec.scale, rng), 0.0, {}, center));
    case TransformFamily::shearing:
      return Transform(spec.family, std::nullopt, make_affine(0.0, 1.0, draw(spec.shear, rng), {}, center));
    case TransformFamily::affine: {
      const double rot = draw(spec.rotation_deg, rng);
      const double sc = draw(spec.scale, rng);
      const double sh = draw(spec.shear, rng);
      const double tr = draw(spec.translation_frac, rng) * rows;
      const double tc = draw(spec.translation_frac, rng) * cols;
      return Transform(spec.family, std::nullopt, make_affine(rot, sc, sh, {tr, tc}, center));
    }
    case TransformFamily::elastic: {
      const double size = std::min(rows, cols);
      std::vector<GaussianBlob> blobs;
      blobs.reserve(static_cast<std::size_t>(spec.elastic_blobs));
      for (int k = 0; k < spec.elastic_blobs; ++k) {
        GaussianBlob b;
        b.center = {draw({0.0, rows - 1.0}, rng), draw({0.0, cols - 1.0}, rng)};
        b.sigma = draw(spec.elastic_sigma_frac, rng) * size;
        const double amp = draw(spec.elastic_amplitude_px, rng);
        const double angle = draw({0.0, 2.0 * std::numbers::pi}, rng);
        b.amp_row = amp * std::sin(angle);
        b.amp_col = amp * std::cos(angle);
        blobs.push_back(b);
      }
      return Transform(spec.family, std::nullopt, ElasticField(rows, cols, std::move(blobs)));
    }
  }
  throw ArgumentError("sample_transform: unhandled family");
}

namespace {

Array2D<float> apply_intensity(const GrayImage& img, const IntensityJitter& j) {
  Array2D<float> out = img.pixels();
  if (j.mode == IntensityMode::brightness) {
    const double delta = j.magnitude * img.max_intensity();
    for (auto& v : out.values()) v = static_cast<float>(v + delta);
  } else {
    const double mean = img.mean_intensity();
    const double gain = 1.0 + j.magnitude;
    for (auto& v : out.values()) v = static_cast<float>(mean + (v - mean) * gain);
  }
  return out;
}

bool inside(const Point2& p, int rows, int cols) {
  return p.row >= 0.0 && p.col >= 0.0 && p.row <= rows - 1.0 && p.col <= cols - 1.0;
}

}  // namespace

GrayImage warp_image(const GrayImage& img, const Transform& t, float background) {
  Array2D<float> src = t.intensity() ? apply_intensity(img, *t.intensity()) : img.pixels();
  if (!t.is_geometric()) return GrayImage(std::move(src), img.spacing());

  if (const auto* e = std::get_if<ElasticField>(&t.geometry())) {
    if (e->rows() != img.rows() || e->cols() != img.cols()) {
      throw ArgumentError("warp_image: elastic field shape does not match image");
    }
  }
  Array2D<float> out(img.rows(), img.cols(), background);
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      const Point2 q = t.project_to_reference({static_cast<double>(r), static_cast<double>(c)});
      if (inside(q, img.rows(), img.cols())) out(r, c) = static_cast<float>(bilinear_sample(src, q.row, q.col));
    }
  }
  return GrayImage(std::move(out), img.spacing());
}

BinaryMask warp_mask(const BinaryMask& mask, const Transform& t) {
  if (!t.is_geometric()) return mask;
  BinaryMask out(mask.rows(), mask.cols());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      const Point2 q = t.project_to_reference({static_cast<double>(r), static_cast<double>(c)});
      const int rr = static_cast<int>(std::lround(q.row));
      const int cc = static_cast<int>(std::lround(q.col));
      if (mask.values().in_bounds(rr, cc)) out.set(r, c, mask.at(rr, cc));
    }
  }
  return out;
}

DisplacementStats displacement_stats(const Transform& t, const BinaryMask& mask, Spacing spacing) {
  std::vector<double> d;
  d.reserve(mask.count());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask.at(r, c)) continue;
      const Point2 q = t.project_to_reference({static_cast<double>(r), static_cast<double>(c)});
      d.push_back(std::hypot((q.row - r) * spacing.row_mm, (q.col - c) * spacing.col_mm));
    }
  }
  if (d.empty()) throw ArgumentError("displacement_stats: mask is empty");
  const Quartiles q = quartiles(d);
  return {q.median, q.q1, q.q3};
}

std::string transform_to_json(const Transform& t) {
  json j;
  j["family"] = std::string(family_name(t.family()));
  if (t.intensity()) {
    j["intensity"] = {{"mode", t.intensity()->mode == IntensityMode::brightness ? "brightness" : "contrast"},
                      {"magnitude", t.intensity()->magnitude}};
  }
  if (const auto* a = std::get_if<AffineTransform2D>(&t.geometry())) {
    j["affine"] = {{"matrix", {a->matrix(0, 0), a->matrix(0, 1), a->matrix(1, 0), a->matrix(1, 1)}},
                   {"translation", {a->translation(0), a->translation(1)}}};
  } else if (const auto* e = std::get_if<ElasticField>(&t.geometry())) {
    json blobs = json::array();
    for (const auto& b : e->blobs()) {
      blobs.push_back({{"center", {b.center.row, b.center.col}},
                       {"amplitude", {b.amp_row, b.amp_col}},
                       {"sigma", b.sigma}});
    }
    j["elastic"] = {{"shape", {e->rows(), e->cols()}}, {"blobs", blobs}};
  }
  return j.dump(2);
}

Transform transform_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    const TransformFamily family = parse_family(j.at("family").get<std::string>());
    std::optional<IntensityJitter> intensity;
    if (j.contains("intensity")) {
      const auto& ij = j.at("intensity");
      const std::string mode = ij.at("mode").get<std::string>();
      if (mode != "brightness" && mode != "contrast") throw FormatError("unknown intensity mode " + mode);
      intensity = IntensityJitter{mode == "brightness" ? IntensityMode::brightness : IntensityMode::contrast,
                                  ij.at("magnitude").get<double>()};
    }
    Transform::Geometry geometry;
    if (j.contains("affine")) {
      const auto& aj = j.at("affine");
      AffineTransform2D a;
      const auto& m = aj.at("matrix");
      a.matrix << m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>(), m.at(3).get<double>();
      a.translation << aj.at("translation").at(0).get<double>(), aj.at("translation").at(1).get<double>();
      geometry = a;
    } else if (j.contains("elastic")) {
      const auto& ej = j.at("elastic");
      std::vector<GaussianBlob> blobs;
      for (const auto& bj : ej.at("blobs")) {
        GaussianBlob b;
        b.center = {bj.at("center").at(0).get<double>(), bj.at("center").at(1).get<double>()};
        b.amp_row = bj.at("amplitude").at(0).get<double>();
        b.amp_col = bj.at("amplitude").at(1).get<double>();
        b.sigma = bj.at("sigma").get<double>();
        blobs.push_back(b);
      }
      geometry = ElasticField(ej.at("shape").at(0).get<int>(), ej.at("shape").at(1).get<int>(), std::move(blobs));
    }
    return Transform(family, intensity, std::move(geometry));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed transform JSON: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("invalid transform JSON: ") + e.what());
  }
}

}  // namespace landmatch
