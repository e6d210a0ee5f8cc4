#include "landmatch/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>

#include "json.hpp"

namespace landmatch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Sidecar {
  std::optional<Spacing> spacing;
  std::optional<IntensityRescale> rescale;
  std::optional<std::pair<int, int>> shape;
  std::string dtype;
};

Sidecar read_sidecar(const fs::path& image_path, bool required) {
  Sidecar out;
  const fs::path p = sidecar_path(image_path);
  if (!fs::exists(p)) {
    if (required) throw FormatError("raw array needs a sidecar: " + p.string() + " not found");
    return out;
  }
  std::ifstream in(p);
  if (!in) throw IoError("cannot open sidecar " + p.string());
  json j;
  try {
    in >> j;
    if (j.contains("spacing")) {
      const auto& s = j.at("spacing");
      out.spacing = Spacing{s.at(0).get<double>(), s.at(1).get<double>()};
    }
    if (j.contains("shape")) {
      const auto& s = j.at("shape");
      out.shape = std::make_pair(s.at(0).get<int>(), s.at(1).get<int>());
    }
    if (j.contains("rescale")) {
      const auto& r = j.at("rescale");
      out.rescale = IntensityRescale{r.at("slope").get<double>(), r.at("intercept").get<double>()};
    }
    out.dtype = j.value("dtype", std::string{});
  } catch (const json::exception& e) {
    throw FormatError("malformed sidecar " + p.string() + ": " + e.what());
  }
  return out;
}

void write_sidecar(const fs::path& image_path, const json& j) {
  const fs::path p = sidecar_path(image_path);
  std::ofstream out(p);
  if (!out) throw IoError("cannot write sidecar " + p.string());
  out << j.dump(2) << '\n';
}

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

bool has_png_signature(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

struct PngRaster {
  int rows = 0;
  int cols = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint16_t> samples;
};

// Returns an error message on failure; libpng unwinds through longjmp so no
// C++ object with a destructor may be created between setjmp and the end.
const char* read_png_c(std::FILE* fp, PngRaster* out, std::vector<png_byte>* buffer) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "png_create_read_struct failed";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "png_create_info_struct failed";
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "corrupt PNG data";
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  out->cols = static_cast<int>(png_get_image_width(png, info));
  out->rows = static_cast<int>(png_get_image_height(png, info));
  out->bit_depth = png_get_bit_depth(png, info);
  out->color_type = png_get_color_type(png, info);
  if (out->color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    return nullptr;
  }
  if (out->bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer->resize(stride * static_cast<std::size_t>(out->rows));
  for (int r = 0; r < out->rows; ++r) png_read_row(png, buffer->data() + stride * r, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return nullptr;
}

PngRaster read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path.string());
  PngRaster raster;
  std::vector<png_byte> buffer;
  if (const char* err = read_png_c(fp.get(), &raster, &buffer)) {
    throw IoError(path.string() + ": " + err);
  }
  if (raster.color_type != PNG_COLOR_TYPE_GRAY) {
    throw FormatError(path.string() + ": PNG is not single-channel grayscale");
  }
  const std::size_t n = static_cast<std::size_t>(raster.rows) * raster.cols;
  raster.samples.resize(n);
  if (raster.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      raster.samples[i] = static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) raster.samples[i] = buffer[i];
  }
  return raster;
}

const char* write_png_c(std::FILE* fp, int rows, int cols, int bit_depth, const png_byte* data) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "png_create_write_struct failed";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return "png_create_info_struct failed";
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return "PNG encoding failed";
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(cols) * (bit_depth / 8);
  for (int r = 0; r < rows; ++r) png_write_row(png, data + stride * r);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return nullptr;
}

void write_png(const fs::path& path, int rows, int cols, int bit_depth, const std::vector<png_byte>& data) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path.string());
  if (const char* err = write_png_c(fp.get(), rows, cols, bit_depth, data.data())) {
    throw IoError(path.string() + ": " + err);
  }
}

std::string next_pgm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

Array2D<float> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = next_pgm_token(in);
  if (magic != "P5" && magic != "P2") throw FormatError(path.string() + ": not a PGM file");
  int cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoi(next_pgm_token(in));
    rows = std::stoi(next_pgm_token(in));
    maxval = std::stoi(next_pgm_token(in));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": corrupt PGM header");
  }
  if (cols <= 0 || rows <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError(path.string() + ": corrupt PGM header");
  }
  Array2D<float> px(rows, cols);
  if (magic == "P2") {
    for (auto& v : px.values()) {
      int x = 0;
      if (!(in >> x)) throw IoError(path.string() + ": truncated PGM data");
      v = static_cast<float>(x);
    }
    return px;
  }
  in.get();  // single whitespace after maxval
  const int bytes = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError(path.string() + ": truncated PGM data");
  auto vals = px.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    vals[i] = bytes == 1 ? buf[i] : static_cast<float>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return px;
}

Array2D<float> read_raw(const fs::path& path, const Sidecar& sc) {
  if (!sc.shape) throw FormatError(path.string() + ": sidecar lacks shape");
  if (!sc.dtype.empty() && sc.dtype != "float32") {
    throw FormatError(path.string() + ": unsupported raw dtype " + sc.dtype);
  }
  const auto [rows, cols] = *sc.shape;
  if (rows <= 0 || cols <= 0) throw FormatError(path.string() + ": invalid shape in sidecar");
  Array2D<float> px(rows, cols);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf(px.size() * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError(path.string() + ": truncated raw data");
  auto vals = px.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(buf[4 * i]) | (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    vals[i] = f;
  }
  return px;
}

}  // namespace

fs::path sidecar_path(const fs::path& image_path) {
  fs::path p = image_path;
  p.replace_extension(".json");
  return p;
}

GrayImage load_grayscale(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path.string());
  const std::string ext = lower_extension(path);
  Array2D<float> pixels;
  Sidecar sc;
  if (ext == ".raw" || ext == ".f32" || ext == ".bin") {
    sc = read_sidecar(path, true);
    pixels = read_raw(path, sc);
  } else if (ext == ".png" || has_png_signature(path)) {
    sc = read_sidecar(path, false);
    const PngRaster raster = read_png(path);
    pixels = Array2D<float>(raster.rows, raster.cols);
    auto vals = pixels.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<float>(raster.samples[i]);
  } else if (ext == ".pgm") {
    sc = read_sidecar(path, false);
    pixels = read_pgm(path);
  } else {
    throw FormatError(path.string() + ": unsupported image format");
  }
  if (sc.rescale) {
    for (auto& v : pixels.values()) {
      v = static_cast<float>(v * sc.rescale->slope + sc.rescale->intercept);
    }
  }
  return GrayImage(std::move(pixels), sc.spacing.value_or(Spacing{}));
}

void save_png16(const fs::path& path, const GrayImage& img) {
  const double lo = img.min_intensity();
  const double hi = img.max_intensity();
  const double slope = hi > lo ? (hi - lo) / 65535.0 : 1.0;
  std::vector<png_byte> data(img.pixels().size() * 2);
  const auto vals = img.pixels().values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double q = std::round((vals[i] - lo) / slope);
    const auto s = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
    data[2 * i] = static_cast<png_byte>(s >> 8);
    data[2 * i + 1] = static_cast<png_byte>(s & 0xff);
  }
  write_png(path, img.rows(), img.cols(), 16, data);
  write_sidecar(path, json{{"shape", {img.rows(), img.cols()}},
                           {"spacing", {img.spacing().row_mm, img.spacing().col_mm}},
                           {"dtype", "uint16"},
                           {"rescale", {{"slope", slope}, {"intercept", lo}}}});
}

void save_raw(const fs::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const float f : img.pixels().values()) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
                                static_cast<unsigned char>((bits >> 16) & 0xff),
                                static_cast<unsigned char>((bits >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw IoError("write failed: " + path.string());
  write_sidecar(path, json{{"shape", {img.rows(), img.cols()}},
                           {"spacing", {img.spacing().row_mm, img.spacing().col_mm}},
                           {"dtype", "float32"}});
}

void save_mask_png(const fs::path& path, const BinaryMask& mask) {
  std::vector<png_byte> data(static_cast<std::size_t>(mask.rows()) * mask.cols());
  const auto vals = mask.values().values();
  for (std::size_t i = 0; i < vals.size(); ++i) data[i] = vals[i] ? 255 : 0;
  write_png(path, mask.rows(), mask.cols(), 8, data);
}

BinaryMask load_mask_png(const fs::path& path) {
  const PngRaster raster = read_png(path);
  Array2D<std::uint8_t> values(raster.rows, raster.cols);
  auto vals = values.values();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = raster.samples[i] != 0 ? 1 : 0;
  return BinaryMask(std::move(values));
}

GrayImage resample_to_isotropic(const GrayImage& img, double target_mm) {
  if (!(target_mm > 0.0) || !std::isfinite(target_mm)) {
    throw ArgumentError("resample_to_isotropic: target_mm must be positive");
  }
  const Spacing& sp = img.spacing();
  if (sp.row_mm == target_mm && sp.col_mm == target_mm) return img;

  const int rows = static_cast<int>(std::lround(img.rows() * sp.row_mm / target_mm));
  const int cols = static_cast<int>(std::lround(img.cols() * sp.col_mm / target_mm));
  Array2D<float> out(rows, cols);
  const double row_step = target_mm / sp.row_mm;
  const double col_step = target_mm / sp.col_mm;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out(r, c) = static_cast<float>(bilinear_sample(img.pixels(), r * row_step, c * col_step));
    }
  }
  return GrayImage(std::move(out), Spacing{target_mm, target_mm});
}

BinaryMask compute_valid_mask(const GrayImage& img, float intensity_thresh, int min_component_px) {
  if (min_component_px < 0) throw ArgumentError("compute_valid_mask: min_component_px must be >= 0");
  const int rows = img.rows();
  const int cols = img.cols();

  // Two-pass labelling with union-find over 8-connectivity.
  std::vector<int> parent;
  auto find = [&parent](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  Array2D<int> label(rows, cols, -1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!(img(r, c) >= intensity_thresh)) continue;
      int current = -1;
      // Previously visited neighbours: W, NW, N, NE.
      const int nbr[4][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
      for (const auto& d : nbr) {
        const int rr = r + d[0];
        const int cc = c + d[1];
        if (!label.in_bounds(rr, cc) || label(rr, cc) < 0) continue;
        if (current < 0) {
          current = label(rr, cc);
        } else {
          unite(current, label(rr, cc));
        }
      }
      if (current < 0) {
        current = static_cast<int>(parent.size());
        parent.push_back(current);
      }
      label(r, c) = current;
    }
  }

  std::vector<int> area(parent.size(), 0);
  for (auto& l : label.values()) {
    if (l >= 0) {
      l = find(l);
      ++area[l];
    }
  }
  BinaryMask mask(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int l = label(r, c);
      if (l >= 0 && area[l] >= min_component_px) mask.set(r, c, true);
    }
  }
  return mask;
}

BinaryMask default_valid_mask(const GrayImage& img, const MaskConfig& cfg) {
  const float thresh = static_cast<float>(cfg.intensity_thresh_frac * img.max_intensity());
  return compute_valid_mask(img, thresh, cfg.min_component_px);
}

}  // namespace landmatch
