#include "landmatch/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>

#include "json.hpp"
#include "landmatch/error.hpp"

namespace landmatch {

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::descriptor_dim() const {
  int dim = 0;
  for (const int b : descriptor_blocks) {
    if (b < 0 || b >= levels()) throw ArgumentError("ModelConfig: descriptor block index out of range");
    dim += encoder_filters[static_cast<std::size_t>(b)];
  }
  return dim;
}

void ModelConfig::validate() const {
  if (encoder_filters.size() < 2) throw ArgumentError("ModelConfig: need at least two encoder levels");
  if (encoder_filters.front() < 1) throw ArgumentError("ModelConfig: filter counts must be positive");
  for (std::size_t i = 1; i < encoder_filters.size(); ++i) {
    if (encoder_filters[i] != 2 * encoder_filters[i - 1]) {
      throw ArgumentError("ModelConfig: encoder filters must double at every level");
    }
  }
  if (descriptor_blocks.empty()) throw ArgumentError("ModelConfig: no descriptor blocks");
  for (std::size_t i = 1; i < descriptor_blocks.size(); ++i) {
    if (descriptor_blocks[i] <= descriptor_blocks[i - 1]) {
      throw ArgumentError("ModelConfig: descriptor blocks must be increasing");
    }
  }
  (void)descriptor_dim();
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["encoder_filters"] = encoder_filters;
  j["descriptor_blocks"] = descriptor_blocks;
  j["head_input"] = "product_and_squared_difference";
  return j.dump();
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    ModelConfig c;
    c.encoder_filters = j.at("encoder_filters").get<std::vector<int>>();
    c.descriptor_blocks = j.at("descriptor_blocks").get<std::vector<int>>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model config: ") + e.what());
  }
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char ch : to_json()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

struct ConvSpec {
  std::size_t weight = 0;  // slot indices
  std::size_t bias = 0;
  int in = 0;
  int out = 0;
  int k = 3;
};

struct Layout {
  std::vector<ConvSpec> enc1, enc2;             // per level (0..L-1)
  std::vector<ConvSpec> dec_up, dec1, dec2;     // per level (0..L-2)
  ConvSpec out;
  std::size_t head_weight = 0;
  std::size_t head_bias = 0;
};

struct LayoutBuilder {
  std::vector<ParamSlot> slots;
  std::size_t total = 0;

  std::size_t add(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (const int s : shape) n *= static_cast<std::size_t>(s);
    slots.push_back({std::move(name), std::move(shape), total, n});
    total += n;
    return slots.size() - 1;
  }
  ConvSpec conv(const std::string& name, int in, int out, int k) {
    ConvSpec c;
    c.in = in;
    c.out = out;
    c.k = k;
    c.weight = add(name + ".weight", {out, in, k, k});
    c.bias = add(name + ".bias", {out});
    return c;
  }
};

Layout build_layout(const ModelConfig& cfg, std::vector<ParamSlot>* slots, std::size_t* total) {
  LayoutBuilder b;
  Layout l;
  const int levels = cfg.levels();
  const auto& f = cfg.encoder_filters;
  l.enc1.resize(static_cast<std::size_t>(levels));
  l.enc2.resize(static_cast<std::size_t>(levels));
  l.dec_up.resize(static_cast<std::size_t>(levels - 1));
  l.dec1.resize(static_cast<std::size_t>(levels - 1));
  l.dec2.resize(static_cast<std::size_t>(levels - 1));
  for (int i = 0; i < levels; ++i) {
    const int in = i == 0 ? 1 : f[i - 1];
    const std::string p = "enc" + std::to_string(i);
    l.enc1[i] = b.conv(p + ".conv1", in, f[i], 3);
    l.enc2[i] = b.conv(p + ".conv2", f[i], f[i], 3);
  }
  for (int i = levels - 2; i >= 0; --i) {
    const std::string p = "dec" + std::to_string(i);
    l.dec_up[i] = b.conv(p + ".up", f[i + 1], f[i], 3);
    l.dec1[i] = b.conv(p + ".conv1", 2 * f[i], f[i], 3);
    l.dec2[i] = b.conv(p + ".conv2", f[i], f[i], 3);
  }
  l.out = b.conv("out", f[0], 1, 1);
  l.head_weight = b.add("head.weight", {cfg.head_input_width()});
  l.head_bias = b.add("head.bias", {1});
  if (slots) *slots = std::move(b.slots);
  if (total) *total = b.total;
  return l;
}

const Layout& layout_for(const ModelConfig& cfg) {
  // Layouts are immutable and cheap; cache the last one per thread.
  thread_local ModelConfig cached_cfg;
  thread_local Layout cached;
  thread_local bool valid = false;
  if (!valid || !(cached_cfg == cfg)) {
    cached = build_layout(cfg, nullptr, nullptr);
    cached_cfg = cfg;
    valid = true;
  }
  return cached;
}

// ---------------------------------------------------------------------------
// Layer kernels

template <typename T>
using MapM = Eigen::Map<MatrixR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CMapM = Eigen::Map<const MatrixR<T>, 0, Eigen::OuterStride<>>;

constexpr std::size_t kIm2colBudget = std::size_t{1} << 22;  // elements per band

int band_rows(int in_ch, int k, int rows, int cols) {
  const std::size_t per_row = static_cast<std::size_t>(in_ch) * k * k * cols;
  return std::clamp(static_cast<int>(kIm2colBudget / std::max<std::size_t>(per_row, 1)), 1, rows);
}

template <typename T>
void im2col(const Tensor3<T>& in, int k, int y0, int y1, MatrixR<T>& cols) {
  const int pad = k / 2;
  const int w = in.cols;
  const int band = y1 - y0;
  cols.resize(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(band) * w);
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          T* row = dst + static_cast<std::size_t>(y - y0) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= in.rows) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * w;
          std::fill(row, row + x_lo, T(0));
          for (int x = x_lo; x < x_hi; ++x) row[x] = srow[x + dx];
          std::fill(row + std::max(x_hi, x_lo), row + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const MatrixR<T>& cols, int k, int y0, int y1, Tensor3<T>& din) {
  const int pad = k / 2;
  const int w = din.cols;
  for (int c = 0; c < din.channels; ++c) {
    T* dst = din.channel(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((c * k + ky) * k + kx).data();
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(w, w - dx);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= din.rows) continue;
          const T* row = src + static_cast<std::size_t>(y - y0) * w;
          T* drow = dst + static_cast<std::size_t>(sy) * w;
          for (int x = x_lo; x < x_hi; ++x) drow[x + dx] += row[x];
        }
      }
    }
  }
}

template <typename T>
Tensor3<T> conv_forward(const ModelParams<T>& p, const ConvSpec& spec, const Tensor3<T>& in) {
  Tensor3<T> out(spec.out, in.rows, in.cols);
  const auto wv = p.slot(spec.weight);
  const auto bv = p.slot(spec.bias);
  const Eigen::Map<const MatrixR<T>> W(wv.data(), spec.out, static_cast<Eigen::Index>(spec.in) * spec.k * spec.k);
  const auto plane = static_cast<Eigen::Index>(in.plane());
  if (spec.k == 1) {
    const CMapM<T> X(in.data.data(), spec.in, plane, Eigen::OuterStride<>(plane));
    MapM<T> Y(out.data.data(), spec.out, plane, Eigen::OuterStride<>(plane));
    Y.noalias() = W * X;
  } else {
    MatrixR<T> cols;
    const int step = band_rows(spec.in, spec.k, in.rows, in.cols);
    for (int y0 = 0; y0 < in.rows; y0 += step) {
      const int y1 = std::min(in.rows, y0 + step);
      im2col(in, spec.k, y0, y1, cols);
      MapM<T> Y(out.data.data() + static_cast<std::size_t>(y0) * in.cols, spec.out,
                static_cast<Eigen::Index>(y1 - y0) * in.cols, Eigen::OuterStride<>(plane));
      Y.noalias() = W * cols;
    }
  }
  for (int c = 0; c < spec.out; ++c) {
    T* ch = out.channel(c);
    const T b = bv[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < out.plane(); ++i) ch[i] += b;
  }
  return out;
}

// Accumulates weight/bias gradients; returns the input gradient when asked.
template <typename T>
void conv_backward(const ModelParams<T>& p, const ConvSpec& spec, const Tensor3<T>& in, const Tensor3<T>& dout,
                   ModelParams<T>& grad, Tensor3<T>* din) {
  const auto wv = p.slot(spec.weight);
  const Eigen::Index kk = static_cast<Eigen::Index>(spec.in) * spec.k * spec.k;
  const Eigen::Map<const MatrixR<T>> W(wv.data(), spec.out, kk);
  auto gw = grad.slot(spec.weight);
  auto gb = grad.slot(spec.bias);
  Eigen::Map<MatrixR<T>> dW(gw.data(), spec.out, kk);
  const auto plane = static_cast<Eigen::Index>(in.plane());

  for (int c = 0; c < spec.out; ++c) {
    const T* ch = dout.channel(c);
    T s = T(0);
    for (std::size_t i = 0; i < dout.plane(); ++i) s += ch[i];
    gb[static_cast<std::size_t>(c)] += s;
  }
  if (din) *din = Tensor3<T>(spec.in, in.rows, in.cols);

  if (spec.k == 1) {
    const CMapM<T> X(in.data.data(), spec.in, plane, Eigen::OuterStride<>(plane));
    const CMapM<T> dY(dout.data.data(), spec.out, plane, Eigen::OuterStride<>(plane));
    dW.noalias() += dY * X.transpose();
    if (din) {
      MapM<T> dX(din->data.data(), spec.in, plane, Eigen::OuterStride<>(plane));
      dX.noalias() = W.transpose() * dY;
    }
    return;
  }
  MatrixR<T> cols;
  MatrixR<T> dcols;
  const int step = band_rows(spec.in, spec.k, in.rows, in.cols);
  for (int y0 = 0; y0 < in.rows; y0 += step) {
    const int y1 = std::min(in.rows, y0 + step);
    im2col(in, spec.k, y0, y1, cols);
    const CMapM<T> dY(dout.data.data() + static_cast<std::size_t>(y0) * in.cols, spec.out,
                      static_cast<Eigen::Index>(y1 - y0) * in.cols, Eigen::OuterStride<>(plane));
    dW.noalias() += dY * cols.transpose();
    if (din) {
      dcols.noalias() = W.transpose() * dY;
      col2im_add(dcols, spec.k, y0, y1, *din);
    }
  }
}

template <typename T>
void relu_inplace(Tensor3<T>& t) {
  for (auto& v : t.data) v = std::max(v, T(0));
}

template <typename T>
Tensor3<T> relu(const Tensor3<T>& t) {
  Tensor3<T> out = t;
  relu_inplace(out);
  return out;
}

// Zeroes gradient entries where the forward activation was clipped.
template <typename T>
void relu_backward_inplace(const Tensor3<T>& activated, Tensor3<T>& grad) {
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (!(activated.data[i] > T(0))) grad.data[i] = T(0);
  }
}

template <typename T>
Tensor3<T> maxpool2(const Tensor3<T>& in, std::vector<std::uint8_t>& argmax) {
  Tensor3<T> out(in.channels, in.rows / 2, in.cols / 2);
  argmax.assign(out.data.size(), 0);
  std::size_t idx = 0;
  for (int c = 0; c < in.channels; ++c) {
    for (int y = 0; y < out.rows; ++y) {
      for (int x = 0; x < out.cols; ++x, ++idx) {
        const T v[4] = {in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1), in.at(c, 2 * y + 1, 2 * x),
                        in.at(c, 2 * y + 1, 2 * x + 1)};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k) {
          if (v[k] > v[best]) best = k;
        }
        argmax[idx] = best;
        out.data[idx] = v[best];
      }
    }
  }
  return out;
}

template <typename T>
void maxpool2_backward_add(const Tensor3<T>& dout, const std::vector<std::uint8_t>& argmax, Tensor3<T>& din) {
  std::size_t idx = 0;
  for (int c = 0; c < dout.channels; ++c) {
    for (int y = 0; y < dout.rows; ++y) {
      for (int x = 0; x < dout.cols; ++x, ++idx) {
        const int k = argmax[idx];
        din.at(c, 2 * y + k / 2, 2 * x + k % 2) += dout.data[idx];
      }
    }
  }
}

struct Tap {
  int i0, i1;
  double w0, w1;
};

// Half-pixel bilinear taps for exact 2x upsampling of a length-n axis.
std::vector<Tap> upsample_taps(int n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (int o = 0; o < 2 * n; ++o) {
    const double src = std::max(0.0, (o + 0.5) / 2.0 - 0.5);
    const int i0 = std::min(static_cast<int>(src), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    const double f = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - f, f};
  }
  return taps;
}

template <typename T>
Tensor3<T> upsample2(const Tensor3<T>& in) {
  const auto tr = upsample_taps(in.rows);
  const auto tc = upsample_taps(in.cols);
  Tensor3<T> out(in.channels, 2 * in.rows, 2 * in.cols);
  std::vector<T> tmp(static_cast<std::size_t>(2 * in.rows) * in.cols);
  for (int c = 0; c < in.channels; ++c) {
    const T* src = in.channel(c);
    for (int y = 0; y < out.rows; ++y) {
      const Tap& t = tr[static_cast<std::size_t>(y)];
      for (int x = 0; x < in.cols; ++x) {
        tmp[static_cast<std::size_t>(y) * in.cols + x] =
            T(t.w0) * src[t.i0 * in.cols + x] + T(t.w1) * src[t.i1 * in.cols + x];
      }
    }
    T* dst = out.channel(c);
    for (int y = 0; y < out.rows; ++y) {
      const T* row = tmp.data() + static_cast<std::size_t>(y) * in.cols;
      for (int x = 0; x < out.cols; ++x) {
        const Tap& t = tc[static_cast<std::size_t>(x)];
        dst[static_cast<std::size_t>(y) * out.cols + x] = T(t.w0) * row[t.i0] + T(t.w1) * row[t.i1];
      }
    }
  }
  return out;
}

template <typename T>
Tensor3<T> upsample2_backward(const Tensor3<T>& dout, int in_rows, int in_cols) {
  const auto tr = upsample_taps(in_rows);
  const auto tc = upsample_taps(in_cols);
  Tensor3<T> din(dout.channels, in_rows, in_cols);
  std::vector<T> tmp(static_cast<std::size_t>(dout.rows) * in_cols);
  for (int c = 0; c < dout.channels; ++c) {
    std::fill(tmp.begin(), tmp.end(), T(0));
    const T* src = dout.channel(c);
    for (int y = 0; y < dout.rows; ++y) {
      T* row = tmp.data() + static_cast<std::size_t>(y) * in_cols;
      for (int x = 0; x < dout.cols; ++x) {
        const Tap& t = tc[static_cast<std::size_t>(x)];
        const T g = src[static_cast<std::size_t>(y) * dout.cols + x];
        row[t.i0] += T(t.w0) * g;
        row[t.i1] += T(t.w1) * g;
      }
    }
    T* dst = din.channel(c);
    for (int y = 0; y < dout.rows; ++y) {
      const Tap& t = tr[static_cast<std::size_t>(y)];
      for (int x = 0; x < in_cols; ++x) {
        const T g = tmp[static_cast<std::size_t>(y) * in_cols + x];
        dst[t.i0 * in_cols + x] += T(t.w0) * g;
        dst[t.i1 * in_cols + x] += T(t.w1) * g;
      }
    }
  }
  return din;
}

template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
  Tensor3<T> out(a.channels + b.channels, a.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

template <typename T>
Tensor3<T> crop(const Tensor3<T>& t, int rows, int cols) {
  Tensor3<T> out(t.channels, rows, cols);
  for (int c = 0; c < t.channels; ++c) {
    for (int y = 0; y < rows; ++y) {
      std::copy_n(t.channel(c) + static_cast<std::size_t>(y) * t.cols, cols,
                  out.channel(c) + static_cast<std::size_t>(y) * cols);
    }
  }
  return out;
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

// ---------------------------------------------------------------------------
// ModelParams

template <typename T>
ModelParams<T>::ModelParams(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t total = 0;
  build_layout(config_, &slots_, &total);
  values_.assign(total, T(0));
}

template <typename T>
std::size_t ModelParams<T>::slot_index(std::string_view name) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].name == name) return i;
  }
  throw ArgumentError("ModelParams: no parameter named '" + std::string(name) + "'");
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams out;
  out.config_ = config_;
  out.slots_ = slots_;
  out.values_.assign(values_.size(), T(0));
  return out;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> params(config);
  std::mt19937_64 rng(seed);
  const Layout& l = layout_for(config);
  auto fill_conv = [&](const ConvSpec& c, double gain) {
    const double fan_in = static_cast<double>(c.in) * c.k * c.k;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    for (auto& w : params.slot(c.weight)) w = static_cast<T>(dist(rng));
  };
  for (const auto& c : l.enc1) fill_conv(c, 2.0);
  for (const auto& c : l.enc2) fill_conv(c, 2.0);
  for (int i = static_cast<int>(l.dec_up.size()) - 1; i >= 0; --i) {
    fill_conv(l.dec_up[i], 2.0);
    fill_conv(l.dec1[i], 2.0);
    fill_conv(l.dec2[i], 2.0);
  }
  fill_conv(l.out, 1.0);
  std::normal_distribution<double> head(0.0, std::sqrt(1.0 / config.head_input_width()));
  for (auto& w : params.slot(l.head_weight)) w = static_cast<T>(head(rng));
  return params;
}

// ---------------------------------------------------------------------------
// Branch

template <typename T>
struct BranchTape {
  int rows = 0;  // unpadded input shape
  int cols = 0;
  Tensor3<T> input;  // padded
  std::vector<Tensor3<T>> enc_in, enc_a1, enc_e;
  std::vector<std::vector<std::uint8_t>> pool_argmax;
  std::vector<Tensor3<T>> dec_u, dec_v, dec_cat, dec_a1, dec_y;
  Tensor3<T> prob;  // padded
};

template <typename T>
Array2D<T> normalize_unit_range(const GrayImage& img) {
  Array2D<T> out(img.rows(), img.cols());
  const auto src = img.pixels().values();
  for (const float v : src) {
    if (!std::isfinite(v)) throw ArgumentError("forward_branch: non-finite input pixel");
  }
  const double lo = img.min_intensity();
  const double hi = img.max_intensity();
  const double scale = hi > lo ? 1.0 / (hi - lo) : 0.0;
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>((src[i] - lo) * scale);
  return out;
}

template <typename T>
BranchOutput<T> forward_branch(const ModelParams<T>& params, const Array2D<T>& input, bool record_tape) {
  const ModelConfig& cfg = params.config();
  const Layout& l = layout_for(cfg);
  const int levels = cfg.levels();
  const int mult = cfg.size_multiple();
  const int prow = ceil_div(input.rows(), mult) * mult;
  const int pcol = ceil_div(input.cols(), mult) * mult;

  for (const T v : input.values()) {
    if (!std::isfinite(static_cast<double>(v))) throw ArgumentError("forward_branch: non-finite input");
  }

  auto tape = std::make_shared<BranchTape<T>>();
  tape->rows = input.rows();
  tape->cols = input.cols();
  tape->input = Tensor3<T>(1, prow, pcol);
  for (int r = 0; r < input.rows(); ++r) {
    std::copy_n(input.data() + static_cast<std::size_t>(r) * input.cols(), input.cols(),
                tape->input.data.data() + static_cast<std::size_t>(r) * pcol);
  }

  BranchOutput<T> out;
  std::vector<Tensor3<T>> pre_activation(static_cast<std::size_t>(levels));
  tape->enc_in.resize(static_cast<std::size_t>(levels));
  tape->enc_a1.resize(static_cast<std::size_t>(levels));
  tape->enc_e.resize(static_cast<std::size_t>(levels));
  tape->pool_argmax.resize(static_cast<std::size_t>(levels));

  Tensor3<T> x = tape->input;
  for (int i = 0; i < levels; ++i) {
    Tensor3<T> a1 = relu(conv_forward(params, l.enc1[i], x));
    Tensor3<T> z2 = conv_forward(params, l.enc2[i], a1);
    Tensor3<T> e = relu(z2);
    const bool is_descriptor =
        std::find(cfg.descriptor_blocks.begin(), cfg.descriptor_blocks.end(), i) != cfg.descriptor_blocks.end();
    if (is_descriptor) pre_activation[i] = std::move(z2);
    Tensor3<T> next;
    if (i + 1 < levels) next = maxpool2(e, tape->pool_argmax[i]);
    if (record_tape) {
      tape->enc_in[i] = std::move(x);
      tape->enc_a1[i] = std::move(a1);
    }
    tape->enc_e[i] = std::move(e);  // needed as skip input either way
    x = std::move(next);
  }

  tape->dec_u.resize(static_cast<std::size_t>(levels - 1));
  tape->dec_v.resize(static_cast<std::size_t>(levels - 1));
  tape->dec_cat.resize(static_cast<std::size_t>(levels - 1));
  tape->dec_a1.resize(static_cast<std::size_t>(levels - 1));
  tape->dec_y.resize(static_cast<std::size_t>(levels - 1));
  Tensor3<T> y = tape->enc_e[levels - 1];
  for (int i = levels - 2; i >= 0; --i) {
    Tensor3<T> u = upsample2(y);
    Tensor3<T> v = relu(conv_forward(params, l.dec_up[i], u));
    Tensor3<T> cat = concat_channels(v, tape->enc_e[i]);
    Tensor3<T> a1 = relu(conv_forward(params, l.dec1[i], cat));
    y = relu(conv_forward(params, l.dec2[i], a1));
    if (record_tape) {
      tape->dec_u[i] = std::move(u);
      tape->dec_v[i] = std::move(v);
      tape->dec_cat[i] = std::move(cat);
      tape->dec_a1[i] = std::move(a1);
      tape->dec_y[i] = y;
    }
  }
  Tensor3<T> logit = conv_forward(params, l.out, y);
  for (auto& v : logit.data) v = sigmoid(v);

  out.prob = Array2D<T>(input.rows(), input.cols());
  for (int r = 0; r < input.rows(); ++r) {
    std::copy_n(logit.data.data() + static_cast<std::size_t>(r) * pcol, input.cols(),
                out.prob.data() + static_cast<std::size_t>(r) * input.cols());
  }
  for (const int b : cfg.descriptor_blocks) {
    const int s = cfg.stride_of_block(b);
    out.pyramid.push_back(crop(pre_activation[b], ceil_div(input.rows(), s), ceil_div(input.cols(), s)));
    out.strides.push_back(s);
  }
  if (record_tape) {
    tape->prob = std::move(logit);
    out.tape = std::move(tape);
  }
  return out;
}

template <typename T>
BranchOutput<T> forward_branch(const ModelParams<T>& params, const GrayImage& img, bool record_tape) {
  return forward_branch(params, normalize_unit_range<T>(img), record_tape);
}

template <typename T>
void backward_branch(const ModelParams<T>& params, const BranchOutput<T>& out, const Array2D<T>& d_prob,
                     const std::vector<Tensor3<T>>& d_pyramid, ModelParams<T>& grad) {
  if (!out.tape) throw ArgumentError("backward_branch: forward pass was not recorded");
  const BranchTape<T>& tape = *out.tape;
  const ModelConfig& cfg = params.config();
  const Layout& l = layout_for(cfg);
  const int levels = cfg.levels();
  if (d_prob.rows() != tape.rows || d_prob.cols() != tape.cols) {
    throw ArgumentError("backward_branch: probability gradient has wrong shape");
  }

  // Sigmoid + 1x1 output convolution.
  Tensor3<T> d_logit(1, tape.prob.rows, tape.prob.cols);
  for (int r = 0; r < tape.rows; ++r) {
    for (int c = 0; c < tape.cols; ++c) {
      const T p = tape.prob.at(0, r, c);
      d_logit.at(0, r, c) = d_prob(r, c) * p * (T(1) - p);
    }
  }
  const Tensor3<T>& y0 = levels > 1 ? tape.dec_y[0] : tape.enc_e[0];
  Tensor3<T> dy;
  conv_backward(params, l.out, y0, d_logit, grad, &dy);

  std::vector<Tensor3<T>> d_enc(static_cast<std::size_t>(levels));
  for (int i = 0; i <= levels - 2; ++i) {
    relu_backward_inplace(tape.dec_y[i], dy);
    Tensor3<T> d_a1;
    conv_backward(params, l.dec2[i], tape.dec_a1[i], dy, grad, &d_a1);
    relu_backward_inplace(tape.dec_a1[i], d_a1);
    Tensor3<T> d_cat;
    conv_backward(params, l.dec1[i], tape.dec_cat[i], d_a1, grad, &d_cat);
    const int fv = tape.dec_v[i].channels;
    Tensor3<T> d_v(fv, d_cat.rows, d_cat.cols);
    std::copy_n(d_cat.data.begin(), d_v.data.size(), d_v.data.begin());
    Tensor3<T> d_skip(d_cat.channels - fv, d_cat.rows, d_cat.cols);
    std::copy(d_cat.data.begin() + static_cast<std::ptrdiff_t>(d_v.data.size()), d_cat.data.end(),
              d_skip.data.begin());
    d_enc[i] = std::move(d_skip);
    relu_backward_inplace(tape.dec_v[i], d_v);
    Tensor3<T> d_u;
    conv_backward(params, l.dec_up[i], tape.dec_u[i], d_v, grad, &d_u);
    const Tensor3<T>& below = i + 1 <= levels - 2 ? tape.dec_y[i + 1] : tape.enc_e[levels - 1];
    dy = upsample2_backward(d_u, below.rows, below.cols);
  }
  if (levels >= 2) {
    d_enc[levels - 1] = std::move(dy);
  } else {
    d_enc[0] = std::move(dy);
  }

  for (int i = levels - 1; i >= 0; --i) {
    Tensor3<T> dz = std::move(d_enc[i]);
    relu_backward_inplace(tape.enc_e[i], dz);
    const auto it = std::find(cfg.descriptor_blocks.begin(), cfg.descriptor_blocks.end(), i);
    if (it != cfg.descriptor_blocks.end() && !d_pyramid.empty()) {
      const auto& dp = d_pyramid[static_cast<std::size_t>(it - cfg.descriptor_blocks.begin())];
      for (int c = 0; c < dp.channels; ++c) {
        for (int r = 0; r < dp.rows; ++r) {
          for (int x = 0; x < dp.cols; ++x) dz.at(c, r, x) += dp.at(c, r, x);
        }
      }
    }
    Tensor3<T> d_a1;
    conv_backward(params, l.enc2[i], tape.enc_a1[i], dz, grad, &d_a1);
    relu_backward_inplace(tape.enc_a1[i], d_a1);
    if (i == 0) {
      conv_backward(params, l.enc1[i], tape.enc_in[i], d_a1, grad, static_cast<Tensor3<T>*>(nullptr));
    } else {
      Tensor3<T> d_in;
      conv_backward(params, l.enc1[i], tape.enc_in[i], d_a1, grad, &d_in);
      maxpool2_backward_add(d_in, tape.pool_argmax[i - 1], d_enc[i - 1]);
    }
  }
}

// ---------------------------------------------------------------------------
// Descriptors

template <typename T>
DescriptorSet<T> sample_descriptors(const std::vector<Tensor3<T>>& pyramid, const std::vector<int>& strides,
                                    std::span<const Point2> points, int image_rows, int image_cols) {
  if (pyramid.size() != strides.size()) throw ArgumentError("sample_descriptors: pyramid/stride mismatch");
  int dim = 0;
  for (const auto& level : pyramid) dim += level.channels;
  DescriptorSet<T> set;
  const auto k = static_cast<Eigen::Index>(points.size());
  set.raw.resize(k, dim);
  set.values.resize(k, dim);
  set.norms.resize(points.size());
  set.points.assign(points.begin(), points.end());
  for (Eigen::Index i = 0; i < k; ++i) {
    const Point2 p = points[static_cast<std::size_t>(i)];
    if (!(p.row >= 0.0 && p.col >= 0.0 && p.row <= image_rows - 1.0 && p.col <= image_cols - 1.0)) {
      throw ArgumentError("sample_descriptors: point outside image bounds");
    }
    int offset = 0;
    for (std::size_t lv = 0; lv < pyramid.size(); ++lv) {
      const Tensor3<T>& m = pyramid[lv];
      const double r = std::min(p.row / strides[lv], m.rows - 1.0);
      const double c = std::min(p.col / strides[lv], m.cols - 1.0);
      const int r0 = static_cast<int>(r);
      const int c0 = static_cast<int>(c);
      const int r1 = std::min(r0 + 1, m.rows - 1);
      const int c1 = std::min(c0 + 1, m.cols - 1);
      const T fr = static_cast<T>(r - r0);
      const T fc = static_cast<T>(c - c0);
      for (int ch = 0; ch < m.channels; ++ch) {
        set.raw(i, offset + ch) = (T(1) - fr) * ((T(1) - fc) * m.at(ch, r0, c0) + fc * m.at(ch, r0, c1)) +
                                  fr * ((T(1) - fc) * m.at(ch, r1, c0) + fc * m.at(ch, r1, c1));
      }
      offset += m.channels;
    }
    const T n = set.raw.row(i).norm();
    set.norms[static_cast<std::size_t>(i)] = n;
    if (n > T(1e-12)) {
      set.values.row(i) = set.raw.row(i) / n;
    } else {
      set.values.row(i).setConstant(T(1) / std::sqrt(static_cast<T>(dim)));
    }
  }
  return set;
}

template <typename T>
void sample_descriptors_backward(const std::vector<Tensor3<T>>& pyramid, const std::vector<int>& strides,
                                 const DescriptorSet<T>& set, const MatrixR<T>& d_values,
                                 std::vector<Tensor3<T>>& d_pyramid) {
  if (d_pyramid.size() != pyramid.size()) {
    d_pyramid.clear();
    for (const auto& m : pyramid) d_pyramid.emplace_back(m.channels, m.rows, m.cols);
  }
  for (Eigen::Index i = 0; i < set.values.rows(); ++i) {
    const T n = set.norms[static_cast<std::size_t>(i)];
    if (!(n > T(1e-12))) continue;
    const auto f = set.values.row(i);
    const auto g = d_values.row(i);
    const Eigen::Matrix<T, 1, Eigen::Dynamic> d_raw = (g - f * f.dot(g)) / n;
    const Point2 p = set.points[static_cast<std::size_t>(i)];
    int offset = 0;
    for (std::size_t lv = 0; lv < pyramid.size(); ++lv) {
      Tensor3<T>& dm = d_pyramid[lv];
      const double r = std::min(p.row / strides[lv], dm.rows - 1.0);
      const double c = std::min(p.col / strides[lv], dm.cols - 1.0);
      const int r0 = static_cast<int>(r);
      const int c0 = static_cast<int>(c);
      const int r1 = std::min(r0 + 1, dm.rows - 1);
      const int c1 = std::min(c0 + 1, dm.cols - 1);
      const T fr = static_cast<T>(r - r0);
      const T fc = static_cast<T>(c - c0);
      for (int ch = 0; ch < dm.channels; ++ch) {
        const T gv = d_raw(offset + ch);
        dm.at(ch, r0, c0) += (T(1) - fr) * (T(1) - fc) * gv;
        dm.at(ch, r0, c1) += (T(1) - fr) * fc * gv;
        dm.at(ch, r1, c0) += fr * (T(1) - fc) * gv;
        dm.at(ch, r1, c1) += fr * fc * gv;
      }
      offset += dm.channels;
    }
  }
}

// ---------------------------------------------------------------------------
// Match head

template <typename T>
T match_head(const ModelParams<T>& params, std::span<const T> f1, std::span<const T> f2) {
  const Layout& l = layout_for(params.config());
  const auto w = params.slot(l.head_weight);
  const std::size_t d = w.size() / 2;
  if (f1.size() != d || f2.size() != d) throw ArgumentError("match_head: descriptor dimension mismatch");
  T logit = params.slot(l.head_bias)[0];
  for (std::size_t k = 0; k < d; ++k) {
    const T diff = f1[k] - f2[k];
    logit += w[k] * f1[k] * f2[k] + w[d + k] * diff * diff;
  }
  return sigmoid(logit);
}

template <typename T>
MatrixR<T> match_head_logits(const ModelParams<T>& params, const MatrixR<T>& f1, const MatrixR<T>& f2) {
  const Layout& l = layout_for(params.config());
  const auto w = params.slot(l.head_weight);
  const auto d = static_cast<Eigen::Index>(w.size() / 2);
  if (f1.cols() != d || f2.cols() != d) throw ArgumentError("match_head: descriptor dimension mismatch");
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w_prod(w.data(), d);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w_sq(w.data() + d, d);
  // sum_k wp f1 f2 + wq (f1 - f2)^2 = f1 diag(wp - 2 wq) f2^T + (f1^2) wq + (f2^2) wq + b
  const Eigen::Matrix<T, Eigen::Dynamic, 1> cross = w_prod - T(2) * w_sq;
  MatrixR<T> logits = (f1 * cross.asDiagonal()) * f2.transpose();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> self1 = f1.cwiseAbs2() * w_sq;
  const Eigen::Matrix<T, Eigen::Dynamic, 1> self2 = f2.cwiseAbs2() * w_sq;
  logits.colwise() += self1;
  logits.rowwise() += self2.transpose();
  logits.array() += params.slot(l.head_bias)[0];
  return logits;
}

template <typename T>
void match_head_backward(const ModelParams<T>& params, const MatrixR<T>& f1, const MatrixR<T>& f2,
                         const MatrixR<T>& d_logits, MatrixR<T>& d_f1, MatrixR<T>& d_f2, ModelParams<T>& grad) {
  const Layout& l = layout_for(params.config());
  const auto w = params.slot(l.head_weight);
  const auto d = static_cast<Eigen::Index>(w.size() / 2);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w_prod(w.data(), d);
  const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> w_sq(w.data() + d, d);
  const Eigen::Matrix<T, Eigen::Dynamic, 1> cross = w_prod - T(2) * w_sq;

  const Eigen::Matrix<T, Eigen::Dynamic, 1> row_sum = d_logits.rowwise().sum();
  const Eigen::Matrix<T, Eigen::Dynamic, 1> col_sum = d_logits.colwise().sum().transpose();
  const MatrixR<T> g_f2 = d_logits * f2;             // K1 x D
  const MatrixR<T> gt_f1 = d_logits.transpose() * f1;  // K2 x D
  const Eigen::Matrix<T, Eigen::Dynamic, 1> cross_term = (f1.cwiseProduct(g_f2)).colwise().sum().transpose();

  auto gw = grad.slot(l.head_weight);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> g_prod(gw.data(), d);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> g_sq(gw.data() + d, d);
  g_prod += cross_term;
  g_sq += (f1.cwiseAbs2().transpose() * row_sum) + (f2.cwiseAbs2().transpose() * col_sum) - T(2) * cross_term;
  grad.slot(l.head_bias)[0] += d_logits.sum();

  d_f1 = g_f2 * cross.asDiagonal();
  d_f1 += T(2) * (row_sum.asDiagonal() * f1) * w_sq.asDiagonal();
  d_f2 = gt_f1 * cross.asDiagonal();
  d_f2 += T(2) * (col_sum.asDiagonal() * f2) * w_sq.asDiagonal();
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define LANDMATCH_INSTANTIATE(T)                                                                                 \
  template class ModelParams<T>;                                                                                 \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                     \
  template Array2D<T> normalize_unit_range<T>(const GrayImage&);                                                 \
  template BranchOutput<T> forward_branch<T>(const ModelParams<T>&, const Array2D<T>&, bool);                    \
  template BranchOutput<T> forward_branch<T>(const ModelParams<T>&, const GrayImage&, bool);                     \
  template void backward_branch<T>(const ModelParams<T>&, const BranchOutput<T>&, const Array2D<T>&,             \
                                   const std::vector<Tensor3<T>>&, ModelParams<T>&);                             \
  template DescriptorSet<T> sample_descriptors<T>(const std::vector<Tensor3<T>>&, const std::vector<int>&,       \
                                                  std::span<const Point2>, int, int);                            \
  template void sample_descriptors_backward<T>(const std::vector<Tensor3<T>>&, const std::vector<int>&,          \
                                               const DescriptorSet<T>&, const MatrixR<T>&,                       \
                                               std::vector<Tensor3<T>>&);                                        \
  template T match_head<T>(const ModelParams<T>&, std::span<const T>, std::span<const T>);                       \
  template MatrixR<T> match_head_logits<T>(const ModelParams<T>&, const MatrixR<T>&, const MatrixR<T>&);         \
  template void match_head_backward<T>(const ModelParams<T>&, const MatrixR<T>&, const MatrixR<T>&,              \
                                       const MatrixR<T>&, MatrixR<T>&, MatrixR<T>&, ModelParams<T>&);

LANDMATCH_INSTANTIATE(float)
LANDMATCH_INSTANTIATE(double)

#undef LANDMATCH_INSTANTIATE

}  // namespace landmatch
