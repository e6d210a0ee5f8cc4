#include "landmatch/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace landmatch {

namespace {

template <typename T>
const char* type_label() {
  if constexpr (std::is_same_v<T, bool>) return "boolean";
  else if constexpr (std::is_integral_v<T>) return "integer";
  else if constexpr (std::is_floating_point_v<T>) return "number";
  else return "string";
}

// Reads known keys of one YAML mapping and rejects the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(label() + ": expected a mapping");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    known_.push_back(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    out = scalar<T>(v, full(key));
  }

  void get(const std::string& key, Range& out) {
    known_.push_back(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    if (!v.IsSequence() || v.size() != 2) throw ConfigError(full(key) + ": expected [lo, hi]");
    out = {scalar<double>(v[0], full(key) + "[0]"), scalar<double>(v[1], full(key) + "[1]")};
  }

  template <typename T>
  void get(const std::string& key, std::vector<T>& out) {
    known_.push_back(key);
    const YAML::Node v = lookup(key);
    if (!v) return;
    if (!v.IsSequence()) throw ConfigError(full(key) + ": expected a list");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(scalar<T>(v[i], full(key) + "[" + std::to_string(i) + "]"));
  }

  Section child(const std::string& key) {
    known_.push_back(key);
    return Section(lookup(key), full(key));
  }

  YAML::Node raw(const std::string& key) {
    known_.push_back(key);
    return lookup(key);
  }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (std::find(known_.begin(), known_.end(), key) == known_.end()) {
        std::string valid;
        for (const auto& k : known_) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown key '" + full(key) + "'; valid keys at " + label() + ": " + valid);
      }
    }
  }

 private:
  YAML::Node lookup(const std::string& key) const {
    if (!node_ || !node_.IsMap()) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node v = node_[key];
    if (!v.IsDefined()) return YAML::Node(YAML::NodeType::Undefined);
    return v;
  }

  template <typename T>
  static T scalar(const YAML::Node& v, const std::string& where) {
    if (!v.IsScalar()) throw ConfigError(where + ": expected a " + type_label<T>());
    try {
      return v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where + ": expected a " + std::string(type_label<T>()) + ", got '" + v.Scalar() + "'");
    }
  }

  std::string label() const { return path_.empty() ? "top level" : path_; }

  YAML::Node node_;
  std::string path_;
  std::vector<std::string> known_;
};

}  // namespace

InferenceOptions RunConfig::inference_options() const {
  InferenceOptions o;
  o.thresh_landmark = thresh_landmark;
  o.cell_px = train.cell_px;
  o.max_candidates = max_candidates;
  o.mask = train.mask;
  return o;
}

void RunConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("name must be a non-empty directory name");
  if (jobs < 0) throw ConfigError("jobs must be >= 0");
  train.validate();
  if (!(thresh_landmark >= 0.0 && thresh_landmark < 1.0)) throw ConfigError("thresh_landmark must lie in [0, 1)");
  if (max_candidates < 0) throw ConfigError("max_candidates must be >= 0");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("baseline.ratio must lie in (0, 1)");
  if (dog.octaves < 1 || dog.scales_per_octave < 1) throw ConfigError("baseline octaves/scales must be >= 1");
  if (texture_count < 1 || texture_size < kMinImageSide) throw ConfigError("textures: count >= 1, size >= 16");
  if (pairs_per_family < 1) throw ConfigError("pairs.per_family must be >= 1");
  if (!std::is_sorted(curve_thresholds_mm.begin(), curve_thresholds_mm.end())) {
    throw ConfigError("evaluation.thresholds_mm must be ascending");
  }
}

RunConfig parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.get("name", c.name);
  top.get("output_dir", c.output_dir);
  top.get("data_dir", c.data_dir);
  top.get("pairs_dir", c.pairs_dir);
  top.get("jobs", c.jobs);
  top.get("seed", c.train.seed);
  top.get("epochs", c.train.epochs);
  top.get("batch_size", c.train.batch_size);
  top.get("pairs_per_image", c.train.pairs_per_image);
  top.get("learning_rate", c.train.learning_rate);
  top.get("weight_decay", c.train.weight_decay);
  top.get("k", c.train.k);
  top.get("cell_px", c.train.cell_px);
  top.get("thresh_pixels", c.train.thresh_pixels);
  top.get("m_pos", c.train.m_pos);
  top.get("m_neg", c.train.m_neg);
  top.get("validation_fraction", c.train.validation_fraction);
  top.get("thresh_landmark", c.thresh_landmark);
  top.get("max_candidates", c.max_candidates);

  {
    Section s = top.child("model");
    s.get("encoder_filters", c.train.model.encoder_filters);
    s.get("descriptor_blocks", c.train.model.descriptor_blocks);
    s.finish();
  }
  {
    Section s = top.child("mask");
    s.get("intensity_thresh_frac", c.train.mask.intensity_thresh_frac);
    s.get("min_component_px", c.train.mask.min_component_px);
    s.finish();
  }
  {
    Section s = top.child("transform");
    auto& t = c.train.transform;
    s.get("intensity_magnitude", t.intensity_magnitude);
    s.get("intensity_cap", t.intensity_cap);
    s.get("rotation_deg", t.rotation_deg);
    s.get("scale", t.scale);
    s.get("shear", t.shear);
    s.get("translation_frac", t.translation_frac);
    s.get("elastic_blobs", t.elastic_blobs);
    s.get("elastic_sigma_frac", t.elastic_sigma_frac);
    s.get("elastic_amplitude_px", t.elastic_amplitude_px);
    s.finish();
  }
  if (const YAML::Node fw = top.raw("family_weights"); fw && !fw.IsNull()) {
    if (!fw.IsMap()) throw ConfigError("family_weights: expected a mapping of family name to weight");
    c.train.family_weights.clear();
    for (const auto& kv : fw) {
      const std::string key = kv.first.as<std::string>();
      TransformFamily f;
      try {
        f = parse_family(key);
      } catch (const ArgumentError&) {
        throw ConfigError("family_weights." + key + ": unknown transform family");
      }
      double w = 0.0;
      try {
        w = kv.second.as<double>();
      } catch (const YAML::Exception&) {
        throw ConfigError("family_weights." + key + ": expected a number");
      }
      c.train.family_weights.push_back({f, w});
    }
  }
  {
    Section s = top.child("baseline");
    s.get("octaves", c.dog.octaves);
    s.get("scales_per_octave", c.dog.scales_per_octave);
    s.get("contrast_thresh", c.dog.contrast_thresh);
    s.get("sigma0", c.dog.sigma0);
    s.get("ratio", c.ratio);
    s.finish();
  }
  {
    Section s = top.child("textures");
    s.get("count", c.texture_count);
    s.get("size", c.texture_size);
    s.finish();
  }
  {
    Section s = top.child("pairs");
    std::vector<std::string> names;
    for (const auto f : c.pair_families) names.emplace_back(family_name(f));
    s.get("families", names);
    c.pair_families.clear();
    for (const auto& n : names) {
      try {
        c.pair_families.push_back(parse_family(n));
      } catch (const ArgumentError&) {
        throw ConfigError("pairs.families: unknown transform family '" + n + "'");
      }
    }
    s.get("per_family", c.pairs_per_family);
    s.finish();
  }
  {
    Section s = top.child("evaluation");
    s.get("thresholds_mm", c.curve_thresholds_mm);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace {

void emit_range(YAML::Emitter& e, const char* key, const Range& r) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq << r.lo << r.hi << YAML::EndSeq;
}

template <typename T>
void emit_list(YAML::Emitter& e, const char* key, const std::vector<T>& v) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : v) e << x;
  e << YAML::EndSeq;
}

}  // namespace

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "name" << YAML::Value << YAML::DoubleQuoted << c.name;
  e << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;
  e << YAML::Key << "data_dir" << YAML::Value << YAML::DoubleQuoted << c.data_dir;
  e << YAML::Key << "pairs_dir" << YAML::Value << YAML::DoubleQuoted << c.pairs_dir;
  e << YAML::Key << "jobs" << YAML::Value << c.jobs;
  e << YAML::Key << "seed" << YAML::Value << c.train.seed;
  e << YAML::Key << "epochs" << YAML::Value << c.train.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << c.train.batch_size;
  e << YAML::Key << "pairs_per_image" << YAML::Value << c.train.pairs_per_image;
  e << YAML::Key << "learning_rate" << YAML::Value << c.train.learning_rate;
  e << YAML::Key << "weight_decay" << YAML::Value << c.train.weight_decay;
  e << YAML::Key << "k" << YAML::Value << c.train.k;
  e << YAML::Key << "cell_px" << YAML::Value << c.train.cell_px;
  e << YAML::Key << "thresh_pixels" << YAML::Value << c.train.thresh_pixels;
  e << YAML::Key << "m_pos" << YAML::Value << c.train.m_pos;
  e << YAML::Key << "m_neg" << YAML::Value << c.train.m_neg;
  e << YAML::Key << "validation_fraction" << YAML::Value << c.train.validation_fraction;
  e << YAML::Key << "thresh_landmark" << YAML::Value << c.thresh_landmark;
  e << YAML::Key << "max_candidates" << YAML::Value << c.max_candidates;

  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  emit_list(e, "encoder_filters", c.train.model.encoder_filters);
  emit_list(e, "descriptor_blocks", c.train.model.descriptor_blocks);
  e << YAML::EndMap;

  e << YAML::Key << "mask" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "intensity_thresh_frac" << YAML::Value << c.train.mask.intensity_thresh_frac;
  e << YAML::Key << "min_component_px" << YAML::Value << c.train.mask.min_component_px;
  e << YAML::EndMap;

  const auto& t = c.train.transform;
  e << YAML::Key << "transform" << YAML::Value << YAML::BeginMap;
  emit_range(e, "intensity_magnitude", t.intensity_magnitude);
  e << YAML::Key << "intensity_cap" << YAML::Value << t.intensity_cap;
  emit_range(e, "rotation_deg", t.rotation_deg);
  emit_range(e, "scale", t.scale);
  emit_range(e, "shear", t.shear);
  emit_range(e, "translation_frac", t.translation_frac);
  e << YAML::Key << "elastic_blobs" << YAML::Value << t.elastic_blobs;
  emit_range(e, "elastic_sigma_frac", t.elastic_sigma_frac);
  emit_range(e, "elastic_amplitude_px", t.elastic_amplitude_px);
  e << YAML::EndMap;

  e << YAML::Key << "family_weights" << YAML::Value << YAML::BeginMap;
  for (const auto& fw : c.train.family_weights) {
    e << YAML::Key << std::string(family_name(fw.family)) << YAML::Value << fw.weight;
  }
  e << YAML::EndMap;

  e << YAML::Key << "baseline" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "octaves" << YAML::Value << c.dog.octaves;
  e << YAML::Key << "scales_per_octave" << YAML::Value << c.dog.scales_per_octave;
  e << YAML::Key << "contrast_thresh" << YAML::Value << c.dog.contrast_thresh;
  e << YAML::Key << "sigma0" << YAML::Value << c.dog.sigma0;
  e << YAML::Key << "ratio" << YAML::Value << c.ratio;
  e << YAML::EndMap;

  e << YAML::Key << "textures" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "count" << YAML::Value << c.texture_count;
  e << YAML::Key << "size" << YAML::Value << c.texture_size;
  e << YAML::EndMap;

  e << YAML::Key << "pairs" << YAML::Value << YAML::BeginMap;
  std::vector<std::string> names;
  for (const auto f : c.pair_families) names.emplace_back(family_name(f));
  emit_list(e, "families", names);
  e << YAML::Key << "per_family" << YAML::Value << c.pairs_per_family;
  e << YAML::EndMap;

  e << YAML::Key << "evaluation" << YAML::Value << YAML::BeginMap;
  emit_list(e, "thresholds_mm", c.curve_thresholds_mm);
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

void apply_overrides(RunConfig& c, const ConfigOverrides& o) {
  if (o.seed) c.train.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.thresh_landmark) c.thresh_landmark = *o.thresh_landmark;
  if (o.m_pos) c.train.m_pos = *o.m_pos;
  if (o.m_neg) c.train.m_neg = *o.m_neg;
  if (o.k) c.train.k = *o.k;
  if (o.cell_px) c.train.cell_px = *o.cell_px;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.output_dir) c.output_dir = *o.output_dir;
  c.validate();
}

}  // namespace landmatch
