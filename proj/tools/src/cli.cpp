#include "landmatch_cli/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "landmatch/baseline.hpp"
#include "landmatch/checkpoint.hpp"
#include "landmatch/config.hpp"
#include "landmatch/evaluation.hpp"
#include "landmatch/image_io.hpp"
#include "landmatch/pipeline.hpp"
#include "landmatch/texture.hpp"
#include "landmatch/threading.hpp"

namespace landmatch::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_image_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".png" || ext == ".pgm" || ext == ".raw";
}

int worker_count(const RunConfig& cfg) { return cfg.jobs > 0 ? cfg.jobs : numeric_threads(); }

struct Options {
  std::string config_path;
  ConfigOverrides overrides;
  std::optional<std::string> name, data_dir, pairs_dir;
  // subcommand-specific
  std::optional<int> texture_count, texture_size, per_family;
  std::optional<std::string> images_dir, checkpoint, import_keypoints;
  std::vector<std::string> families;
  std::optional<double> ratio;
};

RunConfig effective_config(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  if (o.name) cfg.name = *o.name;
  if (o.data_dir) cfg.data_dir = *o.data_dir;
  if (o.pairs_dir) cfg.pairs_dir = *o.pairs_dir;
  if (o.texture_count) cfg.texture_count = *o.texture_count;
  if (o.texture_size) cfg.texture_size = *o.texture_size;
  if (o.per_family) cfg.pairs_per_family = *o.per_family;
  if (o.ratio) cfg.ratio = *o.ratio;
  if (!o.families.empty()) {
    cfg.pair_families.clear();
    for (const auto& f : o.families) {
      try {
        cfg.pair_families.push_back(parse_family(f));
      } catch (const ArgumentError& e) {
        throw ConfigError(std::string("--families: ") + e.what());
      }
    }
  }
  apply_overrides(cfg, o.overrides);
  cfg.train.threads = cfg.jobs;
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.run_dir());
  write_text_atomic(cfg.run_dir() / "config.effective", to_yaml(cfg));
}

fs::path checkpoint_path(const RunConfig& cfg, const Options& o) {
  return o.checkpoint ? fs::path(*o.checkpoint) : cfg.run_dir() / "checkpoints" / "latest.lmck";
}

ModelParams<float> load_model(const RunConfig& cfg, const Options& o) {
  const fs::path path = checkpoint_path(cfg, o);
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path.string() + " (run 'landmatch train' first)");
  return load_checkpoint(path, cfg.train.model).params;
}

std::vector<PairRecord> require_pairs(const RunConfig& cfg, std::ostream& err) {
  int skipped = 0;
  auto pairs = load_pairs(cfg.pairs_dir, err, &skipped);
  if (pairs.empty()) {
    throw IoError("no complete pair directories under " + cfg.pairs_dir +
                  (skipped > 0 ? " (" + std::to_string(skipped) + " skipped)" : std::string()));
  }
  return pairs;
}

int cmd_make_textures(const RunConfig& cfg, std::ostream& out) {
  const auto textures = make_texture_set(cfg.texture_count, cfg.texture_size, cfg.train.seed);
  fs::create_directories(cfg.data_dir);
  for (std::size_t i = 0; i < textures.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "texture_%03zu.png", i);
    save_png16(fs::path(cfg.data_dir) / name, textures[i]);
  }
  out << "wrote " << textures.size() << " textures to " << cfg.data_dir << "\n";
  return kOk;
}

int cmd_make_pairs(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const fs::path source = o.images_dir ? fs::path(*o.images_dir) : fs::path(cfg.data_dir);
  const auto images = list_images(source);
  if (images.empty()) throw IoError("no images in " + source.string());
  std::vector<GrayImage> refs;
  for (const auto& p : images) refs.push_back(load_grayscale(p));
  std::mt19937_64 rng(cfg.train.seed ^ 0x5bd1e9955bd1e995ull);
  int written = 0;
  for (const TransformFamily family : cfg.pair_families) {
    for (int i = 0; i < cfg.pairs_per_family; ++i) {
      TransformSpec spec = cfg.train.transform;
      spec.family = family;
      const GrayImage& ref = refs[static_cast<std::size_t>(written) % refs.size()];
      TrainingPair p = synthesize_pair(ref, spec, cfg.train.mask, rng);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03d", std::string(family_name(family)).c_str(), i);
      save_pair(fs::path(cfg.pairs_dir) / id, {id, std::string(family_name(family)), std::move(p.reference),
                                               std::move(p.target), std::move(p.reference_mask),
                                               std::move(p.target_mask), std::move(p.transform)});
      ++written;
    }
  }
  out << "wrote " << written << " pairs to " << cfg.pairs_dir << "\n";
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  const auto paths = list_images(cfg.data_dir);
  if (paths.empty()) throw IoError("no training images in " + cfg.data_dir + " (run 'landmatch make-textures')");
  std::vector<GrayImage> data;
  for (const auto& p : paths) data.push_back(load_grayscale(p));
  echo_config(cfg);
  TrainOutputs outputs;
  outputs.checkpoint_dir = cfg.run_dir() / "checkpoints";
  fs::create_directories(cfg.run_dir() / "logs");
  outputs.log_path = cfg.run_dir() / "logs" / "train.jsonl";
  const TrainResult r = train(cfg.train, data, outputs);
  for (std::size_t e = 0; e < r.epoch_mean_total.size(); ++e) {
    out << "epoch " << e + 1 << " train_loss " << r.epoch_mean_total[e];
    if (e < r.validation_mean_total.size()) out << " val_loss " << r.validation_mean_total[e];
    out << "\n";
  }
  out << "checkpoint " << (*outputs.checkpoint_dir / "latest.lmck").string() << "\n";
  return kOk;
}

int cmd_infer(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
  const ModelParams<float> params = load_model(cfg, o);
  const auto pairs = require_pairs(cfg, err);
  echo_config(cfg);
  const fs::path dir = cfg.run_dir() / "matches";
  fs::create_directories(dir);
  std::vector<MatchSet> results(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), worker_count(cfg), [&](int i) {
    const PairRecord& p = pairs[static_cast<std::size_t>(i)];
    results[static_cast<std::size_t>(i)] = infer_pair(params, p.reference, p.reference_mask, p.target,
                                                      p.target_mask, cfg.inference_options());
  });
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    write_matches_csv(dir / (pairs[i].id + ".csv"), results[i]);
    out << pairs[i].id << ": " << results[i].pairs.size() << " matches\n";
  }
  return kOk;
}

PairEvaluation evaluate_matches(const PairRecord& p, const MatchSet& m) {
  return {p.id, p.family, compute_matching_errors(m, p.transform, p.reference.spacing())};
}

void write_report(const RunConfig& cfg, const EvalReport& r) {
  fs::create_directories(cfg.run_dir() / "reports");
  write_text_atomic(cfg.run_dir() / "reports" / (r.method + ".json"), report_to_json(r));
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto pairs = require_pairs(cfg, err);
  echo_config(cfg);
  std::vector<PairEvaluation> evals;
  for (const auto& p : pairs) {
    const fs::path csv = cfg.run_dir() / "matches" / (p.id + ".csv");
    if (!fs::exists(csv)) {
      err << "warning: no matches for " << p.id << " (" << csv.string() << "), skipped\n";
      continue;
    }
    evals.push_back(evaluate_matches(p, read_matches_csv(csv)));
  }
  if (evals.empty()) throw IoError("no match files under " + (cfg.run_dir() / "matches").string());
  const EvalReport report = summarize("proposed", evals, cfg.curve_thresholds_mm);
  write_report(cfg, report);
  const std::vector<EvalReport> reports{report};
  write_text_atomic(cfg.run_dir() / "reports" / "summary.csv", render_summary_csv(reports));
  const std::string table = render_summary_table(reports);
  write_text_atomic(cfg.run_dir() / "reports" / "summary.txt", table);
  out << table;
  if (report.warning) err << "warning: some families have no matches\n";
  return kOk;
}

std::vector<ClassicKeypoint> baseline_keypoints(const RunConfig& cfg, const Options& o, const PairRecord& p,
                                                const GrayImage& img, const char* which) {
  if (o.import_keypoints) return read_keypoints_csv(fs::path(*o.import_keypoints) / p.id / (std::string(which) + ".csv"));
  return compute_descriptors(img, detect_keypoints_dog(img, cfg.dog), cfg.dog);
}

MatchSet to_match_set(const std::vector<IndexPair>& idx, const std::vector<ClassicKeypoint>& k1,
                      const std::vector<ClassicKeypoint>& k2, const MatrixR<double>& dist) {
  MatchSet m;
  m.candidates1 = static_cast<int>(k1.size());
  m.candidates2 = static_cast<int>(k2.size());
  for (const auto& [i, j] : idx) {
    const double d = dist(i, j);
    m.pairs.push_back({k1[static_cast<std::size_t>(i)].location, k2[static_cast<std::size_t>(j)].location, 1.0, d * d,
                       i, j});
  }
  return m;
}

int cmd_compare_baseline(const RunConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
  const ModelParams<float> params = load_model(cfg, o);
  const auto pairs = require_pairs(cfg, err);
  echo_config(cfg);
  const std::vector<double> sweep{0.9, 0.8, 0.75, 0.7, 0.6};
  struct PerPair {
    PairEvaluation proposed, inverse, ratio;
    std::vector<long> sweep_counts;
  };
  std::vector<PerPair> per(pairs.size());
  fs::create_directories(cfg.run_dir() / "matches");
  parallel_for(static_cast<int>(pairs.size()), worker_count(cfg), [&](int n) {
    const PairRecord& p = pairs[static_cast<std::size_t>(n)];
    PerPair& r = per[static_cast<std::size_t>(n)];
    const MatchSet ours =
        infer_pair(params, p.reference, p.reference_mask, p.target, p.target_mask, cfg.inference_options());
    r.proposed = evaluate_matches(p, ours);
    const auto k1 = baseline_keypoints(cfg, o, p, p.reference, "reference");
    const auto k2 = baseline_keypoints(cfg, o, p, p.target, "target");
    const MatrixR<double> d1 = descriptor_matrix(k1);
    const MatrixR<double> d2 = descriptor_matrix(k2);
    const MatrixR<double> dist = descriptor_distances(d1, d2);
    r.inverse = evaluate_matches(p, to_match_set(match_inverse_consistency(d1, d2), k1, k2, dist));
    r.ratio = evaluate_matches(p, to_match_set(match_ratio_test(d1, d2, cfg.ratio), k1, k2, dist));
    for (const double ratio : sweep) r.sweep_counts.push_back(static_cast<long>(match_ratio_test(d1, d2, ratio).size()));
  });
  std::vector<PairEvaluation> a, b, c;
  std::vector<long> sweep_total(sweep.size(), 0);
  for (const auto& r : per) {
    a.push_back(r.proposed);
    b.push_back(r.inverse);
    c.push_back(r.ratio);
    for (std::size_t s = 0; s < sweep.size(); ++s) sweep_total[s] += r.sweep_counts[s];
  }
  const std::vector<EvalReport> reports{summarize("proposed", a, cfg.curve_thresholds_mm),
                                        summarize("dog-inverse-consistency", b, cfg.curve_thresholds_mm),
                                        summarize("dog-ratio-test", c, cfg.curve_thresholds_mm)};
  for (const auto& r : reports) write_report(cfg, r);
  std::ostringstream table;
  table << render_summary_table(reports);
  table << "\nratio-test matches by ratio:";
  for (std::size_t s = 0; s < sweep.size(); ++s) table << " " << sweep[s] << "=" << sweep_total[s];
  table << "\n\nPublished CT-data rows (matches per pair, median (IQR); not comparable):\n";
  for (const auto& row : kPublishedMatchCounts) {
    table << "  " << row.method << ": intensity " << row.intensity << ", affine " << row.affine << ", elastic "
          << row.elastic << "\n";
  }
  write_text_atomic(cfg.run_dir() / "reports" / "comparison.csv", render_summary_csv(reports));
  write_text_atomic(cfg.run_dir() / "reports" / "comparison.txt", table.str());
  out << table.str();
  return kOk;
}

int cmd_plot(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = cfg.run_dir() / "reports";
  std::vector<EvalReport> reports;
  if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) reports.push_back(report_from_json(read_text(f)));
  }
  if (reports.empty()) throw IoError("no reports under " + dir.string() + " (run 'landmatch evaluate' first)");
  echo_config(cfg);
  std::map<std::string, std::vector<CurveSeries>> by_family;
  for (const auto& r : reports) {
    for (const auto& f : r.families) by_family[f.family].push_back({r.method, f.curve});
  }
  fs::create_directories(cfg.run_dir() / "plots");
  for (const auto& [family, series] : by_family) {
    const fs::path path = cfg.run_dir() / "plots" / ("cumulative_" + family + ".svg");
    write_text_atomic(path, render_cumulative_svg(series, family));
    out << "wrote " << path.string() << "\n";
  }
  return kOk;
}

}  // namespace

void save_pair(const fs::path& dir, const PairRecord& pair) {
  fs::create_directories(dir);
  save_png16(dir / "reference.png", pair.reference);
  save_png16(dir / "target.png", pair.target);
  save_mask_png(dir / "reference_mask.png", pair.reference_mask);
  save_mask_png(dir / "target_mask.png", pair.target_mask);
  write_text_atomic(dir / "transform.json", transform_to_json(pair.transform));
}

std::optional<PairRecord> load_pair(const fs::path& dir) {
  for (const char* f : kPairFiles) {
    if (!fs::exists(dir / f)) return std::nullopt;
  }
  Transform t = transform_from_json(read_text(dir / "transform.json"));
  const std::string family(family_name(t.family()));
  return PairRecord{dir.filename().string(),
                    family,
                    load_grayscale(dir / "reference.png"),
                    load_grayscale(dir / "target.png"),
                    load_mask_png(dir / "reference_mask.png"),
                    load_mask_png(dir / "target_mask.png"),
                    std::move(t)};
}

std::vector<PairRecord> load_pairs(const fs::path& root, std::ostream& err, int* skipped) {
  if (skipped) *skipped = 0;
  if (!fs::is_directory(root)) throw IoError("pairs directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<PairRecord> out;
  for (const auto& d : dirs) {
    auto p = load_pair(d);
    if (!p) {
      err << "warning: skipping incomplete pair directory " << d.string() << "\n";
      if (skipped) ++*skipped;
      continue;
    }
    out.push_back(std::move(*p));
  }
  return out;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised landmark detection and matching"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--name", o.name, "Run name (directory under the output dir)");
  app.add_option("--output-dir", o.overrides.output_dir, "Root directory for runs");
  app.add_option("--data-dir", o.data_dir, "Directory of training images");
  app.add_option("--pairs-dir", o.pairs_dir, "Directory of evaluation pairs");
  app.add_option("--seed", o.overrides.seed, "Random seed");
  app.add_option("--jobs", o.overrides.jobs, "Worker threads (0: all cores)");
  app.add_option("--thresh-landmark", o.overrides.thresh_landmark, "Inference landmark probability threshold");
  app.add_option("--m-pos", o.overrides.m_pos, "Positive hinge margin");
  app.add_option("--m-neg", o.overrides.m_neg, "Negative hinge margin");
  app.add_option("--k", o.overrides.k, "Landmarks sampled per training image");
  app.add_option("--cell-px", o.overrides.cell_px, "Grid cell size in pixels");
  app.add_option("--epochs", o.overrides.epochs, "Training epochs");

  auto* textures = app.add_subcommand("make-textures", "Generate synthetic training images");
  textures->add_option("--count", o.texture_count, "Number of images");
  textures->add_option("--size", o.texture_size, "Side length in pixels");
  auto* make_pairs = app.add_subcommand("make-pairs", "Synthesize evaluation pairs with known transforms");
  make_pairs->add_option("--images", o.images_dir, "Reference images (default: the data dir)");
  make_pairs->add_option("--per-family", o.per_family, "Pairs per transform family");
  make_pairs->add_option("--families", o.families, "Transform families");
  auto* train_cmd = app.add_subcommand("train", "Train the Siamese model");
  auto* infer_cmd = app.add_subcommand("infer", "Match landmarks on every pair");
  infer_cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: latest of the run)");
  auto* eval_cmd = app.add_subcommand("evaluate", "Score inferred matches against the known transforms");
  auto* compare = app.add_subcommand("compare-baseline", "Compare against DoG keypoint baselines");
  compare->add_option("--checkpoint", o.checkpoint, "Model checkpoint (default: latest of the run)");
  compare->add_option("--import-keypoints", o.import_keypoints,
                      "Directory of <pair>/{reference,target}.csv keypoints to use instead of the DoG detector");
  compare->add_option("--ratio", o.ratio, "Ratio-test threshold");
  auto* plot = app.add_subcommand("plot", "Render cumulative error curves from the run's reports");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    const RunConfig cfg = effective_config(o);
    if (*textures) return cmd_make_textures(cfg, out);
    if (*make_pairs) return cmd_make_pairs(cfg, o, out);
    if (*train_cmd) return cmd_train(cfg, out);
    if (*infer_cmd) return cmd_infer(cfg, o, out, err);
    if (*eval_cmd) return cmd_evaluate(cfg, out, err);
    if (*compare) return cmd_compare_baseline(cfg, o, out, err);
    if (*plot) return cmd_plot(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ArgumentError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsageError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
  return kUsageError;
}

}  // namespace landmatch::cli
