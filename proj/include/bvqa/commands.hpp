// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvqa/backbone.hpp"
#include "bvqa/error.hpp"
#include "bvqa/gradcheck.hpp"
#include "bvqa/ingest.hpp"
#include "bvqa/metrics.hpp"
#include "bvqa/patcher.hpp"
#include "bvqa/pooling.hpp"
#include "bvqa/trainer.hpp"
#include "bvqa/util.hpp"

namespace bvqa {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// `spatial.variant` -> `--spatial-variant`.
inline std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin() + 2, f.end(), '_', '-');
  std::replace(f.begin() + 2, f.end(), '.', '-');
  return f;
}

/// Resolved option values of one command invocation.
struct RunConfig {
  std::string command;
  KeyValues values;

  bool has(const std::string& key) const {
    const auto it = values.find(key);
    return it != values.end() && !it->second.empty();
  }
  const std::string& str(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end() || it->second.empty()) throw UsageError("missing required option " + flag_name(key));
    return it->second;
  }
  std::string str_or(const std::string& key, const std::string& fallback = {}) const {
    return has(key) ? values.at(key) : fallback;
  }
  long long integer(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(flag_name(key) + ": expected an integer, got '" + s + "'");
  }
  std::size_t count(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw UsageError(flag_name(key) + " must be >= 0");
    return static_cast<std::size_t>(v);
  }
  std::uint64_t seed(const std::string& key = "seed") const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used == s.size() && s.front() != '-') return v;
    } catch (const std::exception&) {
    }
    throw UsageError(flag_name(key) + ": expected a non-negative integer, got '" + s + "'");
  }
  double real(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(flag_name(key) + ": expected a number, got '" + s + "'");
  }
  bool flag(const std::string& key) const {
    const std::string s = str_or(key, "0");
    if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "off" || s == "no") return false;
    throw UsageError(flag_name(key) + ": expected a boolean, got '" + s + "'");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str_or(key));
    for (std::string item; std::getline(ss, item, ',');) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
};

struct OptionSpec {
  std::string key;
  std::string default_value;
  std::string help;
  bool is_flag = false;  // takes no value; presence sets "1"
  bool required = false;
};

namespace detail {

inline std::vector<OptionSpec> model_options() {
  return {
      {"spatial.variant", "bilstm", "spatial pooling: concatenate, mean, lstm, bilstm"},
      {"temporal.variant", "bilstm", "temporal pooling: mean, harmonic, geometric, lstm, bilstm"},
      {"spatial.hidden", "64", "spatial recurrent hidden size"},
      {"temporal.hidden", "64", "temporal recurrent hidden size"},
      {"spatial.layers", "2", "spatial recurrent layers"},
      {"temporal.layers", "2", "temporal recurrent layers"},
      {"spatial.fc_out", "256", "width of the spatial FC output"},
      {"temporal.fc_out", "256", "width of the temporal FC output"},
      {"spatial.fc_activation", "linear", "spatial FC activation: linear or relu"},
      {"temporal.fc_activation", "linear", "temporal FC activation: linear or relu"},
  };
}

inline std::vector<OptionSpec> train_options() {
  return {
      {"epochs", "200", "training epochs"},
      {"lr", "1e-4", "Adam learning rate"},
      {"batch_size", "16", "videos (or images) per optimizer step"},
      {"seed", "42", "run seed; every stage seed derives from it"},
      {"freeze", "", "comma-separated parameter groups to freeze (spatial, temporal, head)"},
      {"holdout", "0", "fraction of training data held out for validation loss"},
  };
}

inline std::vector<OptionSpec> data_options() {
  return {
      {"manifest", "", "dataset manifest (TSV)"},
      {"features_dir", "", "directory of <id>.bvqf feature files; default: manifest sources"},
  };
}

inline std::vector<OptionSpec> evaluate_options() {
  return {
      {"k", "10", "number of random 80/20 splits"},
      {"train_frac", "0.8", "training fraction per split"},
      {"calibrate", "auto", "MOS calibration onto the YouTube-UGC scale: auto, on, off"},
      {"train_set", "", "cross-dataset mode: manifest to train on"},
      {"test_set", "", "cross-dataset mode: manifest to test on"},
      {"pretrain_manifest", "", "image manifest for spatial pretraining (each feature frame is one image)"},
      {"pretrain_features_dir", "", "feature directory for the pretraining manifest"},
      {"pretrain_epochs", "", "pretraining epochs; default: --epochs"},
      {"init_spatial", "", "pretraining checkpoint to initialize the spatial module from"},
  };
}

template <class... Lists>
std::vector<OptionSpec> join(Lists... lists) {
  std::vector<OptionSpec> out;
  (out.insert(out.end(), lists.begin(), lists.end()), ...);
  return out;
}

}  // namespace detail

inline const std::map<std::string, std::vector<OptionSpec>>& command_options() {
  using namespace detail;
  static const std::map<std::string, std::vector<OptionSpec>> table = {
      {"synth",
       {{"out", "", "output directory", false, true},
        {"videos", "8", "number of videos"},
        {"frames", "6", "frames per video"},
        {"height", "64", "frame height"},
        {"width", "64", "frame width"},
        {"levels", "", "comma-separated distortion levels in [0, 1]; default: evenly spaced"},
        {"seed", "1", "generator seed"},
        {"tag", "synthetic", "dataset tag written to the manifest"},
        {"prefix", "synth", "video id prefix"}}},
      {"extract",
       join(data_options(),
            std::vector<OptionSpec>{{"out", "", "output feature directory", false, true},
                                    {"patch_size", "224", "square patch size"},
                                    {"stride", "196", "patch stride"},
                                    {"dim", "16", "feature dimension of the built-in extractor"},
                                    {"seed", "0", "extractor weight seed"},
                                    {"frame_stride", "1", "keep every n-th frame"},
                                    {"overwrite", "0", "replace existing feature files", true}})},
      {"pretrain", join(data_options(), model_options(), train_options(),
                        std::vector<OptionSpec>{{"out", "", "output directory", false, true}})},
      {"finetune",
       join(data_options(), model_options(), train_options(),
            std::vector<OptionSpec>{{"out", "", "output directory", false, true},
                                    {"init_spatial", "", "pretraining checkpoint for the spatial module"},
                                    {"resume", "", "checkpoint to resume; --epochs is the total target"},
                                    {"checkpoint_every", "0", "write out/model.ckpt every n epochs"}})},
      {"predict", join(data_options(), std::vector<OptionSpec>{{"model", "", "model checkpoint", false, true},
                                                               {"out", "", "output directory", false, true}})},
      {"evaluate", join(data_options(), model_options(), train_options(), evaluate_options(),
                        std::vector<OptionSpec>{{"out", "", "output directory", false, true}})},
      {"ablate",
       join(data_options(), model_options(), train_options(), evaluate_options(),
            std::vector<OptionSpec>{
                {"out", "", "output directory", false, true},
                {"spatial_variants", "concatenate,mean,lstm,bilstm", "spatial variants of the grid"},
                {"temporal_variants", "mean,harmonic,geometric,lstm,bilstm", "temporal variants of the grid"},
                {"pretrain", "auto", "pretraining column: on, off, both, auto (both if a pretraining set is given)"}})},
      {"gradcheck",
       {{"eps", "1e-4", "central-difference step"},
        {"tolerance", "1e-4", "maximum relative error"},
        {"seed", "7", "parameter and input seed"},
        {"quick", "0", "only T, N <= 2", true},
        {"flip_sign", "", "negate the analytic gradient of this parameter (harness self-test)"},
        {"out", "", "optional output directory for the report"}}},
      {"benchmark",
       join(model_options(),
            std::vector<OptionSpec>{{"height", "540", "frame height"},
                                    {"width", "960", "frame width"},
                                    {"frames", "8", "frames per video"},
                                    {"videos", "1", "videos per repeat"},
                                    {"repeats", "3", "repeats; medians are reported"},
                                    {"patch_size", "224", "square patch size"},
                                    {"stride", "196", "patch stride"},
                                    {"dim", "16", "feature dimension"},
                                    {"seed", "0", "seed"},
                                    {"out", "", "optional output directory"}})},
  };
  return table;
}

/// defaults < `config` file < explicitly given options.
inline RunConfig resolve_config(const std::string& command, const KeyValues& given) {
  const auto& table = command_options();
  const auto it = table.find(command);
  if (it == table.end()) throw UsageError("unknown command '" + command + "'");
  RunConfig cfg;
  cfg.command = command;
  std::set<std::string> known;
  for (const auto& o : it->second) {
    cfg.values[o.key] = o.default_value;
    known.insert(o.key);
  }
  if (auto c = given.find("config"); c != given.end() && !c->second.empty()) {
    if (!fs::exists(c->second)) throw UsageError("config file not found: " + c->second);
    for (const auto& [k, v] : parse_key_values(read_file(c->second), c->second)) {
      if (known.count(k)) cfg.values[k] = v;  // keys of other commands are ignored
    }
  }
  for (const auto& [k, v] : given) {
    if (k == "config") continue;
    if (!known.count(k)) throw UsageError(command + ": unknown option " + flag_name(k));
    cfg.values[k] = v;
  }
  for (const auto& o : it->second) {
    if (o.required && !cfg.has(o.key)) throw UsageError(command + ": missing required option " + flag_name(o.key));
  }
  return cfg;
}

inline void write_run_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_file_atomic(dir / "run_config.txt", "# bvqa " + cfg.command + "\n" + format_key_values(cfg.values));
}

inline ModelConfig model_config(const RunConfig& cfg) {
  KeyValues kv;
  for (const auto& [k, v] : cfg.values) {
    if (k.rfind("spatial.", 0) == 0 || k.rfind("temporal.", 0) == 0) kv[k] = v;
  }
  ModelConfig mc = model_config_from_kv(kv);
  mc.spatial.input_dim = 1;  // replaced by the data dimension
  return mc;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.integer("epochs"));
  tc.lr = cfg.real("lr");
  tc.batch_size = static_cast<int>(cfg.integer("batch_size"));
  tc.seed = cfg.seed();
  static const std::set<std::string> groups{"spatial", "temporal", "head"};
  for (const auto& g : cfg.list("freeze")) {
    if (!groups.count(g)) throw UsageError("--freeze: unknown parameter group '" + g + "'");
    tc.freeze.insert(g);
  }
  tc.holdout_frac = cfg.real("holdout");
  validate(tc);
  return tc;
}

// ---------------------------------------------------------------------------
// Data loading
// ---------------------------------------------------------------------------

struct FeatureSet {
  DatasetManifest manifest;
  std::vector<FeatureTensor> features;  // aligned with manifest.records
};

inline fs::path feature_path(const DatasetManifest& m, const VideoRecord& r, const std::string& features_dir) {
  if (!features_dir.empty()) return fs::path(features_dir) / (r.id + ".bvqf");
  return m.resolve(r);
}

inline FeatureSet load_feature_set(const fs::path& manifest_path, const std::string& features_dir) {
  FeatureSet s;
  s.manifest = load_manifest(manifest_path);
  s.features.resize(s.manifest.records.size());
  parallel_for(s.features.size(), [&](std::size_t i) {
    const auto& r = s.manifest.records[i];
    const fs::path p = feature_path(s.manifest, r, features_dir);
    if (!fs::is_regular_file(p)) throw DataError("features for video " + r.id + " not found at " + p.string());
    s.features[i] = load_features(p);
    s.features[i].video_id = r.id;
  });
  return s;
}

inline std::vector<LabeledVideo> labeled_videos(const FeatureSet& s, bool calibrate) {
  if (!calibrate && !uniform_scale(s.manifest)) {
    throw DataError(s.manifest.name + ": records declare different MOS scales; calibration is required");
  }
  std::vector<LabeledVideo> out;
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    const auto& r = s.manifest.records[i];
    out.push_back({r.id, to_input(s.features[i]), calibrate ? calibrate_inlsa(r.mos, r.dataset_tag) : r.mos});
  }
  return out;
}

/// Every frame of every feature file is one pretraining image scored with
/// its record's MOS.
inline std::vector<LabeledImage> labeled_images(const FeatureSet& s) {
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < s.features.size(); ++i) {
    const auto& f = s.features[i];
    for (std::size_t t = 0; t < f.frames; ++t) {
      const auto fr = f.frame(t);
      out.push_back({f.video_id + "#" + std::to_string(t), f.patches, f.dim, nn::Vec(fr.begin(), fr.end()),
                     s.manifest.records[i].mos});
    }
  }
  return out;
}

inline std::set<std::string> dataset_tags(const DatasetManifest& m) {
  std::set<std::string> tags;
  for (const auto& r : m.records) tags.insert(r.dataset_tag);
  return tags;
}

inline bool all_calibration_tags(const std::set<std::string>& tags) {
  return std::all_of(tags.begin(), tags.end(), [](const std::string& t) { return is_calibration_tag(t); });
}

/// `auto` calibrates only when the data mixes known corpora.
inline bool decide_calibration(const std::string& mode, const std::set<std::string>& train_tags,
                               const std::set<std::string>& test_tags) {
  std::set<std::string> all = train_tags;
  all.insert(test_tags.begin(), test_tags.end());
  if (mode == "off") return false;
  if (mode == "on") {
    for (const auto& t : all) {
      if (!is_calibration_tag(t)) throw UsageError("--calibrate on: dataset tag '" + t + "' has no calibration");
    }
    return true;
  }
  if (mode != "auto") throw UsageError("--calibrate: expected auto, on or off, got '" + mode + "'");
  const bool differ = all.size() > 1 || train_tags != test_tags;
  return differ && all_calibration_tags(all);
}

// ---------------------------------------------------------------------------
// synth / extract
// ---------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  SynthOptions o;
  o.n_videos = cfg.count("videos");
  o.frames_per_video = cfg.count("frames");
  o.height = cfg.count("height");
  o.width = cfg.count("width");
  o.seed = cfg.seed();
  o.tag = cfg.str("tag");
  o.id_prefix = cfg.str("prefix");
  for (const auto& l : cfg.list("levels")) {
    const auto v = detail::parse_real(l);
    if (!v) throw UsageError("--levels: not a number: '" + l + "'");
    o.levels.push_back(*v);
  }
  if (o.n_videos == 0) throw UsageError("--videos must be >= 1");
  const fs::path dir = cfg.str("out");
  const auto m = write_synth_dataset(o, dir);
  write_run_config(cfg, dir);
  out << "wrote " << m.records.size() << " videos to " << (dir / "manifest.tsv").string() << "\n";
  return 0;
}

inline int cmd_extract(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto manifest = load_manifest(cfg.str("manifest"));
  const fs::path dir = cfg.str("out");
  const PatchConfig pc{cfg.count("patch_size"), cfg.count("stride")};
  const std::size_t frame_stride = cfg.count("frame_stride");
  const bool overwrite = cfg.flag("overwrite");
  const TinyExtractor extractor({ExtractorKind::kTinyBuiltin, cfg.count("dim"), cfg.seed()});
  fs::create_directories(dir);
  const std::size_t n = manifest.records.size();
  std::vector<std::string> lines(n), errors(n);
  parallel_for(n, [&](std::size_t i) {
    const auto& r = manifest.records[i];
    try {
      const auto frames = load_frames(manifest.resolve(r), frame_stride);
      const auto f = extract_features(frames, pc, extractor, r.id);
      save_features(f, dir / (r.id + ".bvqf"), overwrite);
      const auto bytes = encode_features(f);
      std::ostringstream os;
      os << r.id << "\tT=" << f.frames << "\tN=" << f.patches << "\td=" << f.dim << "\tchecksum=" << std::hex
         << fnv1a64(bytes);
      lines[i] = os.str();
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      errors[i] = r.id + ": " + e.what();
    }
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      err << "error: " << errors[i] << "\n";
      ++failed;
    } else {
      out << lines[i] << "\n";
    }
  }
  write_run_config(cfg, dir);
  out << "extracted " << (n - failed) << " of " << n << " videos\n";
  return failed ? static_cast<int>(ErrorKind::kData) : 0;
}

// ---------------------------------------------------------------------------
// pretrain / finetune / predict
// ---------------------------------------------------------------------------

inline FeatureSet require_features(const RunConfig& cfg, const std::string& manifest_key = "manifest",
                                   const std::string& dir_key = "features_dir") {
  return load_feature_set(cfg.str(manifest_key), cfg.str_or(dir_key));
}

inline void write_log(const TrainLog& log, const fs::path& dir) {
  write_file_atomic(dir / "train_log.jsonl", log.to_jsonl());
}

inline int cmd_pretrain(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const TrainConfig tc = train_config(cfg);
  const ModelConfig mc = model_config(cfg);
  const fs::path dir = cfg.str("out");
  const auto images = labeled_images(require_features(cfg));
  auto r = pretrain_spatial(images, mc.spatial, tc);
  fs::create_directories(dir);
  save_checkpoint(r.state, dir / "pretrain.ckpt");
  write_log(r.log, dir);
  write_run_config(cfg, dir);
  out << "pretrained on " << images.size() << " images, final loss "
      << format_double(r.log.epochs.back().train_loss) << "\n";
  return 0;
}

inline SpatialParams load_spatial_init(const std::string& path) {
  const auto s = load_checkpoint(path);
  return s.model.spatial;
}

inline int cmd_finetune(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  TrainConfig tc = train_config(cfg);
  const fs::path dir = cfg.str("out");
  fs::create_directories(dir);
  tc.checkpoint_every = static_cast<int>(cfg.integer("checkpoint_every"));
  tc.checkpoint_path = dir / "model.ckpt";
  const auto set = require_features(cfg);
  const auto tags = dataset_tags(set.manifest);
  const auto videos = labeled_videos(set, decide_calibration("auto", tags, tags));
  TrainingState state;
  TrainLog log;
  if (cfg.has("resume")) {
    state = load_checkpoint(cfg.str("resume"));
    if (state.stage != "finetune") throw UsageError("--resume: " + cfg.str("resume") + " is not a finetune checkpoint");
    if (state.epochs_done > tc.epochs) {
      throw UsageError("--resume: checkpoint already has " + std::to_string(state.epochs_done) +
                       " epochs, more than --epochs " + std::to_string(tc.epochs));
    }
    log = make_log("finetune", "resumed", state.model.config, tc);
    continue_finetune(state, videos, tc, tc.epochs - state.epochs_done, log);
  } else {
    std::optional<SpatialParams> init;
    if (cfg.has("init_spatial")) init = load_spatial_init(cfg.str("init_spatial"));
    auto r = finetune(videos, init ? &*init : nullptr, model_config(cfg), tc);
    state = std::move(r.state);
    log = std::move(r.log);
  }
  save_checkpoint(state, dir / "model.ckpt");
  write_log(log, dir);
  write_run_config(cfg, dir);
  out << "trained " << state.epochs_done << " epochs"
      << (log.epochs.empty() ? std::string() : ", final loss " + format_double(log.epochs.back().train_loss)) << "\n";
  return 0;
}

inline int cmd_predict(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto state = load_checkpoint(cfg.str("model"));
  const auto set = require_features(cfg);
  const fs::path dir = cfg.str("out");
  std::vector<double> scores(set.features.size());
  parallel_for(scores.size(), [&](std::size_t i) {
    try {
      scores[i] = predict_video(state.model, set.features[i]);
    } catch (const Error& e) {
      throw Error(e.kind(), "video " + set.features[i].video_id + ": " + e.what());
    }
  });
  std::string tsv = "id\tscore\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    tsv += set.manifest.records[i].id + "\t" + format_double(scores[i]) + "\n";
  }
  fs::create_directories(dir);
  write_file_atomic(dir / "scores.tsv", tsv);
  write_run_config(cfg, dir);
  out << "scored " << scores.size() << " videos\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / ablate
// ---------------------------------------------------------------------------

struct EvaluationResult {
  EvalReport report;
  std::vector<FoldData> folds;
  std::vector<std::vector<std::string>> test_ids;
  std::vector<Logistic4Params> curves;
  bool calibrated = false;
};

/// Pretrains the spatial module once for the run when a pretraining set is
/// configured, or loads it from --init-spatial.
inline std::optional<SpatialParams> evaluation_spatial_init(const RunConfig& cfg, const SpatialPoolConfig& spatial) {
  if (cfg.has("init_spatial")) return load_spatial_init(cfg.str("init_spatial"));
  if (!cfg.has("pretrain_manifest")) return std::nullopt;
  TrainConfig tc = train_config(cfg);
  if (cfg.has("pretrain_epochs")) tc.epochs = static_cast<int>(cfg.integer("pretrain_epochs"));
  tc.seed = derive_seed(tc.seed, "pretrain");
  tc.holdout_frac = 0.0;
  validate(tc);
  const auto images = labeled_images(require_features(cfg, "pretrain_manifest", "pretrain_features_dir"));
  return pretrain_spatial(images, spatial, tc).spatial;
}

inline EvaluationResult run_evaluation(const RunConfig& cfg, const ModelConfig& mc,
                                       const std::optional<SpatialParams>& init) {
  const TrainConfig base = train_config(cfg);
  const std::string mode = cfg.str("calibrate");
  const bool cross = cfg.has("train_set") || cfg.has("test_set");
  EvaluationResult res;
  std::vector<std::vector<LabeledVideo>> train_sets, test_sets;
  std::vector<std::uint64_t> seeds;
  std::string train_name, test_name;
  if (cross) {
    const auto train = load_feature_set(cfg.str("train_set"), cfg.str_or("features_dir"));
    const auto test = load_feature_set(cfg.str("test_set"), cfg.str_or("features_dir"));
    res.calibrated = decide_calibration(mode, dataset_tags(train.manifest), dataset_tags(test.manifest));
    train_sets.push_back(labeled_videos(train, res.calibrated));
    test_sets.push_back(labeled_videos(test, res.calibrated));
    seeds.push_back(derive_seed(base.seed, "cross"));
    train_name = train.manifest.name;
    test_name = test.manifest.name;
  } else {
    const auto set = require_features(cfg);
    const auto tags = dataset_tags(set.manifest);
    res.calibrated = decide_calibration(mode, tags, tags);
    const auto all = labeled_videos(set, res.calibrated);
    const auto plan = split_dataset(set.manifest, cfg.real("train_frac"), static_cast<int>(cfg.integer("k")),
                                    base.seed);
    auto pick = [&](const std::vector<std::string>& ids) {
      std::vector<LabeledVideo> v;
      for (const auto& id : ids) {
        for (const auto& lv : all) {
          if (lv.id == id) v.push_back(lv);
        }
      }
      return v;
    };
    for (std::size_t f = 0; f < plan.folds.size(); ++f) {
      train_sets.push_back(pick(plan.folds[f].train_ids));
      test_sets.push_back(pick(plan.folds[f].test_ids));
      seeds.push_back(derive_seed(base.seed, "fold", f));
    }
    train_name = test_name = set.manifest.name;
  }
  const std::size_t k = train_sets.size();
  res.folds.resize(k);
  res.test_ids.resize(k);
  parallel_for(k, [&](std::size_t f) {
    TrainConfig tc = base;
    tc.seed = seeds[f];
    const auto trained = finetune(train_sets[f], init ? &*init : nullptr, mc, tc);
    auto& fd = res.folds[f];
    fd.seed = seeds[f];
    for (const auto& v : test_sets[f]) {
      fd.pred.push_back(model_forward(trained.state.model, v.input));
      fd.mos.push_back(v.target);
      res.test_ids[f].push_back(v.id);
    }
  });
  res.report = eval_report(res.folds, train_name, test_name);
  for (const auto& fd : res.folds) {
    const auto acc = accuracy_metrics(fd.pred, fd.mos);
    res.curves.push_back(acc.params);
  }
  return res;
}

/// Scatter data: one row per test prediction plus sampled fitted curves.
inline std::string scatter_csv(const EvaluationResult& r) {
  std::ostringstream os;
  os << "fold,kind,id,x,y\n";
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fd = r.folds[f];
    for (std::size_t i = 0; i < fd.pred.size(); ++i) {
      os << f << ",point," << r.test_ids[f][i] << ',' << format_double(fd.pred[i]) << ','
         << format_double(fd.mos[i]) << '\n';
    }
    if (!r.report.folds[f].fitted || fd.pred.empty()) continue;
    const double lo = *std::min_element(fd.pred.begin(), fd.pred.end());
    const double hi = *std::max_element(fd.pred.begin(), fd.pred.end());
    constexpr int kSamples = 32;
    for (int s = 0; s < kSamples; ++s) {
      const double x = lo + (hi - lo) * s / (kSamples - 1);
      os << f << ",curve,," << format_double(x) << ',' << format_double(r.curves[f](x)) << '\n';
    }
  }
  return os.str();
}

inline void print_median(std::ostream& out, const EvalReport& r) {
  out << "median srocc " << csv_value(r.median_srocc) << " plcc " << csv_value(r.median_plcc) << " krcc "
      << csv_value(r.median_krcc) << " rmse " << csv_value(r.median_rmse) << "\n";
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const fs::path dir = cfg.str("out");
  const ModelConfig mc = model_config(cfg);
  if (!cfg.has("manifest") && !(cfg.has("train_set") && cfg.has("test_set"))) {
    throw UsageError("evaluate needs --manifest, or both --train-set and --test-set");
  }
  auto spatial = mc.spatial;
  std::optional<SpatialParams> init;
  if (cfg.has("pretrain_manifest") || cfg.has("init_spatial")) {
    // The pretraining dimension must match the videos; take it from the first feature file.
    const auto probe_set = cfg.has("train_set") ? cfg.str("train_set") : cfg.str("manifest");
    const auto probe = load_manifest(probe_set);
    const auto f = load_features(feature_path(probe, probe.records.front(), cfg.str_or("features_dir")));
    spatial.input_dim = f.dim;
    if (spatial.variant == SpatialVariant::kConcatenate) spatial.patches = f.patches;
    init = evaluation_spatial_init(cfg, spatial);
  }
  const auto res = run_evaluation(cfg, mc, init);
  fs::create_directories(dir);
  write_file_atomic(dir / "report.json", report_json(res.report));
  write_file_atomic(dir / "report.csv", report_csv(res.report));
  write_file_atomic(dir / "scatter.csv", scatter_csv(res));
  write_run_config(cfg, dir);
  out << res.report.folds.size() << " fold(s)" << (res.calibrated ? ", calibrated" : "") << "\n";
  print_median(out, res.report);
  return 0;
}

struct AblationCell {
  SpatialVariant spatial;
  TemporalVariant temporal;
  bool pretrained;
  EvalReport report;
};

inline std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::ostringstream os;
  os << "spatial,temporal,pretraining,srocc,plcc,krcc,rmse\n";
  for (const auto& c : cells) {
    os << display_name(c.spatial) << ',' << display_name(c.temporal) << ',' << (c.pretrained ? "with" : "without")
       << ',' << csv_value(c.report.median_srocc) << ',' << csv_value(c.report.median_plcc) << ','
       << csv_value(c.report.median_krcc) << ',' << csv_value(c.report.median_rmse) << '\n';
  }
  return os.str();
}

inline std::vector<AblationCell> run_ablation(const RunConfig& cfg) {
  std::vector<SpatialVariant> spatial;
  std::vector<TemporalVariant> temporal;
  for (const auto& s : cfg.list("spatial_variants")) spatial.push_back(parse_spatial_variant(s));
  for (const auto& t : cfg.list("temporal_variants")) temporal.push_back(parse_temporal_variant(t));
  if (spatial.empty() || temporal.empty()) throw UsageError("ablation grid needs at least one variant per axis");
  const std::string mode = cfg.str("pretrain");
  const bool have_pretrain = cfg.has("pretrain_manifest");
  std::vector<bool> columns;
  if (mode == "off") {
    columns = {false};
  } else if (mode == "on") {
    columns = {true};
  } else if (mode == "both") {
    columns = {false, true};
  } else if (mode == "auto") {
    columns = have_pretrain ? std::vector<bool>{false, true} : std::vector<bool>{false};
  } else {
    throw UsageError("--pretrain: expected on, off, both or auto, got '" + mode + "'");
  }
  if (std::count(columns.begin(), columns.end(), true) && !have_pretrain) {
    throw UsageError("--pretrain " + mode + " requires --pretrain-manifest");
  }
  if (cfg.has("init_spatial")) throw UsageError("ablate pretrains per spatial variant; --init-spatial is not accepted");
  const bool cross = cfg.has("train_set");
  const auto probe = load_manifest(cross ? cfg.str("train_set") : cfg.str("manifest"));
  const auto f0 = load_features(feature_path(probe, probe.records.front(), cfg.str_or("features_dir")));

  std::vector<AblationCell> cells;
  for (bool pre : columns) {
    for (auto s : spatial) {
      RunConfig cell_cfg = cfg;
      cell_cfg.values["spatial.variant"] = to_string(s);
      ModelConfig base = model_config(cell_cfg);
      std::optional<SpatialParams> init;
      if (pre) {
        auto sp = base.spatial;
        sp.input_dim = f0.dim;
        if (sp.variant == SpatialVariant::kConcatenate) sp.patches = f0.patches;
        init = evaluation_spatial_init(cell_cfg, sp);
      }
      for (auto t : temporal) {
        cell_cfg.values["temporal.variant"] = to_string(t);
        const ModelConfig mc = model_config(cell_cfg);
        cells.push_back({s, t, pre, run_evaluation(cell_cfg, mc, init).report});
      }
    }
  }
  return cells;
}

inline int cmd_ablate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const fs::path dir = cfg.str("out");
  if (!cfg.has("manifest") && !(cfg.has("train_set") && cfg.has("test_set"))) {
    throw UsageError("ablate needs --manifest, or both --train-set and --test-set");
  }
  const auto cells = run_ablation(cfg);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& c : cells) {
    j.push_back({{"spatial", display_name(c.spatial)},
                 {"temporal", display_name(c.temporal)},
                 {"pretraining", c.pretrained},
                 {"report", nlohmann::ordered_json::parse(report_json(c.report))}});
  }
  fs::create_directories(dir);
  write_file_atomic(dir / "ablation.csv", ablation_csv(cells));
  write_file_atomic(dir / "ablation.json", j.dump(2) + "\n");
  write_run_config(cfg, dir);
  out << ablation_csv(cells);
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck / benchmark
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  auto cases = default_gradcheck_matrix();
  if (cfg.flag("quick")) {
    std::erase_if(cases, [](const GradCheckCase& c) { return c.frames > 2 || c.patches > 2; });
  }
  const double eps = cfg.real("eps");
  const double tol = cfg.real("tolerance");
  if (!(eps > 0.0)) throw UsageError("--eps must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  const auto summary = run_gradcheck(cases, eps, cfg.seed(), tol, cfg.str_or("flip_sign"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream report;
  std::size_t failed = 0;
  for (const auto& r : summary.results) {
    if (!r.passed) {
      ++failed;
      report << "FAIL " << r.test_case.label() << " rel-err " << format_double(r.max_rel_err) << " at "
             << r.worst_param << "\n";
    }
  }
  report << (summary.passed ? "PASS" : "FAIL") << " " << cases.size() - failed << "/" << cases.size()
         << " cases, max rel-err " << format_double(summary.max_rel_err) << " (" << summary.worst << "), eps "
         << format_double(eps) << "\n";
  (summary.passed ? out : err) << report.str();
  out << "elapsed " << secs << " s\n";
  if (cfg.has("out")) {
    const fs::path dir = cfg.str("out");
    fs::create_directories(dir);
    write_file_atomic(dir / "gradcheck.txt", report.str());
    write_run_config(cfg, dir);
  }
  return summary.passed ? 0 : static_cast<int>(ErrorKind::kNumeric);
}

struct BenchmarkResult {
  std::vector<std::string> stages;
  std::vector<std::vector<double>> seconds;  // [repeat][stage]
  std::vector<double> totals;                // wall clock per repeat
  std::size_t patches = 0;

  static double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  double stage_median(std::size_t s) const {
    std::vector<double> v;
    for (const auto& r : seconds) v.push_back(r[s]);
    return median(v);
  }
};

inline BenchmarkResult run_benchmark(const RunConfig& cfg) {
  const std::size_t videos = cfg.count("videos");
  if (videos == 0) throw UsageError("benchmark needs at least one video (--videos >= 1)");
  const std::size_t repeats = cfg.count("repeats");
  if (repeats == 0) throw UsageError("--repeats must be >= 1");
  const std::size_t frames = cfg.count("frames"), h = cfg.count("height"), w = cfg.count("width");
  const PatchConfig pc{cfg.count("patch_size"), cfg.count("stride")};
  const std::uint64_t seed = cfg.seed();
  const TinyExtractor extractor({ExtractorKind::kTinyBuiltin, cfg.count("dim"), seed});
  std::vector<FrameSequence> clips;
  for (std::size_t v = 0; v < videos; ++v) {
    clips.push_back(synth_video(0.5, frames, h, w, derive_seed(seed, "benchmark-video", v)));
  }
  ModelConfig mc = model_config(cfg);
  mc.spatial.input_dim = extractor.dim();
  std::size_t n_patches = 0;
  {
    const auto grid = extract_patches(clips.front().frames.front(), pc);
    n_patches = grid.size();
  }
  if (mc.spatial.variant == SpatialVariant::kConcatenate) mc.spatial.patches = n_patches;
  const ModelParams model = init_params(mc, derive_seed(seed, "benchmark-model"));

  BenchmarkResult res;
  res.stages = {"patching", "features", "spatial", "temporal"};
  res.patches = n_patches;
  using clock = std::chrono::steady_clock;
  auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<double> s(4, 0.0);
    const auto t_total = clock::now();
    for (const auto& clip : clips) {
      auto t = clock::now();
      std::vector<PatchGrid> grids;
      for (const auto& f : clip.frames) grids.push_back(extract_patches(f, pc));
      s[0] += since(t);
      t = clock::now();
      FeatureTensor ft(clip.frames.size(), n_patches, extractor.dim());
      for (std::size_t f = 0; f < grids.size(); ++f) {
        for (std::size_t p = 0; p < grids[f].size(); ++p) {
          const auto v = extractor(grids[f].patches[p]);
          std::copy(v.begin(), v.end(), ft.data.begin() + static_cast<std::ptrdiff_t>((f * n_patches + p) * ft.dim));
        }
      }
      s[1] += since(t);
      t = clock::now();
      const VideoInput x = to_input(ft);
      nn::Sequence y;
      for (std::size_t f = 0; f < x.frames; ++f) {
        y.push_back(spatial_pool_forward(model.spatial, x.frame(f), x.patches, x.dim, nullptr));
      }
      s[2] += since(t);
      t = clock::now();
      const double q = temporal_pool_forward(model.temporal, model.head, y, nullptr);
      if (!std::isfinite(q)) throw NumericError("benchmark: non-finite score");
      s[3] += since(t);
    }
    res.totals.push_back(since(t_total));
    res.seconds.push_back(s);
  }
  return res;
}

inline int cmd_benchmark(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const auto res = run_benchmark(cfg);
  std::ostringstream table;
  table << "stage\tmedian_seconds\n";
  for (std::size_t s = 0; s < res.stages.size(); ++s) {
    table << res.stages[s] << '\t' << res.stage_median(s) << '\n';
  }
  table << "total\t" << BenchmarkResult::median(res.totals) << '\n';
  out << cfg.str("height") << "x" << cfg.str("width") << ", " << cfg.str("frames") << " frames, " << res.patches
      << " patches per frame, " << res.totals.size() << " repeats\n"
      << table.str();
  if (cfg.has("out")) {
    const fs::path dir = cfg.str("out");
    fs::create_directories(dir);
    write_file_atomic(dir / "benchmark.tsv", table.str());
    write_run_config(cfg, dir);
  }
  return 0;
}

// ---------------------------------------------------------------------------

inline int run_command(const std::string& command, const KeyValues& given, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(command, given);
  if (command == "synth") return cmd_synth(cfg, out, err);
  if (command == "extract") return cmd_extract(cfg, out, err);
  if (command == "pretrain") return cmd_pretrain(cfg, out, err);
  if (command == "finetune") return cmd_finetune(cfg, out, err);
  if (command == "predict") return cmd_predict(cfg, out, err);
  if (command == "evaluate") return cmd_evaluate(cfg, out, err);
  if (command == "ablate") return cmd_ablate(cfg, out, err);
  if (command == "gradcheck") return cmd_gradcheck(cfg, out, err);
  if (command == "benchmark") return cmd_benchmark(cfg, out, err);
  throw UsageError("unknown command '" + command + "'");
}

}  // namespace bvqa
