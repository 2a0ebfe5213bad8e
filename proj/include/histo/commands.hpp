#pragma once

// Pipeline commands behind the `histo` CLI. Each function takes resolved
// options, writes its artifacts plus run_metadata.txt, and throws
// histo::Error on data or validation problems.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "histo/aggregate.hpp"
#include "histo/augment.hpp"
#include "histo/csv.hpp"
#include "histo/error.hpp"
#include "histo/eval.hpp"
#include "histo/image_io.hpp"
#include "histo/metadata.hpp"
#include "histo/patching.hpp"
#include "histo/refnet.hpp"

namespace histo::cmd {

namespace fs = std::filesystem;

inline bool verbose() {
  const char* v = std::getenv("HISTO_VERBOSE");
  return v && *v && std::string(v) != "0";
}

// ---------------------------------------------------------------------------
// Patch index: file,image_id,grid_index,label (label may be empty)
// ---------------------------------------------------------------------------

struct IndexEntry {
  fs::path file;
  std::string image_id;
  int grid_index = 0;
  std::optional<ClassLabel> label;
};

inline const std::vector<std::string>& index_header() {
  static const std::vector<std::string> h = {"file", "image_id", "grid_index", "label"};
  return h;
}

inline void write_index(const fs::path& path, const std::vector<IndexEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "file,image_id,grid_index,label\n";
  for (const auto& e : entries) {
    out << e.file.filename().string() << ',' << e.image_id << ',' << e.grid_index << ','
        << (e.label ? std::string(to_string(*e.label)) : std::string()) << '\n';
  }
}

/// Reads an index; file names resolve against the index directory.
inline std::vector<IndexEntry> read_index(const fs::path& path) {
  const auto table = csv::read_file(path.string(), index_header());
  std::vector<IndexEntry> out;
  for (const auto& [line, f] : table.rows) {
    IndexEntry e;
    e.file = path.parent_path() / f[0];
    e.image_id = f[1];
    try {
      e.grid_index = std::stoi(f[2]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::MalformedFile, table.where(line) + "invalid grid_index '" + f[2] + "'");
    }
    if (!f[3].empty()) {
      try {
        e.label = parse_label(f[3]);
      } catch (const Error&) {
        throw Error(ErrorKind::MalformedFile, table.where(line) + "unknown label '" + f[3] + "'");
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// A patch directory's entries: its index.csv when present, otherwise every
/// .ppm/.png whose stem parses as `<image_id>_p<grid_index>`, sorted by name.
inline std::vector<IndexEntry> scan_patch_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::IoError, "not a directory: " + dir.string());
  if (fs::exists(dir / "index.csv")) return read_index(dir / "index.csv");
  std::vector<fs::path> files;
  for (const auto& de : fs::directory_iterator(dir)) {
    const auto ext = de.path().extension();
    if (de.is_regular_file() && (ext == ".ppm" || ext == ".png")) files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<IndexEntry> out;
  for (const auto& f : files) {
    const auto name = parse_patch_stem(f.stem().string());
    if (!name) throw Error(ErrorKind::MalformedFile, "patch file name not <id>_p<n>: " + f.string());
    out.push_back({f, name->image_id, name->grid_index, std::nullopt});
  }
  return out;
}

inline Patch load_patch(const IndexEntry& e) {
  return Patch{e.image_id, e.grid_index, read_image(e.file), 0, 0, 0};
}

// ---------------------------------------------------------------------------
// patch
// ---------------------------------------------------------------------------

struct PatchOptions {
  fs::path manifest;
  GridSpec grid;
  fs::path out_dir;
  ImageFormat format = ImageFormat::Ppm;
  std::string command_line;
};

/// Returns the number of patch files written.
inline std::size_t cmd_patch(const PatchOptions& o) {
  const DatasetManifest manifest = load_manifest(o.manifest);
  fs::create_directories(o.out_dir);
  std::vector<IndexEntry> index;
  for (const auto& e : manifest.entries) {
    const RasterImage img = read_image(e.path);
    for (const auto& p : extract_patches(img, o.grid, e.image_id)) {
      const fs::path file = o.out_dir / (patch_stem(p.image_id, p.grid_index) + "." + extension(o.format));
      write_file(file, encode_image(p.pixels, o.format));
      index.push_back({file, p.image_id, p.grid_index, e.label});
    }
    if (verbose()) std::cerr << "patched " << e.image_id << '\n';
  }
  write_index(o.out_dir / "index.csv", index);
  RunMetadata meta{o.command_line, 0, file_digest(o.manifest),
                   {{"grid_cols", std::to_string(o.grid.cols)},
                    {"grid_rows", std::to_string(o.grid.rows)},
                    {"format", extension(o.format)}}};
  meta.write(o.out_dir);
  return index.size();
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

struct AugmentOptions {
  fs::path patch_dir;
  std::optional<fs::path> config;
  bool stochastic = true;
  bool expand8 = false;
  std::uint64_t seed = 0;
  int epoch = 0;
  unsigned workers = 1;
  fs::path out_dir;
  std::optional<fs::path> draw_log;
  ImageFormat format = ImageFormat::Ppm;
  std::string command_line;
};

/// Output names: `<id>_p<n>[_r<variant>]_e<epoch>.<ext>`. Returns the number
/// of patches written.
inline std::size_t cmd_augment(const AugmentOptions& o) {
  AugmentConfig cfg = o.config ? load_augment_config(o.config->string()) : AugmentConfig{};
  if (!o.stochastic) {
    const AugmentConfig off = AugmentConfig::disabled();
    cfg.enable_elastic = off.enable_elastic;
    cfg.enable_brightness = off.enable_brightness;
    cfg.enable_blur = off.enable_blur;
    cfg.enable_noise = off.enable_noise;
    cfg.enable_resample = off.enable_resample;
  }
  const auto entries = scan_patch_dir(o.patch_dir);
  std::vector<Patch> patches;
  std::vector<std::optional<ClassLabel>> labels;
  for (const auto& e : entries) {
    Patch p = load_patch(e);
    if (o.expand8) {
      for (auto& q : expand_eight(p)) {
        patches.push_back(std::move(q));
        labels.push_back(e.label);
      }
    } else {
      patches.push_back(std::move(p));
      labels.push_back(e.label);
    }
  }

  std::vector<DrawRecord> draws;
  const auto out = augment_batch(patches, cfg, o.seed, o.epoch, o.workers,
                                 o.draw_log ? &draws : nullptr);

  fs::create_directories(o.out_dir);
  std::vector<IndexEntry> index;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Patch& p = out[i];
    std::string stem = patch_stem(p.image_id, p.grid_index);
    if (o.expand8) stem += "_r" + std::to_string(p.variant);
    stem += "_e" + std::to_string(o.epoch);
    const fs::path file = o.out_dir / (stem + "." + extension(o.format));
    write_file(file, encode_image(p.pixels, o.format));
    index.push_back({file, p.image_id, p.grid_index, labels[i]});
  }
  write_index(o.out_dir / "index.csv", index);

  if (o.draw_log) {
    std::ofstream log(*o.draw_log, std::ios::trunc);
    if (!log) throw Error(ErrorKind::IoError, "cannot write " + o.draw_log->string());
    log << "image_id,grid_index,variant,epoch,stage,params\n";
    for (const auto& d : draws) log << d.to_line() << '\n';
  }

  auto config = cfg.to_pairs();
  config.emplace_back("epoch", std::to_string(o.epoch));
  config.emplace_back("expand8", o.expand8 ? "true" : "false");
  const fs::path index_in = o.patch_dir / "index.csv";
  RunMetadata meta{o.command_line, o.seed, fs::exists(index_in) ? file_digest(index_in) : "", config};
  meta.write(o.out_dir);
  return out.size();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
  fs::path index;
  refnet::CnnArchitecture arch;
  refnet::TrainConfig train;
  std::optional<fs::path> augment_config;
  /// Train only on images listed as train in this split file.
  std::optional<fs::path> split;
  /// Copy of the metrics CSV.
  std::optional<fs::path> metrics_file;
  fs::path checkpoint;
  std::string command_line;
};

inline std::vector<refnet::LabeledPatch> load_labeled(const std::vector<IndexEntry>& entries) {
  std::vector<refnet::LabeledPatch> out;
  for (const auto& e : entries) {
    if (!e.label) {
      throw Error(ErrorKind::MalformedFile, "patch " + e.file.string() + " has no label in the index");
    }
    out.push_back({load_patch(e), *e.label});
  }
  return out;
}

/// Writes `epoch,loss,patch_acc` lines to `metrics` and the checkpoint file.
inline refnet::TrainResult cmd_train(const TrainOptions& o, std::ostream& metrics) {
  auto entries = read_index(o.index);
  if (o.split) {
    const auto split = read_split_file(o.split->string());
    std::erase_if(entries, [&](const IndexEntry& e) {
      const auto it = split.find(e.image_id);
      return it == split.end() || it->second;
    });
  }
  const auto data = load_labeled(entries);
  std::optional<AugmentConfig> aug;
  if (o.augment_config) aug = load_augment_config(o.augment_config->string());

  const auto init = refnet::init_params(o.arch, o.train.seed);
  std::string csv_text = "epoch,loss,patch_acc\n";
  metrics << csv_text;
  char buf[96];
  auto result = refnet::train(init, data, o.train, aug, [&](const refnet::EpochMetrics& m) {
    std::snprintf(buf, sizeof buf, "%d,%.9f,%.6f\n", m.epoch, m.loss, m.patch_acc);
    metrics << buf << std::flush;
    csv_text += buf;
    return true;
  });
  if (o.metrics_file) {
    std::ofstream f(*o.metrics_file, std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + o.metrics_file->string());
    f << csv_text;
  }

  if (o.checkpoint.has_parent_path()) fs::create_directories(o.checkpoint.parent_path());
  write_file(o.checkpoint, refnet::encode_checkpoint(result.params));

  std::vector<std::pair<std::string, std::string>> config = {
      {"input_side", std::to_string(o.arch.input_side)},
      {"c1", std::to_string(o.arch.c1)},
      {"c2", std::to_string(o.arch.c2)},
      {"c3", std::to_string(o.arch.c3)},
      {"fc_units", std::to_string(o.arch.fc_units)},
      {"learning_rate", std::to_string(o.train.learning_rate)},
      {"momentum", std::to_string(o.train.momentum)},
      {"batch_size", std::to_string(o.train.batch_size)},
      {"epochs", std::to_string(o.train.epochs)},
      {"padding", "valid"},
      {"stride", "1"},
      {"activation", "relu"},
      {"init", "he_normal(output_scale=0.1)"},
      {"optimizer", "sgd_momentum"}};
  if (aug) {
    for (auto& kv : aug->to_pairs()) config.emplace_back("augment." + kv.first, kv.second);
  }
  RunMetadata meta{o.command_line, o.train.seed, file_digest(o.index), config};
  meta.write_beside(o.checkpoint);
  return result;
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

struct PredictOptions {
  fs::path checkpoint;
  fs::path patch_dir;
  std::string model_id = "refnet";
  fs::path out;
  std::string command_line;
};

inline std::vector<PredictionRecord> cmd_predict(const PredictOptions& o) {
  const auto params = refnet::decode_checkpoint(read_file(o.checkpoint));
  const auto entries = scan_patch_dir(o.patch_dir);
  std::vector<PredictionRecord> records;
  for (const auto& e : entries) {
    records.push_back(refnet::predict_patch(params, load_patch(e), params.arch.input_side, o.model_id));
  }
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + o.out.string());
  write_predictions(out, records);
  RunMetadata meta{o.command_line, params.seed, file_digest(o.checkpoint), {{"model_id", o.model_id}}};
  meta.write_beside(o.out);
  return records;
}

// ---------------------------------------------------------------------------
// vote
// ---------------------------------------------------------------------------

struct VoteCommandOptions {
  std::vector<fs::path> models;
  VoteOptions vote;
  fs::path out;
  std::string command_line;
};

inline std::vector<PredictionRecord> read_all_predictions(const std::vector<fs::path>& files) {
  std::vector<PredictionRecord> all;
  for (const auto& f : files) {
    auto recs = read_predictions_file(f.string());
    all.insert(all.end(), recs.begin(), recs.end());
  }
  return all;
}

inline std::vector<ImageDecision> cmd_vote(const VoteCommandOptions& o) {
  if (o.models.empty()) throw Error(ErrorKind::InvalidArgument, "at least one --model file is required");
  const auto decisions = vote_images(read_all_predictions(o.models), o.vote);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + o.out.string());
  write_decisions(out, decisions);

  std::string digests;
  for (const auto& m : o.models) digests += (digests.empty() ? "" : ";") + file_digest(m);
  RunMetadata meta{o.command_line, 0, digests,
                   {{"patch_count", std::to_string(o.vote.patch_count)},
                    {"mode", o.vote.mode == CommitteeMode::Flat ? "flat" : "per-model"},
                    {"tie_break", o.vote.tie == TieBreak::LowestIndex ? "lowest" : "prob-sum"}}};
  meta.write_beside(o.out);
  return decisions;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  fs::path manifest;
  std::optional<fs::path> split;
  std::vector<fs::path> predictions;
  std::vector<fs::path> decisions;
  /// Add a committee row when several prediction files are given.
  bool committee = false;
  VoteOptions vote;
  fs::path out_dir;
  std::string command_line;
};

/**
 * Builds the report. Patch predictions give patchwise rows (split into
 * train/test when a split file is given) and are voted into whole-image
 * rows; decision files add whole-image rows directly. Whole-image rows only
 * count test images when a split is given.
 */
inline Report cmd_eval(const EvalOptions& o) {
  const DatasetManifest manifest = load_manifest(o.manifest, false);
  std::map<std::string, ClassLabel> truth;
  for (const auto& e : manifest.entries) truth[e.image_id] = e.label;
  std::optional<std::map<std::string, bool>> split;
  if (o.split) split = read_split_file(o.split->string());

  auto label_of = [&](const std::string& id) {
    const auto it = truth.find(id);
    if (it == truth.end()) throw Error(ErrorKind::MalformedFile, "image " + id + " not in manifest");
    return it->second;
  };
  auto is_test = [&](const std::string& id) {
    if (!split) return true;
    const auto it = split->find(id);
    if (it == split->end()) throw Error(ErrorKind::MalformedFile, "image " + id + " not in split file");
    return it->second;
  };

  ReportInput in;
  std::vector<PredictionRecord> pooled;
  std::vector<std::string> model_order;
  for (const auto& file : o.predictions) {
    const auto recs = read_predictions_file(file.string());
    std::map<std::string, std::vector<PredictionRecord>> by_model;
    for (const auto& r : recs) {
      if (!by_model.count(r.model_id)) model_order.push_back(r.model_id);
      by_model[r.model_id].push_back(r);
    }
    for (const auto& [model, mrecs] : by_model) {
      PatchwiseRow row{model, std::nullopt, std::nullopt};
      ConfusionMatrix train_cm, test_cm;
      for (const auto& r : mrecs) (is_test(r.image_id) ? test_cm : train_cm).add(label_of(r.image_id), r.label);
      if (train_cm.total() > 0) row.train = train_cm;
      if (test_cm.total() > 0) row.test = test_cm;
      in.patchwise.push_back(row);

      std::vector<PredictionRecord> test_recs;
      for (const auto& r : mrecs) {
        if (is_test(r.image_id)) test_recs.push_back(r);
      }
      ConfusionMatrix img_cm;
      VoteOptions single = o.vote;
      for (const auto& d : vote_images(test_recs, single)) img_cm.add(label_of(d.image_id), d.label);
      if (img_cm.total() > 0) in.imagewise.push_back({model, img_cm});
    }
    pooled.insert(pooled.end(), recs.begin(), recs.end());
  }
  if (o.committee && model_order.size() > 1) {
    std::vector<PredictionRecord> test_recs;
    for (const auto& r : pooled) {
      if (is_test(r.image_id)) test_recs.push_back(r);
    }
    ConfusionMatrix cm;
    for (const auto& d : vote_images(test_recs, o.vote)) cm.add(label_of(d.image_id), d.label);
    if (cm.total() > 0) in.imagewise.push_back({o.vote.committee_id, cm});
  }
  for (const auto& file : o.decisions) {
    std::map<std::string, ConfusionMatrix> by_model;
    std::vector<std::string> order;
    for (const auto& d : read_decisions_file(file.string())) {
      if (!is_test(d.image_id)) continue;
      if (!by_model.count(d.model_id)) order.push_back(d.model_id);
      by_model[d.model_id].add(label_of(d.image_id), d.label);
    }
    for (const auto& m : order) in.imagewise.push_back({m, by_model[m]});
  }

  const Report rep = report(in);
  fs::create_directories(o.out_dir);
  auto dump = [&](const char* name, const std::string& body) {
    std::ofstream f(o.out_dir / name, std::ios::trunc | std::ios::binary);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + (o.out_dir / name).string());
    f << body;
  };
  dump("patchwise.csv", rep.patchwise_csv);
  dump("imagewise.csv", rep.imagewise_csv);
  dump("perclass.csv", rep.perclass_csv);
  dump("binary.csv", rep.binary_csv);
  dump("report.txt", rep.text);

  std::string digests = file_digest(o.manifest);
  for (const auto& f : o.predictions) digests += ";" + file_digest(f);
  for (const auto& f : o.decisions) digests += ";" + file_digest(f);
  RunMetadata meta{o.command_line, 0, digests,
                   {{"committee", o.committee ? "true" : "false"},
                    {"patch_count", std::to_string(o.vote.patch_count)}}};
  meta.write(o.out_dir);
  return rep;
}

// ---------------------------------------------------------------------------
// split / filters
// ---------------------------------------------------------------------------

struct SplitOptions {
  fs::path manifest;
  std::uint64_t seed = 0;
  std::size_t test_count = 80;
  bool stratified = false;
  fs::path out;
  std::string command_line;
};

inline SplitSpec cmd_split(const SplitOptions& o) {
  const DatasetManifest manifest = load_manifest(o.manifest, false);
  const auto counts = manifest.class_counts();
  if (verbose()) {
    std::cerr << "manifest classes:";
    for (int c = 0; c < kNumClasses; ++c) std::cerr << ' ' << to_string(label_at(c)) << '=' << counts[c];
    std::cerr << '\n';
  }
  const SplitSpec s = split_dataset(manifest, o.seed, o.test_count, o.stratified);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + o.out.string());
  write_split(out, manifest, s);
  RunMetadata meta{o.command_line, o.seed, file_digest(o.manifest),
                   {{"test_count", std::to_string(o.test_count)},
                    {"stratified", o.stratified ? "true" : "false"}}};
  meta.write_beside(o.out);
  return s;
}

inline void cmd_filters(const fs::path& checkpoint, const fs::path& out) {
  const auto params = refnet::decode_checkpoint(read_file(checkpoint));
  write_image(out, refnet::export_first_layer_filters(params));
}

}  // namespace histo::cmd
