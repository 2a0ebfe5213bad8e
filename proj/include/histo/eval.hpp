#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "histo/aggregate.hpp"
#include "histo/csv.hpp"
#include "histo/error.hpp"
#include "histo/seed.hpp"

namespace histo {

// ---------------------------------------------------------------------------
// Manifest and split
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path path;
  ClassLabel label = ClassLabel::Normal;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::array<int, kNumClasses> class_counts() const {
    std::array<int, kNumClasses> n{};
    for (const auto& e : entries) ++n[index_of(e.label)];
    return n;
  }

  const ManifestEntry* find(const std::string& id) const {
    for (const auto& e : entries) {
      if (e.image_id == id) return &e;
    }
    return nullptr;
  }
};

/**
 * Reads `image_id,path,label`. Relative paths resolve against the manifest's
 * directory. Ids must be unique; with `check_files` every path must exist.
 */
inline DatasetManifest load_manifest(const std::filesystem::path& path, bool check_files = true) {
  const auto table = csv::read_file(path.string(), {"image_id", "path", "label"});
  DatasetManifest m;
  std::set<std::string> seen;
  const auto base = path.parent_path();
  for (const auto& [line, f] : table.rows) {
    const std::string where = table.where(line);
    if (f[0].empty()) throw Error(ErrorKind::MalformedFile, where + "empty image_id");
    if (!seen.insert(f[0]).second) {
      throw Error(ErrorKind::MalformedFile, where + "duplicate image_id '" + f[0] + "'");
    }
    ClassLabel label;
    try {
      label = parse_label(f[2]);
    } catch (const Error&) {
      throw Error(ErrorKind::MalformedFile, where + "unknown label '" + f[2] + "'");
    }
    std::filesystem::path p = f[1];
    if (p.is_relative()) p = base / p;
    if (check_files && !std::filesystem::exists(p)) {
      throw Error(ErrorKind::IoError, where + "image file not found: " + p.string());
    }
    m.entries.push_back({f[0], p, label});
  }
  return m;
}

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t test_count = 0;
  bool stratified = false;
  /// Both lists follow manifest order.
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

/**
 * Seeded train/test split. The unstratified mode samples test_count ids
 * uniformly without replacement; the stratified mode takes test_count / 4
 * from each class, the remainder going one each to the lowest class indices.
 */
inline SplitSpec split_dataset(const DatasetManifest& manifest, std::uint64_t seed,
                               std::size_t test_count, bool stratified = false) {
  const std::size_t n = manifest.entries.size();
  if (test_count >= n && !(n == 0 && test_count == 0)) {
    throw Error(ErrorKind::TestCountTooLarge, "test_count " + std::to_string(test_count) +
                                                  " must be smaller than the " +
                                                  std::to_string(n) + " manifest entries");
  }
  std::vector<bool> is_test(n, false);
  SplitMix64 rng(splitmix64_mix(seed ^ Fnv1a64().str("split").value()));
  if (!stratified) {
    const auto perm = seeded_permutation(n, rng);
    for (std::size_t i = 0; i < test_count; ++i) is_test[perm[i]] = true;
  } else {
    std::array<std::vector<std::size_t>, kNumClasses> members;
    for (std::size_t i = 0; i < n; ++i) members[index_of(manifest.entries[i].label)].push_back(i);
    for (int c = 0; c < kNumClasses; ++c) {
      const std::size_t want = test_count / kNumClasses +
                               (static_cast<std::size_t>(c) < test_count % kNumClasses ? 1 : 0);
      if (want > members[c].size()) {
        throw Error(ErrorKind::TestCountTooLarge,
                    "class " + std::string(to_string(label_at(c))) + " has " +
                        std::to_string(members[c].size()) + " images, stratified split needs " +
                        std::to_string(want));
      }
      const auto perm = seeded_permutation(members[c].size(), rng);
      for (std::size_t i = 0; i < want; ++i) is_test[members[c][perm[i]]] = true;
    }
  }
  SplitSpec s{seed, test_count, stratified, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    (is_test[i] ? s.test_ids : s.train_ids).push_back(manifest.entries[i].image_id);
  }
  return s;
}

inline void write_split(std::ostream& out, const DatasetManifest& manifest, const SplitSpec& split) {
  const std::set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  out << "image_id,split\n";
  for (const auto& e : manifest.entries) {
    out << e.image_id << ',' << (test.count(e.image_id) ? "test" : "train") << '\n';
  }
}

/// image_id -> true when in the test split.
inline std::map<std::string, bool> read_split_file(const std::string& path) {
  const auto table = csv::read_file(path, {"image_id", "split"});
  std::map<std::string, bool> out;
  for (const auto& [line, f] : table.rows) {
    if (f[1] != "train" && f[1] != "test") {
      throw Error(ErrorKind::MalformedFile, table.where(line) + "split must be train or test");
    }
    if (!out.emplace(f[0], f[1] == "test").second) {
      throw Error(ErrorKind::MalformedFile, table.where(line) + "duplicate image_id '" + f[0] + "'");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// counts[true][predicted].
struct ConfusionMatrix {
  std::array<std::array<long, kNumClasses>, kNumClasses> counts{};

  long total() const {
    long t = 0;
    for (const auto& row : counts) {
      for (long v : row) t += v;
    }
    return t;
  }
  long trace() const {
    long t = 0;
    for (int i = 0; i < kNumClasses; ++i) t += counts[i][i];
    return t;
  }
  long row_sum(int c) const {
    long t = 0;
    for (long v : counts[c]) t += v;
    return t;
  }
  void add(ClassLabel truth, ClassLabel predicted) { ++counts[index_of(truth)][index_of(predicted)]; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const ClassLabel> truth,
                                 std::span<const ClassLabel> predicted) {
  if (truth.size() != predicted.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(truth.size()) + " true labels vs " +
                                               std::to_string(predicted.size()) + " predictions");
  }
  if (truth.empty()) throw Error(ErrorKind::EmptyInput, "confusion over no items");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.total();
  if (total == 0) throw Error(ErrorKind::EmptyMatrix, "accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

/// Recall per class; nullopt for classes with no true examples.
inline std::array<std::optional<double>, kNumClasses> per_class_accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw Error(ErrorKind::EmptyMatrix, "per-class accuracy of an empty matrix");
  std::array<std::optional<double>, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    const long row = cm.row_sum(c);
    if (row > 0) out[c] = static_cast<double>(cm.counts[c][c]) / static_cast<double>(row);
  }
  return out;
}

/// Collapses a 4-class matrix through to_binary: counts[true][pred] with
/// index 0 = NonCarcinoma, 1 = Carcinoma.
inline std::array<std::array<long, 2>, 2> binary_confusion(const ConfusionMatrix& cm) {
  std::array<std::array<long, 2>, 2> out{};
  for (int t = 0; t < kNumClasses; ++t) {
    for (int p = 0; p < kNumClasses; ++p) {
      out[static_cast<int>(to_binary(label_at(t)))][static_cast<int>(to_binary(label_at(p)))] +=
          cm.counts[t][p];
    }
  }
  return out;
}

/// Accuracy of the binary task, obtained by mapping the 4-class decisions.
inline double binary_accuracy(const ConfusionMatrix& cm) {
  const auto b = binary_confusion(cm);
  const long total = b[0][0] + b[0][1] + b[1][0] + b[1][1];
  if (total == 0) throw Error(ErrorKind::EmptyMatrix, "binary accuracy of an empty matrix");
  return static_cast<double>(b[0][0] + b[1][1]) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct PatchwiseRow {
  std::string model;
  std::optional<ConfusionMatrix> train;
  std::optional<ConfusionMatrix> test;
};

struct ImagewiseRow {
  std::string model;
  ConfusionMatrix test;
};

struct ReportInput {
  std::vector<PatchwiseRow> patchwise;
  std::vector<ImagewiseRow> imagewise;
  /// Emit the carcinoma/non-carcinoma block.
  bool include_binary = true;
};

/// "87.5%": one decimal, rounded half away from zero.
inline std::string format_percent(double fraction) {
  char buf[32];
  const double tenths = std::round(fraction * 1000.0);
  std::snprintf(buf, sizeof buf, "%.1f%%", tenths / 10.0);
  return buf;
}

/// Exact variant for a count ratio, so 71/80 prints "88.8%" even though
/// 0.8875 is not representable in binary.
inline std::string format_percent(long num, long den) {
  if (den <= 0) throw Error(ErrorKind::InvalidArgument, "percentage of an empty count");
  const long tenths = (2000 * num + den) / (2 * den);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%ld.%ld%%", tenths / 10, tenths % 10);
  return buf;
}

inline std::string format_fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct Report {
  std::string text;
  std::string patchwise_csv;
  std::string imagewise_csv;
  std::string perclass_csv;
  std::string binary_csv;
};

namespace detail {

inline std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

inline std::string render_table(const std::string& title, const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream os;
  os << title << '\n';
  auto line = [&](const std::vector<std::string>& cells) {
    std::string l;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      l += (i ? "  " : "") + (i + 1 == cells.size() ? cells[i] : pad(cells[i], width[i]));
    }
    os << l << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (std::size_t i = 0; i < width.size(); ++i) total += width[i] + (i ? 2 : 0);
  os << std::string(total, '-') << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

}  // namespace detail

/**
 * Three accuracy tables (patchwise train/test, whole-image per model or
 * committee, per-class recall) plus the binary task, as aligned text and
 * as the four CSV blocks.
 */
inline Report report(const ReportInput& in) {
  Report r;
  std::ostringstream text;

  std::vector<std::vector<std::string>> rows;
  std::ostringstream csv;
  csv << "model,train_accuracy,test_accuracy,train_patches,test_patches\n";
  for (const auto& p : in.patchwise) {
    auto pct = [](const std::optional<ConfusionMatrix>& cm) {
      return cm && cm->total() > 0 ? format_percent(cm->trace(), cm->total()) : std::string("-");
    };
    auto frac = [](const std::optional<ConfusionMatrix>& cm) {
      return cm && cm->total() > 0 ? format_fraction(accuracy(*cm)) : std::string();
    };
    rows.push_back({p.model, pct(p.train), pct(p.test)});
    csv << p.model << ',' << frac(p.train) << ',' << frac(p.test) << ','
        << (p.train ? p.train->total() : 0) << ',' << (p.test ? p.test->total() : 0) << '\n';
  }
  text << detail::render_table("Patchwise classification accuracy",
                               {"Model", "Accuracy on training set", "Accuracy on test set"}, rows);
  r.patchwise_csv = csv.str();

  rows.clear();
  csv.str("");
  csv << "model,accuracy,accuracy_pct,correct,total\n";
  for (const auto& im : in.imagewise) {
    const double acc = accuracy(im.test);
    std::string pct = format_percent(im.test.trace(), im.test.total());
    rows.push_back({im.model, pct});
    pct.pop_back();
    csv << im.model << ',' << format_fraction(acc) << ',' << pct << ',' << im.test.trace() << ','
        << im.test.total() << '\n';
  }
  text << '\n'
       << detail::render_table("Whole image classification accuracy",
                               {"Model", "Accuracy on test set"}, rows);
  r.imagewise_csv = csv.str();

  rows.clear();
  csv.str("");
  csv << "model,normal,benign,insitu,invasive\n";
  for (const auto& im : in.imagewise) {
    const auto pc = per_class_accuracy(im.test);
    std::vector<std::string> row{im.model};
    csv << im.model;
    for (int c = 0; c < kNumClasses; ++c) {
      const auto& v = pc[c];
      row.push_back(v ? format_percent(im.test.counts[c][c], im.test.row_sum(c)) : "-");
      csv << ',' << (v ? format_fraction(*v) : "");
    }
    csv << '\n';
    rows.push_back(std::move(row));
  }
  text << '\n'
       << detail::render_table("Accuracy on individual classes",
                               {"Model", "Normal", "Benign", "InSitu", "Invasive"}, rows);
  r.perclass_csv = csv.str();

  rows.clear();
  csv.str("");
  csv << "model,accuracy,tn,fp,fn,tp\n";
  if (in.include_binary) {
    for (const auto& im : in.imagewise) {
      const auto b = binary_confusion(im.test);
      const double acc = binary_accuracy(im.test);
      rows.push_back({im.model, format_percent(b[0][0] + b[1][1], im.test.total())});
      csv << im.model << ',' << format_fraction(acc) << ',' << b[0][0] << ',' << b[0][1] << ','
          << b[1][0] << ',' << b[1][1] << '\n';
    }
    text << '\n'
         << detail::render_table("Carcinoma / non-carcinoma accuracy",
                                 {"Model", "Accuracy on test set"}, rows);
  }
  r.binary_csv = csv.str();
  r.text = text.str();
  return r;
}

}  // namespace histo
