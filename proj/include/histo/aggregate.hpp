#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histo/csv.hpp"
#include "histo/error.hpp"

namespace histo {

enum class ClassLabel : int { Normal = 0, Benign = 1, InSitu = 2, Invasive = 3 };

inline constexpr int kNumClasses = 4;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels = {
    ClassLabel::Normal, ClassLabel::Benign, ClassLabel::InSitu, ClassLabel::Invasive};

constexpr std::string_view to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::Normal: return "Normal";
    case ClassLabel::Benign: return "Benign";
    case ClassLabel::InSitu: return "InSitu";
    case ClassLabel::Invasive: return "Invasive";
  }
  return "?";
}

inline ClassLabel parse_label(std::string_view s) {
  for (ClassLabel c : kAllLabels) {
    if (to_string(c) == s) return c;
  }
  throw Error(ErrorKind::MalformedFile, "unknown class label '" + std::string(s) + "'");
}

constexpr int index_of(ClassLabel c) { return static_cast<int>(c); }
constexpr ClassLabel label_at(int i) { return static_cast<ClassLabel>(i); }

enum class BinaryLabel : int { NonCarcinoma = 0, Carcinoma = 1 };

constexpr std::string_view to_string(BinaryLabel b) {
  return b == BinaryLabel::Carcinoma ? "Carcinoma" : "NonCarcinoma";
}

/// Normal and Benign are non-carcinoma; InSitu and Invasive are carcinoma.
constexpr BinaryLabel to_binary(ClassLabel c) {
  return (c == ClassLabel::InSitu || c == ClassLabel::Invasive) ? BinaryLabel::Carcinoma
                                                                : BinaryLabel::NonCarcinoma;
}

using ClassProbs = std::array<double, kNumClasses>;

/// Index of the largest probability; ties go to the lowest index.
inline ClassLabel argmax_label(const ClassProbs& p) {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (p[i] > p[best]) best = i;
  }
  return label_at(best);
}

struct PredictionRecord {
  std::string image_id;
  int patch_index = 0;
  std::string model_id;
  std::optional<ClassProbs> probs;
  ClassLabel label = ClassLabel::Normal;

  static PredictionRecord from_probs(std::string image_id, int patch_index, std::string model_id,
                                     const ClassProbs& p) {
    return {std::move(image_id), patch_index, std::move(model_id), p, argmax_label(p)};
  }
};

// ---------------------------------------------------------------------------
// Voting
// ---------------------------------------------------------------------------

enum class TieBreak {
  LowestIndex,
  /// Among tied labels prefer the larger summed probability, then the lowest
  /// index. Needs probabilities on every record.
  ProbabilitySum,
};

inline std::array<int, kNumClasses> count_votes(std::span<const ClassLabel> labels) {
  std::array<int, kNumClasses> counts{};
  for (ClassLabel l : labels) ++counts[index_of(l)];
  return counts;
}

/// Most frequent label; ties go to the lowest class index.
inline ClassLabel majority_vote(std::span<const ClassLabel> labels) {
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "majority vote over no labels");
  const auto counts = count_votes(labels);
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (counts[i] > counts[best]) best = i;
  }
  return label_at(best);
}

namespace detail {

inline ClassLabel vote_records(std::span<const PredictionRecord* const> recs, TieBreak tie) {
  std::vector<ClassLabel> labels;
  labels.reserve(recs.size());
  for (const auto* r : recs) labels.push_back(r->label);
  if (tie == TieBreak::LowestIndex) return majority_vote(labels);
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "majority vote over no labels");

  const auto counts = count_votes(labels);
  const int top = *std::max_element(counts.begin(), counts.end());
  ClassProbs mass{};
  for (const auto* r : recs) {
    if (!r->probs) {
      throw Error(ErrorKind::InvalidArgument,
                  "probability tie-break needs probabilities (image " + r->image_id + ", patch " +
                      std::to_string(r->patch_index) + ")");
    }
    for (int c = 0; c < kNumClasses; ++c) mass[c] += (*r->probs)[c];
  }
  int best = -1;
  for (int c = 0; c < kNumClasses; ++c) {
    if (counts[c] != top) continue;
    if (best < 0 || mass[c] > mass[best]) best = c;
  }
  return label_at(best);
}

// Checks one model's records cover 0..P-1 exactly once.
inline void check_patch_coverage(std::span<const PredictionRecord* const> recs, int patch_count,
                                 const std::string& image_id, const std::string& model_id) {
  std::vector<int> seen(static_cast<std::size_t>(patch_count), 0);
  for (const auto* r : recs) {
    if (r->patch_index < 0 || r->patch_index >= patch_count) {
      throw Error(ErrorKind::InvalidArgument,
                  "image " + image_id + " model " + model_id + ": patch index " +
                      std::to_string(r->patch_index) + " outside 0.." +
                      std::to_string(patch_count - 1));
    }
    if (++seen[r->patch_index] > 1) {
      throw Error(ErrorKind::DuplicatePatch, "image " + image_id + " model " + model_id +
                                                 ": patch " + std::to_string(r->patch_index) +
                                                 " predicted more than once");
    }
  }
  std::string missing;
  for (int i = 0; i < patch_count; ++i) {
    if (!seen[i]) missing += (missing.empty() ? "" : ",") + std::to_string(i);
  }
  if (!missing.empty()) {
    throw Error(ErrorKind::MissingPatch,
                "image " + image_id + " model " + model_id + ": missing patch " + missing);
  }
}

inline std::vector<const PredictionRecord*> pointers(std::span<const PredictionRecord> records) {
  std::vector<const PredictionRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

}  // namespace detail

/// Majority vote over one model's patch predictions for one image, which
/// must cover patch indices 0..patch_count-1 exactly once.
inline ClassLabel image_prediction(std::span<const PredictionRecord> records, int patch_count = 12,
                                   TieBreak tie = TieBreak::LowestIndex) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no prediction records");
  const auto ptrs = detail::pointers(records);
  detail::check_patch_coverage(ptrs, patch_count, records[0].image_id, records[0].model_id);
  return detail::vote_records(ptrs, tie);
}

enum class CommitteeMode {
  /// One vote over all M*P patch labels.
  Flat,
  /// Each model votes its image label, then the M labels are voted.
  PerModel,
};

/// Committee decision for one image from the records of M models.
inline ClassLabel committee_prediction(std::span<const PredictionRecord> records,
                                       int patch_count = 12,
                                       CommitteeMode mode = CommitteeMode::Flat,
                                       TieBreak tie = TieBreak::LowestIndex) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no prediction records");
  std::map<std::string, std::vector<const PredictionRecord*>> by_model;
  for (const auto& r : records) by_model[r.model_id].push_back(&r);

  std::size_t expected = 0;
  for (const auto& [model, recs] : by_model) {
    if (expected == 0) expected = recs.size();
    if (recs.size() != expected) {
      throw Error(ErrorKind::InconsistentPatchCount,
                  "image " + records[0].image_id + ": model " + model + " has " +
                      std::to_string(recs.size()) + " records, expected " +
                      std::to_string(expected));
    }
  }
  for (const auto& [model, recs] : by_model) {
    detail::check_patch_coverage(recs, patch_count, records[0].image_id, model);
  }

  if (mode == CommitteeMode::Flat) return detail::vote_records(detail::pointers(records), tie);

  std::vector<ClassLabel> per_model;
  for (const auto& [model, recs] : by_model) per_model.push_back(detail::vote_records(recs, tie));
  return majority_vote(per_model);
}

// ---------------------------------------------------------------------------
// Prediction file
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& prediction_header() {
  static const std::vector<std::string> h = {"image_id", "patch_index", "model_id", "p_normal",
                                             "p_benign", "p_insitu",    "p_invasive", "label"};
  return h;
}

inline void write_predictions(std::ostream& out, std::span<const PredictionRecord> records) {
  const auto& h = prediction_header();
  for (std::size_t i = 0; i < h.size(); ++i) out << (i ? "," : "") << h[i];
  out << '\n';
  char buf[32];
  for (const auto& r : records) {
    out << r.image_id << ',' << r.patch_index << ',' << r.model_id << ',';
    for (int c = 0; c < kNumClasses; ++c) {
      if (r.probs) {
        std::snprintf(buf, sizeof buf, "%.17g", (*r.probs)[c]);
        out << buf;
      }
      out << ',';
    }
    out << to_string(r.label) << '\n';
  }
}

/// Reads a prediction file. Probability columns must be all present or all
/// empty on a row; when present they must be finite, in [0,1], sum to 1
/// within 1e-6 and agree with the label.
inline std::vector<PredictionRecord> read_predictions(std::istream& in, const std::string& source) {
  const auto table = csv::read(in, source, prediction_header());
  std::vector<PredictionRecord> out;
  out.reserve(table.rows.size());
  for (const auto& [line, f] : table.rows) {
    const std::string where = table.where(line);
    PredictionRecord r;
    r.image_id = f[0];
    r.model_id = f[2];
    if (r.image_id.empty()) throw Error(ErrorKind::MalformedFile, where + "empty image_id");
    try {
      std::size_t used = 0;
      r.patch_index = std::stoi(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw Error(ErrorKind::MalformedFile, where + "invalid patch_index '" + f[1] + "'");
    }
    try {
      r.label = parse_label(f[7]);
    } catch (const Error&) {
      throw Error(ErrorKind::MalformedFile, where + "unknown label '" + f[7] + "'");
    }
    const int present = static_cast<int>(std::count_if(
        f.begin() + 3, f.begin() + 7, [](const std::string& s) { return !s.empty(); }));
    if (present == kNumClasses) {
      ClassProbs p{};
      double sum = 0.0;
      for (int c = 0; c < kNumClasses; ++c) {
        try {
          p[c] = std::stod(f[3 + c]);
        } catch (const std::exception&) {
          throw Error(ErrorKind::MalformedFile, where + "invalid probability '" + f[3 + c] + "'");
        }
        if (!std::isfinite(p[c]) || p[c] < 0.0 || p[c] > 1.0) {
          throw Error(ErrorKind::MalformedFile, where + "probability outside [0,1]");
        }
        sum += p[c];
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw Error(ErrorKind::MalformedFile, where + "probabilities do not sum to 1");
      }
      if (argmax_label(p) != r.label) {
        throw Error(ErrorKind::MalformedFile, where + "label disagrees with probabilities");
      }
      r.probs = p;
    } else if (present != 0) {
      throw Error(ErrorKind::MalformedFile, where + "probabilities must be all present or all empty");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<PredictionRecord> read_predictions_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  return read_predictions(in, path);
}

// ---------------------------------------------------------------------------
// Image-level decisions
// ---------------------------------------------------------------------------

struct ImageDecision {
  std::string image_id;
  std::string model_id;
  ClassLabel label = ClassLabel::Normal;
};

struct VoteOptions {
  int patch_count = 12;
  CommitteeMode mode = CommitteeMode::Flat;
  TieBreak tie = TieBreak::LowestIndex;
  /// model_id written for committee decisions (ignored for one model).
  std::string committee_id = "committee";
};

/**
 * Groups records by image and votes each. With one distinct model_id the
 * decision is image_prediction; with several it is committee_prediction.
 * Output is sorted by image_id.
 */
inline std::vector<ImageDecision> vote_images(std::span<const PredictionRecord> records,
                                              const VoteOptions& opt = {}) {
  std::map<std::string, std::vector<PredictionRecord>> by_image;
  std::map<std::string, int> models;
  for (const auto& r : records) {
    by_image[r.image_id].push_back(r);
    models[r.model_id] = 0;
  }
  std::vector<ImageDecision> out;
  for (const auto& [image, recs] : by_image) {
    if (models.size() == 1) {
      out.push_back({image, models.begin()->first, image_prediction(recs, opt.patch_count, opt.tie)});
    } else {
      std::map<std::string, int> present;
      for (const auto& r : recs) present[r.model_id] = 0;
      if (present.size() != models.size()) {
        for (const auto& [m, _] : models) {
          if (!present.count(m)) {
            throw Error(ErrorKind::MissingPatch, "image " + image + " model " + m +
                                                     ": no patch predictions");
          }
        }
      }
      out.push_back({image, opt.committee_id,
                     committee_prediction(recs, opt.patch_count, opt.mode, opt.tie)});
    }
  }
  return out;
}

inline void write_decisions(std::ostream& out, std::span<const ImageDecision> decisions) {
  out << "image_id,model_id,label\n";
  for (const auto& d : decisions) {
    out << d.image_id << ',' << d.model_id << ',' << to_string(d.label) << '\n';
  }
}

inline std::vector<ImageDecision> read_decisions_file(const std::string& path) {
  const auto table = csv::read_file(path, {"image_id", "model_id", "label"});
  std::vector<ImageDecision> out;
  for (const auto& [line, f] : table.rows) {
    try {
      out.push_back({f[0], f[1], parse_label(f[2])});
    } catch (const Error&) {
      throw Error(ErrorKind::MalformedFile, table.where(line) + "unknown label '" + f[2] + "'");
    }
  }
  return out;
}

}  // namespace histo
