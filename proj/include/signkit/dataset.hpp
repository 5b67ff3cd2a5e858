#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/features.hpp"
#include "signkit/io_util.hpp"
#include "signkit/pose.hpp"
#include "signkit/rng.hpp"
#include "signkit/tensor.hpp"
#include "signkit/threading.hpp"

namespace signkit {

// One labeled pose sequence; signer_id enables person-independent splits.
struct LabeledSample {
  std::string sample_id;
  PoseSequence pose;
  int label = 0;
  std::string signer_id;
};

struct ManifestRow {
  std::string sample_id;
  std::string file_path;  // relative to the manifest's directory
  int class_id = 0;
  std::string signer_id;
};

inline constexpr const char* kManifestHeader =
    "sample_id,file_path,class_id,signer_id";

inline void write_manifest(const std::string& path,
                           const std::vector<ManifestRow>& rows) {
  std::ostringstream out;
  out << kManifestHeader << "\n";
  std::set<std::string> seen;
  for (const auto& r : rows) {
    if (!seen.insert(r.sample_id).second)
      throw InvariantViolation("duplicate sample_id " + r.sample_id);
    out << r.sample_id << "," << r.file_path << "," << r.class_id << ","
        << r.signer_id << "\n";
  }
  write_file_text(path, out.str());
}

inline std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::istringstream in(read_file_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw IoError("manifest " + path + " missing header '" +
                  kManifestHeader + "'");
  std::vector<ManifestRow> rows;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4)
      throw IoError("manifest row with " + std::to_string(f.size()) +
                    " fields: " + line);
    ManifestRow r{f[0], f[1], static_cast<int>(parse_long(f[2])), f[3]};
    if (!seen.insert(r.sample_id).second)
      throw InvariantViolation("duplicate sample_id " + r.sample_id);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Loads every pose file referenced by a manifest; paths resolve relative to
// the manifest's directory.
inline std::vector<LabeledSample> load_dataset(const std::string& manifest_path) {
  const auto rows = read_manifest(manifest_path);
  const auto base = std::filesystem::path(manifest_path).parent_path();
  std::vector<LabeledSample> samples(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& r = rows[i];
    const auto file = base / r.file_path;
    if (!std::filesystem::exists(file))
      throw IoError("manifest entry " + r.sample_id + ": missing file " +
                    file.string());
    samples[i] = LabeledSample{r.sample_id,
                               parse_pose_file(read_file_bytes(file.string())),
                               r.class_id, r.signer_id};
  });
  return samples;
}

// Writes samples as <sample_id>.sps1 plus manifest.csv under dir; returns
// the manifest path.
inline std::string save_dataset(const std::string& dir,
                                const std::vector<LabeledSample>& samples) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestRow> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    const std::string file = s.sample_id + ".sps1";
    write_file_bytes((std::filesystem::path(dir) / file).string(),
                     serialize_pose(s.pose));
    rows.push_back({s.sample_id, file, s.label, s.signer_id});
  }
  const std::string manifest =
      (std::filesystem::path(dir) / "manifest.csv").string();
  write_manifest(manifest, rows);
  return manifest;
}

// ------------------------------------------------------------- splitting

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

// Splits by whole signers so no signer appears on both sides; sizes come as
// close to train_fraction as signer granularity permits, with both sides
// kept nonempty.
inline SplitIndices signer_disjoint_split(
    const std::vector<LabeledSample>& samples, double train_fraction,
    std::uint64_t seed) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) counts[s.signer_id]++;
  if (counts.size() < 2)
    throw TooFewSigners("signer-disjoint split needs >= 2 signers, have " +
                        std::to_string(counts.size()));

  std::vector<std::string> signers;
  for (const auto& [id, n] : counts) signers.push_back(id);
  Rng rng(derive_seed(seed, 0x5b1a7));
  for (std::size_t i = signers.size() - 1; i > 0; --i)
    std::swap(signers[i], signers[rng.below(i + 1)]);

  const double target = train_fraction * static_cast<double>(samples.size());
  std::size_t best_k = 1, acc = 0;
  double best_err = 0.0;
  for (std::size_t k = 1; k < signers.size(); ++k) {
    acc += counts[signers[k - 1]];
    const double err = std::abs(static_cast<double>(acc) - target);
    if (k == 1 || err < best_err) {
      best_err = err;
      best_k = k;
    }
  }

  const std::set<std::string> train_signers(signers.begin(),
                                            signers.begin() + best_k);
  SplitIndices split;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (train_signers.count(samples[i].signer_id))
      split.train.push_back(i);
    else
      split.validation.push_back(i);
  }
  return split;
}

// --------------------------------------------------------- featurization

// A sample ready for the models: normalized-pose features (and optionally
// the features of its horizontal flip), plus the dominant-hand presence of
// the raw pose for the failure-mode diagnostics.
struct PreparedSample {
  std::string sample_id;
  int label = 0;
  std::string signer_id;
  Tensor features;                 // [T, F]
  std::optional<Tensor> flipped;   // [T, F]
  Hand dominant = Hand::Right;
  double dominant_presence = 0.0;
};

inline Tensor feature_tensor(FeatureMatrix&& fm) {
  return Tensor::from({fm.rows, fm.cols}, std::move(fm.values));
}

inline std::vector<PreparedSample> prepare_samples(
    const std::vector<LabeledSample>& samples, const NormalizationSpec& norm,
    const MirrorTable& mirror, bool build_flipped) {
  std::vector<PreparedSample> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const auto& s = samples[i];
    PreparedSample p;
    p.sample_id = s.sample_id;
    p.label = s.label;
    p.signer_id = s.signer_id;
    p.dominant = dominant_hand(s.pose);
    p.dominant_presence = hand_presence(s.pose, p.dominant);
    const PoseSequence normalized = normalize_pose(s.pose, norm);
    p.features = feature_tensor(frame_features(normalized));
    if (build_flipped)
      p.flipped =
          feature_tensor(frame_features(flip_horizontal(normalized, mirror)));
    out[i] = std::move(p);
  });
  return out;
}

// -------------------------------------------------------------- outcomes

// Per-sample evaluation record (one row of outcomes.csv).
struct PredictionOutcome {
  std::string sample_id;
  int true_label = 0;
  bool rejected = false;
  int predicted_label = -1;  // valid when !rejected
  bool correct = false;
  double dominant_hand_presence = 0.0;
  bool multi_symbol = false;
};

inline constexpr const char* kOutcomesHeader =
    "sample_id,true_label,predicted_label,correct,dominant_hand_presence,"
    "multi_symbol_flag";

inline void write_outcomes_csv(const std::string& path,
                               const std::vector<PredictionOutcome>& outcomes) {
  std::ostringstream out;
  out << kOutcomesHeader << "\n";
  for (const auto& o : outcomes) {
    out << o.sample_id << "," << o.true_label << ",";
    if (o.rejected)
      out << "reject";
    else
      out << o.predicted_label;
    out << "," << (o.correct ? 1 : 0) << ","
        << format_double(o.dominant_hand_presence) << ","
        << (o.multi_symbol ? 1 : 0) << "\n";
  }
  write_file_text(path, out.str());
}

inline std::vector<PredictionOutcome> read_outcomes_csv(
    const std::string& path) {
  std::istringstream in(read_file_text(path));
  std::string line;
  if (!std::getline(in, line) || line != kOutcomesHeader)
    throw IoError("outcomes file " + path + " missing header");
  std::vector<PredictionOutcome> outcomes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw IoError("bad outcomes row: " + line);
    PredictionOutcome o;
    o.sample_id = f[0];
    o.true_label = static_cast<int>(parse_long(f[1]));
    if (f[2] == "reject") {
      o.rejected = true;
    } else {
      o.predicted_label = static_cast<int>(parse_long(f[2]));
    }
    o.correct = parse_long(f[3]) != 0;
    o.dominant_hand_presence = parse_double(f[4]);
    o.multi_symbol = parse_long(f[5]) != 0;
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

}  // namespace signkit
