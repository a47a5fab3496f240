// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-source / target clip features and their on-disk format.
//
// Directory layout written by save():
//   manifest.json   spec, clip count, per-modality dtype/shape/file/crc32
//   <modality>.f32  little-endian float32, row-major [clips, T, d]
//   labels.csv      clip_id,domain,verb,noun (verb/noun blank for target_train)
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "normalign/models.hpp"
#include "normalign/tensor.hpp"

namespace normalign {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetSpec {
  std::size_t num_source_domains = 3;
  std::vector<ModalitySpec> modalities{{"rgb", 16}, {"flow", 16}, {"audio", 16}};
  std::size_t frames = 4;
  std::size_t verb_classes = 4;
  std::size_t noun_classes = 4;
  std::size_t samples_per_domain = 200;
  /// Strength of the per-domain affine distortion of every modality.
  double shift_magnitude = 1.0;
  /// Norm of each verb / noun class mean before domain effects.
  double verb_separation = 2.0;
  double noun_separation = 2.0;
  /// Per modality, one factor per domain: the K sources then the target.
  /// Missing modalities use 1 everywhere.
  std::map<std::string, std::vector<double>> norm_scales;
  double label_noise = 0.0;
  std::uint64_t seed = 0;

  /// ConfigError naming the offending field.
  void validate() const;
  double norm_scale(const std::string& modality, std::size_t domain) const;
  bool operator==(const DatasetSpec&) const = default;
};

struct SplitTag {
  enum class Kind : std::uint8_t { Source, TargetTrain, TargetTest };
  Kind kind = Kind::Source;
  std::size_t source_index = 0;

  std::string name() const;
  static SplitTag parse(const std::string& name);
  bool is_target() const { return kind != Kind::Source; }
  bool operator==(const SplitTag&) const = default;
};

struct ClipLabels {
  std::size_t verb = 0;
  std::size_t noun = 0;
  bool operator==(const ClipLabels&) const = default;
};

class FeatureDataset {
 public:
  FeatureDataset() = default;
  FeatureDataset(DatasetSpec spec, std::vector<std::vector<double>> features, std::vector<SplitTag> splits,
                 std::vector<std::optional<ClipLabels>> labels);
  FeatureDataset(const FeatureDataset& other);
  FeatureDataset& operator=(const FeatureDataset& other);

  const DatasetSpec& spec() const { return spec_; }
  std::size_t size() const { return splits_.size(); }
  std::size_t modality_count() const { return features_.size(); }
  const SplitTag& split(std::size_t clip) const { return splits_[clip]; }
  /// Raw values of modality m, [clips × T × d] row-major.
  std::span<const double> features(std::size_t m) const { return features_[m]; }

  /// Domain index used by the discriminators: k for source_k, K for target.
  std::size_t domain_label(std::size_t clip) const;

  /// Clips of a split. "source" selects every source domain.
  std::vector<std::size_t> indices(const std::string& split) const;
  bool has_labels(const std::string& split) const;

  /// Labels of a labeled clip. Any attempt on a target_train clip is counted
  /// and throws LabelHygieneViolation.
  ClipLabels labels(std::size_t clip) const;
  std::size_t target_label_reads() const { return target_label_reads_.load(); }
  void reset_target_label_reads() { target_label_reads_ = 0; }

  /// Per-modality [n·T × d] tensors of the given clips, in order.
  std::vector<Tensor> gather(std::span<const std::size_t> clips) const;

  /// Bitwise equality of spec, features, splits and labels.
  bool operator==(const FeatureDataset& other) const;

  /// Used by the file loader; keeps the unlabeled split free of labels.
  const std::vector<std::optional<ClipLabels>>& raw_labels() const { return labels_; }

 private:
  DatasetSpec spec_;
  std::vector<std::vector<double>> features_;
  std::vector<SplitTag> splits_;
  std::vector<std::optional<ClipLabels>> labels_;
  mutable std::atomic<std::size_t> target_label_reads_{0};
};

/// Class-conditional Gaussian frames, per-domain affine distortion and
/// per-domain per-modality norm scaling. Pure function of the spec.
FeatureDataset generate(const DatasetSpec& spec);

void save(const FeatureDataset& dataset, const std::filesystem::path& dir);
/// Throws VersionMismatchError, TruncatedFileError, ChecksumError or
/// ConsistencyError; never returns a partial dataset.
FeatureDataset load(const std::filesystem::path& dir);

/// Mean row L2 norm of raw input frames per modality, for one split.
std::vector<double> input_mean_norms(const FeatureDataset& dataset, const std::string& split);

struct LabeledBatch {
  std::vector<std::size_t> clips;
  std::vector<Tensor> features;  // per modality [n·T × d]
  std::vector<std::size_t> verbs;
  std::vector<std::size_t> nouns;
  std::vector<std::size_t> domains;
};

/// Target-train batch. Carries no label field.
struct UnlabeledBatch {
  std::vector<std::size_t> clips;
  std::vector<Tensor> features;
  std::vector<std::size_t> domains;
};

/// Shuffled clip indices of one epoch, split into batches; the last batch
/// may be short. Permutation depends only on (seed, epoch, split).
std::vector<std::vector<std::size_t>> batches(const FeatureDataset& dataset, const std::string& split,
                                              std::size_t batch_size, std::uint64_t seed, std::size_t epoch);

LabeledBatch make_labeled_batch(const FeatureDataset& dataset, std::span<const std::size_t> clips);
UnlabeledBatch make_unlabeled_batch(const FeatureDataset& dataset, std::span<const std::size_t> clips);

/// Source and target batches zipped for one UDA epoch; the shorter list
/// cycles so the epoch has max(|source|, |target|) steps.
struct UdaStep {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};
std::vector<UdaStep> zip_cycled(const std::vector<std::vector<std::size_t>>& source,
                                const std::vector<std::vector<std::size_t>>& target);

}  // namespace normalign
