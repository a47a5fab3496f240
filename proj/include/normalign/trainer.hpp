// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the source-only, domain-generalization (RNA over the
// sources) and full adaptation regimes, plus evaluation and the comparison
// presets.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "normalign/data.hpp"
#include "normalign/losses.hpp"
#include "normalign/models.hpp"

namespace normalign {

enum class TrainMode { SourceOnly, DgRna, UdaFull, Custom };
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

/// Which loss terms participate. Presets map onto fixed masks.
struct LossMask {
  bool rna = false;                // source modalities
  bool rna_target = false;         // adds the target term
  bool adversarial = false;        // frame/relation/video discriminators
  bool domain_attention = false;
  bool attentive_entropy = false;
  bool thna = false;               // needs >= 2 streams unless thna_single_stream
  bool mec = false;                // needs >= 2 streams
  bool operator==(const LossMask&) const = default;

  bool uses_target() const { return rna_target || adversarial || attentive_entropy || thna || mec; }
};

LossMask mask_for(TrainMode mode);

enum class MecTarget { PerHead, Action };

struct TrainConfig {
  TrainMode mode = TrainMode::UdaFull;
  LossMask custom_mask;  // only read when mode == Custom
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::vector<std::size_t> lr_decay_epochs{30, 60};
  double lr_decay_factor = 0.1;
  double dropout = 0.0;
  LossWeights weights;
  /// Architecture of each stream. Modalities, frames, class and domain counts
  /// are filled in from the dataset.
  std::vector<StreamConfig> streams{StreamConfig{}};
  bool thna_single_stream = false;
  MecTarget mec_target = MecTarget::PerHead;
  std::string eval_split = "target_test";
  std::uint64_t seed = 0;

  LossMask mask() const { return mode == TrainMode::Custom ? custom_mask : mask_for(mode); }
  /// ConfigError naming the offending field.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Copies the data-dependent fields of the dataset into each stream config.
std::vector<StreamConfig> bind_streams(const TrainConfig& config, const DatasetSpec& spec);

/// GRL coefficient 2/(1+exp(-10p)) - 1 at training progress p in [0,1].
double grl_lambda(double progress);

/// Learning rate in effect during `epoch` (1-based): decays once after each
/// listed epoch has completed.
double learning_rate_at(const TrainConfig& config, std::size_t epoch);

/// v <- momentum·v + g; p <- p - lr·v
void sgd_step(std::span<double> params, std::span<const double> grads, double lr, double momentum,
              std::span<double> velocity);

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum);
  void zero_grad();
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
};

struct EvalMetrics {
  std::size_t samples = 0;
  double verb_top1 = 0, verb_top5 = 0;
  double noun_top1 = 0, noun_top5 = 0;
  double action_top1 = 0, action_top5 = 0;
  double agreement = 0;  // inter-stream argmax agreement
  bool operator==(const EvalMetrics&) const = default;
};

/// Top-1/top-5 per head via ensemble_predict. Action top-1 needs both heads
/// right; action top-5 ranks (verb, noun) pairs by the product of scores.
/// ContractError on the unlabeled split. Accuracies are percentages.
EvalMetrics evaluate(const std::vector<StreamModel>& streams, const FeatureDataset& dataset, const std::string& split);

/// Same metrics from already computed ensemble scores.
EvalMetrics metrics_from_scores(const EnsemblePrediction& pred, std::span<const ClipLabels> labels);

/// Mean row L2 norm of every stream's extractor outputs over a split,
/// [stream][modality]. Splits may be "source", "source_k", "target_*".
std::vector<std::vector<double>> norm_stats(const std::vector<StreamModel>& streams, const FeatureDataset& dataset,
                                            const std::string& split);

/// max / min over modalities of one stream's mean norms.
double norm_ratio(std::span<const double> modality_norms);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 = evaluation before training
  double learning_rate = 0;
  double grl_lambda = 0;
  std::map<std::string, double> losses;  // epoch means per term
  EvalMetrics metrics;
  /// "s<stream>/<modality>/<split>" -> mean extractor-output norm
  std::map<std::string, double> norms;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  TrainConfig config;
  std::vector<StreamConfig> streams;
  std::vector<EpochRecord> epochs;
  std::size_t target_label_reads = 0;
  bool operator==(const TrainReport&) const = default;
};

struct TrainResult {
  TrainReport report;
  std::vector<StreamModel> streams;
};

/// SGD with momentum over total_uda_loss restricted to the config's mask.
/// epochs == 0 only evaluates. Throws NumericalAbort naming a non-finite
/// term; LabelHygieneViolation if a path touched target_train labels.
TrainResult train(const TrainConfig& config, const FeatureDataset& dataset);

/// Builds freshly initialized streams for a config and dataset.
std::vector<StreamModel> build_streams(const TrainConfig& config, const DatasetSpec& spec);

// --- presets -------------------------------------------------------------------

struct PresetRow {
  std::string name;
  TrainConfig config;
};

std::vector<std::string> preset_names();
/// Row configurations of a named preset; ContractError on an unknown name.
std::vector<PresetRow> preset_rows(const std::string& name, const TrainConfig& base);
/// Default dataset spec of the presets (norm-imbalanced, three sources).
DatasetSpec default_preset_spec();
/// Base training config of the presets when none is given: learning rate
/// 0.01, T-HNA radius 15 and MEC weight 0.3 for the synthetic features.
TrainConfig default_preset_config();

struct PresetRowResult {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalMetrics> per_seed;  // final-epoch metrics on the eval split
  std::vector<double> final_norm_ratio;  // stream 0, pooled source split
  EvalMetrics mean;
  EvalMetrics stddev;  // population standard deviation over seeds
};

struct PresetResult {
  std::string name;
  std::vector<PresetRowResult> rows;
};

/// Trains every row of the preset for each seed on the dataset generated from
/// `spec` with that seed. Runs share nothing mutable and execute on up to
/// `threads` threads; results do not depend on the thread count.
PresetResult run_preset(const std::string& name, const DatasetSpec& spec, const TrainConfig& base,
                        std::span<const std::uint64_t> seeds, std::size_t threads = 1);

/// Header: row,verb_top1_mean,verb_top1_std,noun_top1_mean,noun_top1_std,action_top1_mean,action_top1_std
std::string preset_csv(const PresetResult& result);

}  // namespace normalign
