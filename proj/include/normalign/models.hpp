// SPDX-License-Identifier: Apache-2.0
//
// One "stream" is a full video model: per-modality frame extractors, a fusion
// step, a multi-scale temporal relation module (TRM), verb and noun heads and
// three domain discriminators (frame, relation, video). Several streams form
// an ensemble.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "normalign/tensor.hpp"

namespace normalign {

enum class FusionMode { Late, Mid };

std::string to_string(FusionMode mode);
FusionMode fusion_from_string(const std::string& name);

struct ModalitySpec {
  std::string name;
  std::size_t input_dim = 0;
  bool operator==(const ModalitySpec&) const = default;
};

struct StreamConfig {
  std::vector<ModalitySpec> modalities;
  std::size_t frames = 4;
  std::vector<std::size_t> extractor_hidden{32};
  std::size_t embed_dim = 16;
  std::vector<std::size_t> trm_scales{2, 3};
  std::size_t relation_dim = 32;
  std::size_t discriminator_hidden = 32;
  std::size_t verb_classes = 4;
  std::size_t noun_classes = 4;
  std::size_t domain_count = 4;
  FusionMode fusion = FusionMode::Mid;

  /// ContractError on an inconsistent configuration.
  void validate() const;
  bool operator==(const StreamConfig&) const = default;
};

/// Affine layer y = x·W + b, W is [in × out].
struct Linear {
  Tensor weight;
  Tensor bias;
  Tensor forward(const Tensor& x) const;
};

/// Linear layers with relu between them; `relu_last` adds one after the last.
struct Mlp {
  std::vector<Linear> layers;
  bool relu_last = false;
  Tensor forward(const Tensor& x) const;
};

/// TRM, heads and discriminators. A mid-fusion stream has one branch fed by
/// the fused embedding; a late-fusion stream has one per modality.
struct Branch {
  std::string name;
  std::vector<Linear> relation;  // g_k, one per TRM scale
  Linear verb;
  Linear noun;
  Mlp disc_frame;
  Mlp disc_relation;  // shared across scales
  Mlp disc_video;
};

/// Knobs of one forward pass.
struct ForwardOptions {
  bool discriminators = false;   // compute domain logits (through gradient reversal)
  bool domain_attention = false; // re-weight relation features by domain entropy
  double grl_lambda = 0.0;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;  // dropout masks; required if dropout > 0
  std::uint64_t subset_seed = 0;   // TRM subset sampling above the cap
};

struct BranchOutput {
  std::string name;
  Tensor frames;                    // [N·T × d_e], input of the TRM
  std::vector<Tensor> relations;    // per scale [N × d_r], before attention
  std::vector<std::vector<double>> attention;  // per scale, per sample; empty if off
  Tensor video;                     // [N × d_r]
  Tensor verb_logits;               // [N × C_v]
  Tensor noun_logits;               // [N × C_n]
  std::optional<Tensor> frame_domain;         // [N·T × D]
  std::vector<Tensor> relation_domain;        // per scale [N × D]
  std::optional<Tensor> video_domain;         // [N × D]
};

struct StreamOutput {
  std::vector<Tensor> embeddings;  // per modality [N·T × d_e], extractor outputs
  std::vector<BranchOutput> branches;
  /// Log prediction scores: raw logits for mid fusion, log of the averaged
  /// branch softmax for late fusion. softmax() of these is the prediction.
  Tensor verb;
  Tensor noun;
};

/// Number of ordered frame subsets of size k sampled from T frames before the
/// TRM switches from exhaustive enumeration to sampling.
inline constexpr std::size_t kTrmSubsetCap = 10;

/// Ordered (increasing) k-subsets of {0..T-1}: all of them if there are at
/// most kTrmSubsetCap, else kTrmSubsetCap distinct ones drawn with `seed`.
std::vector<std::vector<std::size_t>> trm_subsets(std::size_t frames, std::size_t k, std::uint64_t seed);

class StreamModel {
 public:
  /// Parameters drawn uniformly from ±1/sqrt(fan_in) with `seed`.
  StreamModel(StreamConfig config, std::uint64_t seed);

  // Parameters are shared handles; copies would alias them.
  StreamModel(const StreamModel&) = delete;
  StreamModel& operator=(const StreamModel&) = delete;
  StreamModel(StreamModel&&) noexcept = default;
  StreamModel& operator=(StreamModel&&) noexcept = default;

  /// Independent copy with identical parameter values.
  StreamModel clone() const;

  const StreamConfig& config() const { return config_; }

  /// Parameters in a fixed order with stable names.
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
  Tensor& parameter(const std::string& name);
  std::size_t parameter_count() const;

  /// Per-modality frame embeddings. `clip[m]` is [N·T × input_dim_m] in the
  /// config's modality order.
  std::vector<Tensor> extract_features(const std::vector<Tensor>& clip) const;

  StreamOutput forward(const std::vector<Tensor>& clip, const ForwardOptions& options = {}) const;

  const std::vector<Mlp>& extractors() const { return extractors_; }
  const std::vector<Branch>& branches() const { return branches_; }

 private:
  BranchOutput run_branch(const Branch& branch, const Tensor& frames, const ForwardOptions& options) const;

  StreamConfig config_;
  std::vector<Mlp> extractors_;
  std::vector<Branch> branches_;
  std::vector<std::pair<std::string, Tensor>> params_;
};

/// relu of the elementwise sum of per-modality frame embeddings.
Tensor mid_fusion(const std::vector<Tensor>& embeddings);

/// Per-scale relation features and their sum. `relation[k]` maps the
/// concatenation of scales[k] frames to d_r.
struct TrmOutput {
  std::vector<Tensor> relations;
  Tensor video;
};
TrmOutput trm_forward(const Tensor& frames, std::size_t frames_per_clip, const std::vector<std::size_t>& scales,
                      const std::vector<Linear>& relation, std::uint64_t subset_seed);

/// Attention weights 1 + Ĥ(softmax(domain_logits)) per row.
std::vector<double> domain_attention_weights(const Tensor& domain_logits);
/// Relation features scaled per sample by their attention weights.
std::vector<Tensor> domain_attention(const std::vector<Tensor>& relations,
                                     const std::vector<Tensor>& domain_logits);

std::pair<Tensor, Tensor> classify(const Branch& branch, const Tensor& video);

/// grad_reverse(features, lambda) followed by the level's discriminator.
Tensor discriminate_domain(const Mlp& discriminator, const Tensor& features, double lambda);

/// Mean of per-modality score tensors (already probabilities).
Tensor late_fusion(const std::vector<Tensor>& scores);

struct EnsemblePrediction {
  std::size_t samples = 0;
  std::vector<double> verb_scores;  // [N × C_v], row-major
  std::vector<double> noun_scores;  // [N × C_n]
  std::vector<std::uint8_t> verb_agree;  // 1 if every stream has the same verb argmax
  std::vector<std::uint8_t> noun_agree;
  /// Mean of verb and noun agreement rates.
  double agreement() const;
};

/// Averages per-stream softmax scores. Gradients are not recorded.
EnsemblePrediction ensemble_predict(const std::vector<StreamModel>& streams, const std::vector<Tensor>& clip);

/// Index of the first maximum.
std::size_t argmax(std::span<const double> row);

}  // namespace normalign
