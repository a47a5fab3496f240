// SPDX-License-Identifier: Apache-2.0
//
// Alignment, consistency and classification losses. All of them return a
// scalar Tensor wired into the autodiff graph of their inputs.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "normalign/tensor.hpp"

namespace normalign {

/// Floor applied to log-probabilities inside MEC and the entropy terms.
inline constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)

/// Source domain index, or the target domain.
struct DomainTag {
  static constexpr int kTarget = -1;
  int index = kTarget;
  bool is_target() const { return index == kTarget; }
  static DomainTag source(int k) { return DomainTag{k}; }
  static DomainTag target() { return DomainTag{}; }
};

/// Features of one modality for one batch, one row per sample.
struct ModalityBatch {
  std::string modality;
  Tensor features;  // [N × d]
  DomainTag domain = DomainTag::target();
};

struct LossWeights {
  double lambda_rna = 1.0;
  double lambda_thna = 0.0006;
  double radius_R = 40.0;
  double lambda_mec = 0.01;
  double gamma_attentive = 0.003;
  std::array<double, 3> beta_levels{0.75, 0.75, 0.5};  // frame, relation, video

  /// Throws ContractError unless every weight is >= 0 and radius_R > 0.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Mean-feature-norm ratio penalty. With two batches this is
/// (E[h(X_0)] / E[h(X_1)] - 1)^2, batch 0 in the numerator; with more, the
/// mean of that term over all ordered pairs (i, j), i != j.
Tensor rna_loss(std::span<const ModalityBatch> batches);

/// rna_loss(source) + rna_loss(target). An empty target leaves only the
/// source term and logs a warning to stderr.
Tensor rna_uda_loss(std::span<const ModalityBatch> source, std::span<const ModalityBatch> target);

/// Sum over backbones b and relation scales t of (E[h_t(X^b)] - R)^2.
/// `features[b][t]` is [N × d_t].
Tensor thna_loss(const std::vector<std::vector<Tensor>>& features, double radius_R);

/// Min-entropy consensus over b streams of [m × C] logits:
/// -(1/m) Σ_i (1/b) max_y Σ_b log p_b(y | x_i). Ties pick the lowest class.
Tensor mec_loss(std::span<const Tensor> stream_logits);

/// Mean cross-entropy at the true class.
Tensor classification_loss(const Tensor& logits, std::span<const std::size_t> labels);

/// Cross-entropy of a domain discriminator. Compose with grad_reverse on the
/// features to make them adversarial.
Tensor domain_adversarial_loss(const Tensor& domain_logits, std::span<const std::size_t> domain_labels);

/// Normalized softmax entropy per row, in [0, 1]. Plain numbers, no graph.
std::vector<double> normalized_entropy(const Tensor& logits);

/// (1/N) Σ_i (1 + Ĥ(d_i)) · H(ŷ_i), Ĥ the normalized domain entropy, held
/// constant.
Tensor attentive_entropy_loss(const Tensor& class_logits, const Tensor& domain_logits);

/// Individual loss terms of one step. Absent terms contribute nothing.
struct LossParts {
  Tensor classification;
  std::optional<Tensor> rna;
  std::array<std::optional<Tensor>, 3> adversarial;  // frame, relation, video
  std::optional<Tensor> attentive_entropy;
  std::optional<Tensor> thna;
  std::optional<Tensor> mec;
};

/// L_cls + λ_RNA·L_RNA + Σ β_l·L_adv,l + γ·L_ae + λ_T-HNA·L_T-HNA + λ_MEC·L_MEC
Tensor total_uda_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace normalign
