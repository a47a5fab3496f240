// SPDX-License-Identifier: Apache-2.0
#include "normalign/losses.hpp"

#include <cmath>
#include <iostream>

#include "normalign/errors.hpp"

namespace normalign {

void LossWeights::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0)) throw ContractError(std::string("LossWeights.") + name + " must be >= 0");
  };
  nonneg(lambda_rna, "lambda_rna");
  nonneg(lambda_thna, "lambda_thna");
  nonneg(lambda_mec, "lambda_mec");
  nonneg(gamma_attentive, "gamma_attentive");
  for (double b : beta_levels) nonneg(b, "beta_levels");
  if (!(radius_R > 0.0)) throw ContractError("LossWeights.radius_R must be > 0");
}

namespace {

Tensor mean_norm(const Tensor& features) { return mean(l2_norm_rows(features)); }

Tensor squared(const Tensor& x) { return mul(x, x); }

}  // namespace

Tensor rna_loss(std::span<const ModalityBatch> batches) {
  if (batches.size() < 2) throw ContractError("rna_loss needs at least two modalities");
  const std::size_t n = batches.front().features.rows();
  std::vector<Tensor> norms;
  for (const auto& b : batches) {
    if (b.features.dim() != 2 || b.features.rows() != n)
      throw ContractError("rna_loss: modality '" + b.modality + "' has " +
                          shape_string(b.features.shape()) + ", expected " + std::to_string(n) + " rows");
    norms.push_back(mean_norm(b.features));
  }
  if (norms.size() == 2) return squared(add_scalar(norms[0] / norms[1], -1.0));

  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < norms.size(); ++i)
    for (std::size_t j = 0; j < norms.size(); ++j)
      if (i != j) terms.push_back(reshape(squared(add_scalar(norms[i] / norms[j], -1.0)), {1}));
  return mean(concat(terms, 0));
}

Tensor rna_uda_loss(std::span<const ModalityBatch> source, std::span<const ModalityBatch> target) {
  if (target.empty()) {
    std::cerr << "warning: rna_uda_loss called without target batches; using the source term only\n";
    return rna_loss(source);
  }
  return rna_loss(source) + rna_loss(target);
}

Tensor thna_loss(const std::vector<std::vector<Tensor>>& features, double radius_R) {
  std::vector<Tensor> terms;
  for (const auto& backbone : features)
    for (const auto& scale : backbone) terms.push_back(reshape(squared(add_scalar(mean_norm(scale), -radius_R)), {1}));
  if (terms.empty()) throw ContractError("thna_loss needs at least one (backbone, scale) entry");
  return sum(concat(terms, 0));
}

Tensor mec_loss(std::span<const Tensor> stream_logits) {
  if (stream_logits.empty()) throw ContractError("mec_loss needs at least one stream");
  const auto& shape = stream_logits.front().shape();
  if (shape.size() != 2 || shape[1] < 2)
    throw ContractError("mec_loss: logits must be [m × C] with C >= 2, got " + shape_string(shape));
  Tensor summed;
  for (const auto& logits : stream_logits) {
    if (logits.shape() != shape)
      throw ContractError("mec_loss: stream shapes differ " + shape_string(shape) + " vs " +
                          shape_string(logits.shape()));
    Tensor lp = clamp_min(log_softmax(logits), kLogProbFloor);
    summed = summed.defined() ? summed + lp : lp;
  }
  const std::size_t m = shape[0], c = shape[1];
  std::vector<std::size_t> best(m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t y = 1; y < c; ++y)
      if (summed.at(i, y) > summed.at(i, best[i])) best[i] = y;
  const double b = static_cast<double>(stream_logits.size());
  return scalar_mul(mean(pick_per_row(summed, best)), -1.0 / b);
}

Tensor classification_loss(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.dim() != 2) throw ContractError("classification_loss: logits must be 2-D");
  const std::size_t c = logits.cols();
  if (labels.size() != logits.rows())
    throw ContractError("classification_loss: " + std::to_string(labels.size()) + " labels for " +
                        shape_string(logits.shape()));
  for (auto y : labels)
    if (y >= c) throw ContractError("classification_loss: label " + std::to_string(y) + " not in [0," +
                                    std::to_string(c) + ")");
  return scalar_mul(mean(pick_per_row(log_softmax(logits), labels)), -1.0);
}

Tensor domain_adversarial_loss(const Tensor& domain_logits, std::span<const std::size_t> domain_labels) {
  return classification_loss(domain_logits, domain_labels);
}

std::vector<double> normalized_entropy(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<double> out(n, 0.0);
  if (c < 2) return out;
  Tensor lp = log_softmax(logits.detach());
  const double norm = std::log(static_cast<double>(c));
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double l = std::max(lp.at(i, j), kLogProbFloor);
      h -= std::exp(lp.at(i, j)) * l;
    }
    out[i] = h / norm;
  }
  return out;
}

Tensor attentive_entropy_loss(const Tensor& class_logits, const Tensor& domain_logits) {
  if (class_logits.rows() != domain_logits.rows())
    throw ContractError("attentive_entropy_loss: " + shape_string(class_logits.shape()) + " vs " +
                        shape_string(domain_logits.shape()));
  auto weight = normalized_entropy(domain_logits);
  for (auto& w : weight) w += 1.0;
  Tensor entropy = scalar_mul(sum_rows(mul(softmax(class_logits), clamp_min(log_softmax(class_logits), kLogProbFloor))), -1.0);
  return mean(scale_rows(entropy, weight));
}

Tensor total_uda_loss(const LossParts& parts, const LossWeights& w) {
  Tensor total = parts.classification;
  auto add_term = [&total](const std::optional<Tensor>& term, double weight) {
    if (term) total = total + scalar_mul(*term, weight);
  };
  add_term(parts.rna, w.lambda_rna);
  for (std::size_t l = 0; l < 3; ++l) add_term(parts.adversarial[l], w.beta_levels[l]);
  add_term(parts.attentive_entropy, w.gamma_attentive);
  add_term(parts.thna, w.lambda_thna);
  add_term(parts.mec, w.lambda_mec);
  return total;
}

}  // namespace normalign
