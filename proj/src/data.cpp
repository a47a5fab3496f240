// SPDX-License-Identifier: Apache-2.0
#include "normalign/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "normalign/errors.hpp"
#include "normalign/rng.hpp"

namespace normalign {

void DatasetSpec::validate() const {
  if (num_source_domains < 1) throw ConfigError("num_source_domains", "must be >= 1");
  if (modalities.empty()) throw ConfigError("modalities", "at least one modality required");
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    const auto path = "modalities[" + std::to_string(i) + "]";
    if (modalities[i].name.empty()) throw ConfigError(path + ".name", "must not be empty");
    if (modalities[i].input_dim == 0) throw ConfigError(path + ".dim", "must be >= 1");
    for (std::size_t j = 0; j < i; ++j)
      if (modalities[j].name == modalities[i].name) throw ConfigError(path + ".name", "duplicate modality");
  }
  if (frames < 1) throw ConfigError("frames", "must be >= 1");
  if (verb_classes < 2) throw ConfigError("verb_classes", "must be >= 2");
  if (noun_classes < 2) throw ConfigError("noun_classes", "must be >= 2");
  if (samples_per_domain < 1) throw ConfigError("samples_per_domain", "must be >= 1");
  if (!(shift_magnitude >= 0.0)) throw ConfigError("shift_magnitude", "must be >= 0");
  if (!(verb_separation >= 0.0)) throw ConfigError("verb_separation", "must be >= 0");
  if (!(noun_separation >= 0.0)) throw ConfigError("noun_separation", "must be >= 0");
  if (!(label_noise >= 0.0 && label_noise < 1.0)) throw ConfigError("label_noise", "must be in [0, 1)");
  for (const auto& [name, scales] : norm_scales) {
    const auto path = "norm_scales." + name;
    if (std::none_of(modalities.begin(), modalities.end(), [&](const auto& m) { return m.name == name; }))
      throw ConfigError(path, "unknown modality");
    if (scales.size() != num_source_domains + 1)
      throw ConfigError(path, "needs " + std::to_string(num_source_domains + 1) +
                                  " factors (each source domain, then the target)");
    for (std::size_t d = 0; d < scales.size(); ++d)
      if (!(scales[d] > 0.0)) throw ConfigError(path + "[" + std::to_string(d) + "]", "must be > 0");
  }
}

double DatasetSpec::norm_scale(const std::string& modality, std::size_t domain) const {
  auto it = norm_scales.find(modality);
  return it == norm_scales.end() ? 1.0 : it->second.at(domain);
}

std::string SplitTag::name() const {
  switch (kind) {
    case Kind::Source: return "source_" + std::to_string(source_index);
    case Kind::TargetTrain: return "target_train";
    case Kind::TargetTest: return "target_test";
  }
  return {};
}

SplitTag SplitTag::parse(const std::string& name) {
  if (name == "target_train") return {Kind::TargetTrain, 0};
  if (name == "target_test") return {Kind::TargetTest, 0};
  const std::string prefix = "source_";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size() &&
      std::all_of(name.begin() + static_cast<long>(prefix.size()), name.end(), ::isdigit))
    return {Kind::Source, std::stoul(name.substr(prefix.size()))};
  throw ContractError("unknown split '" + name + "'");
}

FeatureDataset::FeatureDataset(DatasetSpec spec, std::vector<std::vector<double>> features,
                               std::vector<SplitTag> splits, std::vector<std::optional<ClipLabels>> labels)
    : spec_(std::move(spec)), features_(std::move(features)), splits_(std::move(splits)), labels_(std::move(labels)) {
  if (features_.size() != spec_.modalities.size())
    throw ConsistencyError("dataset has " + std::to_string(features_.size()) + " feature blocks for " +
                           std::to_string(spec_.modalities.size()) + " modalities");
  if (labels_.size() != splits_.size()) throw ConsistencyError("label and split counts differ");
  for (std::size_t m = 0; m < features_.size(); ++m)
    if (features_[m].size() != splits_.size() * spec_.frames * spec_.modalities[m].input_dim)
      throw ConsistencyError("feature block '" + spec_.modalities[m].name + "' has the wrong size");
  for (std::size_t i = 0; i < splits_.size(); ++i) {
    const bool unlabeled = splits_[i].kind == SplitTag::Kind::TargetTrain;
    if (unlabeled && labels_[i]) throw ConsistencyError("target_train clip " + std::to_string(i) + " carries labels");
    if (!unlabeled && !labels_[i]) throw ConsistencyError("labeled clip " + std::to_string(i) + " has no labels");
  }
}

FeatureDataset::FeatureDataset(const FeatureDataset& other)
    : spec_(other.spec_), features_(other.features_), splits_(other.splits_), labels_(other.labels_) {}

FeatureDataset& FeatureDataset::operator=(const FeatureDataset& other) {
  spec_ = other.spec_;
  features_ = other.features_;
  splits_ = other.splits_;
  labels_ = other.labels_;
  target_label_reads_ = 0;
  return *this;
}

std::size_t FeatureDataset::domain_label(std::size_t clip) const {
  const auto& s = splits_.at(clip);
  return s.is_target() ? spec_.num_source_domains : s.source_index;
}

std::vector<std::size_t> FeatureDataset::indices(const std::string& split) const {
  std::vector<std::size_t> out;
  if (split == "source") {
    for (std::size_t i = 0; i < size(); ++i)
      if (!splits_[i].is_target()) out.push_back(i);
    return out;
  }
  const auto tag = SplitTag::parse(split);
  for (std::size_t i = 0; i < size(); ++i)
    if (splits_[i] == tag) out.push_back(i);
  return out;
}

bool FeatureDataset::has_labels(const std::string& split) const {
  return split == "source" || SplitTag::parse(split).kind != SplitTag::Kind::TargetTrain;
}

ClipLabels FeatureDataset::labels(std::size_t clip) const {
  if (splits_.at(clip).kind == SplitTag::Kind::TargetTrain) {
    ++target_label_reads_;
    throw LabelHygieneViolation("labels of target_train clip " + std::to_string(clip) + " requested");
  }
  return *labels_[clip];
}

std::vector<Tensor> FeatureDataset::gather(std::span<const std::size_t> clips) const {
  if (clips.empty()) throw ContractError("gather: no clips");
  std::vector<Tensor> out;
  const std::size_t t = spec_.frames;
  for (std::size_t m = 0; m < features_.size(); ++m) {
    const std::size_t d = spec_.modalities[m].input_dim;
    const std::size_t row = t * d;
    std::vector<double> v(clips.size() * row);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (clips[i] >= size()) throw ContractError("gather: clip " + std::to_string(clips[i]) + " out of range");
      std::copy_n(features_[m].begin() + static_cast<long>(clips[i] * row), row, v.begin() + static_cast<long>(i * row));
    }
    out.push_back(Tensor::from({clips.size() * t, d}, std::move(v)));
  }
  return out;
}

bool FeatureDataset::operator==(const FeatureDataset& other) const {
  if (!(spec_ == other.spec_) || splits_ != other.splits_ || labels_ != other.labels_) return false;
  if (features_.size() != other.features_.size()) return false;
  for (std::size_t m = 0; m < features_.size(); ++m) {
    const auto& a = features_[m];
    const auto& b = other.features_[m];
    if (a.size() != b.size() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

// --- generation ---------------------------------------------------------------

namespace {

using Matrix = std::vector<double>;  // row-major square

std::vector<std::vector<double>> class_directions(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs(count, std::vector<double>(dim));
  for (auto& d : dirs)
    for (auto& x : d) x = normal(rng);
  // Orthonormalize when there is room, so every class mean has the same norm
  // and the verb/noun means of a clip add up to a fixed norm.
  const bool orthogonal = count <= dim;
  for (std::size_t i = 0; i < count; ++i) {
    if (orthogonal)
      for (std::size_t j = 0; j < i; ++j) {
        const double dot = std::inner_product(dirs[i].begin(), dirs[i].end(), dirs[j].begin(), 0.0);
        for (std::size_t k = 0; k < dim; ++k) dirs[i][k] -= dot * dirs[j][k];
      }
    const double n = std::sqrt(std::inner_product(dirs[i].begin(), dirs[i].end(), dirs[i].begin(), 0.0));
    for (auto& x : dirs[i]) x /= n;
  }
  return dirs;
}

struct DomainTransform {
  Matrix mixing;  // I + (σ/√d)·G
  std::vector<double> offset;  // σ·g
};

DomainTransform draw_transform(std::size_t dim, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DomainTransform t;
  t.mixing.assign(dim * dim, 0.0);
  const double s = sigma / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) t.mixing[i * dim + j] = (i == j ? 1.0 : 0.0) + s * normal(rng);
  t.offset.resize(dim);
  for (auto& x : t.offset) x = sigma * normal(rng);
  return t;
}

std::size_t flip_label(std::size_t label, std::size_t classes, double noise, std::mt19937_64& rng) {
  if (noise <= 0.0) return label;
  std::bernoulli_distribution flip(noise);
  if (!flip(rng)) return label;
  std::uniform_int_distribution<std::size_t> other(0, classes - 2);
  const auto y = other(rng);
  return y >= label ? y + 1 : y;
}

}  // namespace

FeatureDataset generate(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t k_src = spec.num_source_domains;
  const std::size_t n_mod = spec.modalities.size();
  const std::size_t t = spec.frames;

  // Per modality: class means, then one transform per domain (sources, target).
  std::vector<std::vector<std::vector<double>>> verb_means(n_mod), noun_means(n_mod);
  std::vector<std::vector<DomainTransform>> transforms(n_mod);
  for (std::size_t m = 0; m < n_mod; ++m) {
    std::mt19937_64 rng(derive_seed(spec.seed, {1, m}));
    const std::size_t dim = spec.modalities[m].input_dim;
    auto dirs = class_directions(spec.verb_classes + spec.noun_classes, dim, rng);
    for (std::size_t v = 0; v < spec.verb_classes; ++v) {
      verb_means[m].push_back(dirs[v]);
      for (auto& x : verb_means[m].back()) x *= spec.verb_separation;
    }
    for (std::size_t n = 0; n < spec.noun_classes; ++n) {
      noun_means[m].push_back(dirs[spec.verb_classes + n]);
      for (auto& x : noun_means[m].back()) x *= spec.noun_separation;
    }
    for (std::size_t d = 0; d <= k_src; ++d) transforms[m].push_back(draw_transform(dim, spec.shift_magnitude, rng));
  }

  std::vector<SplitTag> splits;
  for (std::size_t d = 0; d < k_src; ++d)
    for (std::size_t i = 0; i < spec.samples_per_domain; ++i) splits.push_back({SplitTag::Kind::Source, d});
  for (auto kind : {SplitTag::Kind::TargetTrain, SplitTag::Kind::TargetTest})
    for (std::size_t i = 0; i < spec.samples_per_domain; ++i) splits.push_back({kind, 0});

  const std::size_t n_clips = splits.size();
  std::vector<std::vector<double>> features(n_mod);
  for (std::size_t m = 0; m < n_mod; ++m) features[m].resize(n_clips * t * spec.modalities[m].input_dim);
  std::vector<std::optional<ClipLabels>> labels(n_clips);

  std::mt19937_64 rng(derive_seed(spec.seed, {2}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_verb(0, spec.verb_classes - 1);
  std::uniform_int_distribution<std::size_t> pick_noun(0, spec.noun_classes - 1);
  std::mt19937_64 noise_rng(derive_seed(spec.seed, {3}));
  std::vector<double> z;
  for (std::size_t c = 0; c < n_clips; ++c) {
    const std::size_t domain = splits[c].is_target() ? k_src : splits[c].source_index;
    const std::size_t verb = pick_verb(rng);
    const std::size_t noun = pick_noun(rng);
    for (std::size_t m = 0; m < n_mod; ++m) {
      const std::size_t dim = spec.modalities[m].input_dim;
      const auto& tr = transforms[m][domain];
      const double scale = spec.norm_scale(spec.modalities[m].name, domain);
      z.resize(dim);
      for (std::size_t f = 0; f < t; ++f) {
        for (std::size_t j = 0; j < dim; ++j) z[j] = verb_means[m][verb][j] + noun_means[m][noun][j] + normal(rng);
        double* out = features[m].data() + (c * t + f) * dim;
        for (std::size_t i = 0; i < dim; ++i) {
          double acc = tr.offset[i];
          for (std::size_t j = 0; j < dim; ++j) acc += tr.mixing[i * dim + j] * z[j];
          // Stored as float32 on disk; round now so save/load is exact.
          out[i] = static_cast<double>(static_cast<float>(scale * acc));
        }
      }
    }
    const std::size_t noisy_verb = flip_label(verb, spec.verb_classes, spec.label_noise, noise_rng);
    const std::size_t noisy_noun = flip_label(noun, spec.noun_classes, spec.label_noise, noise_rng);
    if (splits[c].kind != SplitTag::Kind::TargetTrain) labels[c] = ClipLabels{noisy_verb, noisy_noun};
  }
  return FeatureDataset(spec, std::move(features), std::move(splits), std::move(labels));
}

std::vector<double> input_mean_norms(const FeatureDataset& dataset, const std::string& split) {
  const auto idx = dataset.indices(split);
  const auto& spec = dataset.spec();
  std::vector<double> out;
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const std::size_t d = spec.modalities[m].input_dim, t = spec.frames;
    auto f = dataset.features(m);
    double acc = 0.0;
    for (auto c : idx)
      for (std::size_t r = 0; r < t; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double v = f[(c * t + r) * d + j];
          s += v * v;
        }
        acc += std::sqrt(s + kNormEpsilon);
      }
    out.push_back(idx.empty() ? 0.0 : acc / static_cast<double>(idx.size() * t));
  }
  return out;
}

// --- batching ----------------------------------------------------------------

std::vector<std::vector<std::size_t>> batches(const FeatureDataset& dataset, const std::string& split,
                                              std::size_t batch_size, std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  auto idx = dataset.indices(split);
  if (idx.empty()) throw ContractError("split '" + split + "' is empty");
  std::uint64_t split_id = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : split) split_id = (split_id ^ ch) * 0x100000001b3ULL;
  std::mt19937_64 rng(derive_seed(seed, {epoch, split_id}));
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += batch_size)
    out.emplace_back(idx.begin() + static_cast<long>(i), idx.begin() + static_cast<long>(std::min(idx.size(), i + batch_size)));
  return out;
}

LabeledBatch make_labeled_batch(const FeatureDataset& dataset, std::span<const std::size_t> clips) {
  LabeledBatch b;
  b.clips.assign(clips.begin(), clips.end());
  for (auto c : clips) {
    const auto l = dataset.labels(c);
    b.verbs.push_back(l.verb);
    b.nouns.push_back(l.noun);
    b.domains.push_back(dataset.domain_label(c));
  }
  b.features = dataset.gather(clips);
  return b;
}

UnlabeledBatch make_unlabeled_batch(const FeatureDataset& dataset, std::span<const std::size_t> clips) {
  UnlabeledBatch b;
  b.clips.assign(clips.begin(), clips.end());
  for (auto c : clips) b.domains.push_back(dataset.domain_label(c));
  b.features = dataset.gather(clips);
  return b;
}

std::vector<UdaStep> zip_cycled(const std::vector<std::vector<std::size_t>>& source,
                                const std::vector<std::vector<std::size_t>>& target) {
  if (source.empty() || target.empty()) throw ContractError("zip_cycled: empty batch list");
  const std::size_t steps = std::max(source.size(), target.size());
  std::vector<UdaStep> out;
  out.reserve(steps);
  for (std::size_t i = 0; i < steps; ++i) out.push_back({source[i % source.size()], target[i % target.size()]});
  return out;
}

}  // namespace normalign
