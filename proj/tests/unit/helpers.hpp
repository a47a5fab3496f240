// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "normalign/data.hpp"
#include "normalign/models.hpp"
#include "normalign/tensor.hpp"

namespace normalign::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

/// Fresh empty directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::path(NORMALIGN_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Dataset whose single modality spells out the labels: every frame is
/// onehot(verb) followed by onehot(noun). Target-train clips are unlabeled.
inline FeatureDataset oracle_dataset(std::size_t per_split = 12) {
  DatasetSpec spec;
  spec.num_source_domains = 1;
  spec.verb_classes = 3;
  spec.noun_classes = 2;
  spec.modalities = {{"x", 5}};
  spec.frames = 2;
  spec.samples_per_domain = per_split;
  std::vector<SplitTag> splits;
  std::vector<std::optional<ClipLabels>> labels;
  std::vector<double> x;
  for (auto kind : {SplitTag::Kind::Source, SplitTag::Kind::TargetTrain, SplitTag::Kind::TargetTest})
    for (std::size_t i = 0; i < per_split; ++i) {
      const ClipLabels l{i % 3, (i / 3) % 2};
      splits.push_back({kind, 0});
      if (kind == SplitTag::Kind::TargetTrain) labels.emplace_back();
      else labels.emplace_back(l);
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t j = 0; j < 5; ++j) x.push_back(j == l.verb || j == 3 + l.noun ? 1.0 : 0.0);
    }
  return FeatureDataset(spec, {x}, splits, labels);
}

/// A stream that reads the labels back out of oracle_dataset() features.
inline StreamModel oracle_stream() {
  StreamConfig c;
  c.modalities = {{"x", 5}};
  c.frames = 2;
  c.extractor_hidden = {};
  c.embed_dim = 5;
  c.trm_scales = {2};
  c.relation_dim = 5;
  c.discriminator_hidden = 2;
  c.verb_classes = 3;
  c.noun_classes = 2;
  c.domain_count = 2;
  StreamModel m(c, 0);
  std::vector<std::string> names;
  for (const auto& p : m.parameters()) names.push_back(p.first);
  for (const auto& n : names)
    for (auto& v : m.parameter(n).mutable_values()) v = 0.0;
  auto ext = m.parameter("extractor.x.l0.weight").mutable_values();
  auto rel = m.parameter("branch.fused.relation.k2.weight").mutable_values();
  for (std::size_t j = 0; j < 5; ++j) {
    ext[j * 5 + j] = 1.0;
    rel[j * 5 + j] = 1.0;
  }
  auto verb = m.parameter("branch.fused.verb.weight").mutable_values();
  auto noun = m.parameter("branch.fused.noun.weight").mutable_values();
  for (std::size_t j = 0; j < 3; ++j) verb[j * 3 + j] = 50.0;
  for (std::size_t j = 0; j < 2; ++j) noun[(3 + j) * 2 + j] = 50.0;
  return m;
}

}  // namespace normalign::test
