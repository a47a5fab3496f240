// SPDX-License-Identifier: Apache-2.0
#include "normalign/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "normalign/errors.hpp"
#include "normalign/losses.hpp"
#include "normalign/rng.hpp"

namespace normalign {

std::string to_string(FusionMode mode) { return mode == FusionMode::Late ? "late" : "mid"; }

FusionMode fusion_from_string(const std::string& name) {
  if (name == "late") return FusionMode::Late;
  if (name == "mid") return FusionMode::Mid;
  throw ContractError("unknown fusion mode '" + name + "' (expected late|mid)");
}

void StreamConfig::validate() const {
  if (modalities.empty()) throw ContractError("StreamConfig: no modalities");
  std::set<std::string> names;
  for (const auto& m : modalities) {
    if (m.input_dim == 0) throw ContractError("StreamConfig: modality '" + m.name + "' has input_dim 0");
    if (!names.insert(m.name).second) throw ContractError("StreamConfig: duplicate modality '" + m.name + "'");
  }
  if (frames == 0) throw ContractError("StreamConfig: frames must be >= 1");
  if (trm_scales.empty()) throw ContractError("StreamConfig: no TRM scales");
  for (auto k : trm_scales)
    if (k < 2 || k > frames)
      throw ContractError("StreamConfig: TRM scale " + std::to_string(k) + " outside [2, " +
                          std::to_string(frames) + "]");
  for (auto h : extractor_hidden)
    if (h == 0) throw ContractError("StreamConfig: zero-width extractor layer");
  if (embed_dim == 0 || relation_dim == 0 || discriminator_hidden == 0)
    throw ContractError("StreamConfig: zero-width layer");
  if (verb_classes < 2 || noun_classes < 2) throw ContractError("StreamConfig: need >= 2 classes per head");
  if (domain_count < 2) throw ContractError("StreamConfig: need >= 2 domains");
  // Every extractor ends in embed_dim, so mid fusion always sees equal widths.
}

Tensor Linear::forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size() || relu_last) h = relu(h);
  }
  return h;
}

namespace {

std::size_t binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  std::size_t r = 1;
  for (std::size_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::vector<std::vector<std::size_t>> all_subsets(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> cur(k);
  std::iota(cur.begin(), cur.end(), 0);
  while (true) {
    out.push_back(cur);
    std::size_t i = k;
    while (i > 0 && cur[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return out;
}

struct ParamBuilder {
  std::mt19937_64 rng;
  std::vector<std::pair<std::string, Tensor>>* params;

  Tensor uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_size(shape));
    for (auto& x : v) x = dist(rng);
    Tensor t = Tensor::from(std::move(shape), std::move(v), true);
    params->emplace_back(name, t);
    return t;
  }

  Linear linear(const std::string& name, std::size_t in, std::size_t out) {
    Linear l;
    l.weight = uniform(name + ".weight", {in, out}, in);
    l.bias = uniform(name + ".bias", {out}, in);
    return l;
  }

  Mlp mlp(const std::string& name, std::size_t in, const std::vector<std::size_t>& widths, bool relu_last) {
    Mlp m;
    m.relu_last = relu_last;
    std::size_t prev = in;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      m.layers.push_back(linear(name + ".l" + std::to_string(i), prev, widths[i]));
      prev = widths[i];
    }
    return m;
  }
};

}  // namespace

std::vector<std::vector<std::size_t>> trm_subsets(std::size_t frames, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > frames)
    throw ContractError("TRM scale " + std::to_string(k) + " needs at least that many frames, clip has " +
                        std::to_string(frames));
  if (binomial(frames, k) <= kTrmSubsetCap) return all_subsets(frames, k);
  std::mt19937_64 rng(derive_seed(seed, {frames, k}));
  std::set<std::vector<std::size_t>> drawn;
  std::vector<std::size_t> pool(frames);
  while (drawn.size() < kTrmSubsetCap) {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, frames - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<std::size_t> sub(pool.begin(), pool.begin() + static_cast<long>(k));
    std::sort(sub.begin(), sub.end());
    drawn.insert(std::move(sub));
  }
  return {drawn.begin(), drawn.end()};
}

StreamModel::StreamModel(StreamConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  ParamBuilder pb{std::mt19937_64(seed), &params_};

  for (const auto& m : config_.modalities) {
    auto widths = config_.extractor_hidden;
    widths.push_back(config_.embed_dim);
    extractors_.push_back(pb.mlp("extractor." + m.name, m.input_dim, widths, true));
  }

  std::vector<std::string> branch_names;
  if (config_.fusion == FusionMode::Mid)
    branch_names.emplace_back("fused");
  else
    for (const auto& m : config_.modalities) branch_names.push_back(m.name);

  const auto d = config_.embed_dim, dr = config_.relation_dim, dh = config_.discriminator_hidden;
  const auto dom = config_.domain_count;
  for (const auto& bn : branch_names) {
    Branch b;
    b.name = bn;
    const std::string p = "branch." + bn;
    for (auto k : config_.trm_scales)
      b.relation.push_back(pb.linear(p + ".relation.k" + std::to_string(k), k * d, dr));
    b.verb = pb.linear(p + ".verb", dr, config_.verb_classes);
    b.noun = pb.linear(p + ".noun", dr, config_.noun_classes);
    b.disc_frame = pb.mlp(p + ".disc_frame", d, {dh, dom}, false);
    b.disc_relation = pb.mlp(p + ".disc_relation", dr, {dh, dom}, false);
    b.disc_video = pb.mlp(p + ".disc_video", dr, {dh, dom}, false);
    branches_.push_back(std::move(b));
  }
}

StreamModel StreamModel::clone() const {
  StreamModel copy(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].second.values();
    auto dst = copy.params_[i].second.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

Tensor& StreamModel::parameter(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

std::size_t StreamModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.second.size();
  return n;
}

std::vector<Tensor> StreamModel::extract_features(const std::vector<Tensor>& clip) const {
  if (clip.size() != config_.modalities.size())
    throw ContractError("extract_features: clip has " + std::to_string(clip.size()) + " modalities, model expects " +
                        std::to_string(config_.modalities.size()));
  std::vector<Tensor> out;
  out.reserve(clip.size());
  for (std::size_t m = 0; m < clip.size(); ++m) {
    const auto& spec = config_.modalities[m];
    if (!clip[m].defined()) throw ContractError("extract_features: modality '" + spec.name + "' missing");
    if (clip[m].dim() != 2 || clip[m].cols() != spec.input_dim || clip[m].rows() % config_.frames != 0)
      throw ContractError("extract_features: modality '" + spec.name + "' has shape " +
                          shape_string(clip[m].shape()) + ", expected [N·" + std::to_string(config_.frames) +
                          " × " + std::to_string(spec.input_dim) + "]");
    out.push_back(extractors_[m].forward(clip[m]));
  }
  return out;
}

Tensor mid_fusion(const std::vector<Tensor>& embeddings) {
  if (embeddings.empty()) throw ContractError("mid_fusion: no modalities");
  Tensor acc = embeddings.front();
  for (std::size_t i = 1; i < embeddings.size(); ++i) {
    if (embeddings[i].shape() != acc.shape())
      throw ContractError("mid_fusion: embedding widths differ " + shape_string(acc.shape()) + " vs " +
                          shape_string(embeddings[i].shape()));
    acc = acc + embeddings[i];
  }
  return relu(acc);
}

TrmOutput trm_forward(const Tensor& frames, std::size_t frames_per_clip, const std::vector<std::size_t>& scales,
                      const std::vector<Linear>& relation, std::uint64_t subset_seed) {
  if (frames.dim() != 2 || frames.rows() % frames_per_clip != 0)
    throw ContractError("trm_forward: frames " + shape_string(frames.shape()) + " not a multiple of T=" +
                        std::to_string(frames_per_clip));
  if (relation.size() != scales.size()) throw ContractError("trm_forward: one relation map per scale required");
  const std::size_t n = frames.rows() / frames_per_clip, d = frames.cols();
  TrmOutput out;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const std::size_t k = scales[s];
    auto subsets = trm_subsets(frames_per_clip, k, subset_seed);
    std::vector<std::size_t> index;
    index.reserve(n * subsets.size() * k);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& sub : subsets)
        for (auto f : sub) index.push_back(i * frames_per_clip + f);
    Tensor stacked = reshape(gather_rows(frames, index), {n * subsets.size(), k * d});
    Tensor rel = mean_groups(relu(relation[s].forward(stacked)), subsets.size());
    out.relations.push_back(rel);
    out.video = out.video.defined() ? out.video + rel : rel;
  }
  return out;
}

std::vector<double> domain_attention_weights(const Tensor& domain_logits) {
  auto w = normalized_entropy(domain_logits);
  for (auto& x : w) x += 1.0;
  return w;
}

std::vector<Tensor> domain_attention(const std::vector<Tensor>& relations, const std::vector<Tensor>& domain_logits) {
  if (relations.size() != domain_logits.size())
    throw ContractError("domain_attention: one domain-logit matrix per scale required");
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < relations.size(); ++k)
    out.push_back(scale_rows(relations[k], domain_attention_weights(domain_logits[k])));
  return out;
}

std::pair<Tensor, Tensor> classify(const Branch& branch, const Tensor& video) {
  return {branch.verb.forward(video), branch.noun.forward(video)};
}

Tensor discriminate_domain(const Mlp& discriminator, const Tensor& features, double lambda) {
  return discriminator.forward(grad_reverse(features, lambda));
}

Tensor late_fusion(const std::vector<Tensor>& scores) {
  if (scores.empty()) throw ContractError("late_fusion: no modalities");
  Tensor acc = scores.front();
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].shape() != acc.shape())
      throw ContractError("late_fusion: class counts differ " + shape_string(acc.shape()) + " vs " +
                          shape_string(scores[i].shape()));
    acc = acc + scores[i];
  }
  if (scores.size() == 1) return acc;
  return scalar_mul(acc, 1.0 / static_cast<double>(scores.size()));
}

BranchOutput StreamModel::run_branch(const Branch& branch, const Tensor& frames,
                                     const ForwardOptions& opt) const {
  BranchOutput out;
  out.name = branch.name;
  out.frames = frames;
  auto trm = trm_forward(frames, config_.frames, config_.trm_scales, branch.relation, opt.subset_seed);
  out.relations = trm.relations;
  out.video = trm.video;

  if (opt.discriminators) {
    out.frame_domain = discriminate_domain(branch.disc_frame, frames, opt.grl_lambda);
    for (const auto& rel : out.relations)
      out.relation_domain.push_back(discriminate_domain(branch.disc_relation, rel, opt.grl_lambda));
  }
  if (opt.domain_attention) {
    if (!opt.discriminators) throw ContractError("domain attention needs the relation discriminator");
    auto attended = domain_attention(out.relations, out.relation_domain);
    for (const auto& logits : out.relation_domain) out.attention.push_back(domain_attention_weights(logits));
    out.video = attended.front();
    for (std::size_t k = 1; k < attended.size(); ++k) out.video = out.video + attended[k];
  }
  if (opt.discriminators) out.video_domain = discriminate_domain(branch.disc_video, out.video, opt.grl_lambda);

  Tensor head_input = out.video;
  if (opt.dropout > 0.0) {
    if (!opt.rng) throw ContractError("dropout needs an rng");
    head_input = dropout(head_input, opt.dropout, *opt.rng);
  }
  std::tie(out.verb_logits, out.noun_logits) = classify(branch, head_input);
  return out;
}

StreamOutput StreamModel::forward(const std::vector<Tensor>& clip, const ForwardOptions& opt) const {
  StreamOutput out;
  out.embeddings = extract_features(clip);
  if (config_.fusion == FusionMode::Mid) {
    out.branches.push_back(run_branch(branches_.front(), mid_fusion(out.embeddings), opt));
    out.verb = out.branches.front().verb_logits;
    out.noun = out.branches.front().noun_logits;
    return out;
  }
  std::vector<Tensor> verb_scores, noun_scores;
  for (std::size_t m = 0; m < branches_.size(); ++m) {
    out.branches.push_back(run_branch(branches_[m], out.embeddings[m], opt));
    verb_scores.push_back(softmax(out.branches.back().verb_logits));
    noun_scores.push_back(softmax(out.branches.back().noun_logits));
  }
  constexpr double kProbFloor = 1e-12;
  out.verb = log(clamp_min(late_fusion(verb_scores), kProbFloor));
  out.noun = log(clamp_min(late_fusion(noun_scores), kProbFloor));
  return out;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double EnsemblePrediction::agreement() const {
  if (samples == 0) return 0.0;
  const double v = std::accumulate(verb_agree.begin(), verb_agree.end(), 0.0);
  const double n = std::accumulate(noun_agree.begin(), noun_agree.end(), 0.0);
  return 0.5 * (v + n) / static_cast<double>(samples);
}

EnsemblePrediction ensemble_predict(const std::vector<StreamModel>& streams, const std::vector<Tensor>& clip) {
  if (streams.empty()) throw ContractError("ensemble_predict: no streams");
  const auto& cfg = streams.front().config();
  const std::size_t n = clip.front().rows() / cfg.frames;
  const std::size_t cv = cfg.verb_classes, cn = cfg.noun_classes;

  std::vector<std::vector<double>> verb(streams.size()), noun(streams.size());
  const auto count = static_cast<std::int64_t>(streams.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < count; ++s) {
    NoGradGuard no_grad;
    auto out = streams[static_cast<std::size_t>(s)].forward(clip);
    auto pv = softmax(out.verb), pn = softmax(out.noun);
    verb[s].assign(pv.values().begin(), pv.values().end());
    noun[s].assign(pn.values().begin(), pn.values().end());
  }

  EnsemblePrediction pred;
  pred.samples = n;
  pred.verb_scores.assign(n * cv, 0.0);
  pred.noun_scores.assign(n * cn, 0.0);
  for (std::size_t s = 0; s < streams.size(); ++s) {
    for (std::size_t i = 0; i < n * cv; ++i) pred.verb_scores[i] += verb[s][i];
    for (std::size_t i = 0; i < n * cn; ++i) pred.noun_scores[i] += noun[s][i];
  }
  if (streams.size() > 1) {
    const double inv = 1.0 / static_cast<double>(streams.size());
    for (auto& v : pred.verb_scores) v *= inv;
    for (auto& v : pred.noun_scores) v *= inv;
  }
  pred.verb_agree.assign(n, 1);
  pred.noun_agree.assign(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v0 = argmax(std::span<const double>(verb[0]).subspan(i * cv, cv));
    const auto n0 = argmax(std::span<const double>(noun[0]).subspan(i * cn, cn));
    for (std::size_t s = 1; s < streams.size(); ++s) {
      if (argmax(std::span<const double>(verb[s]).subspan(i * cv, cv)) != v0) pred.verb_agree[i] = 0;
      if (argmax(std::span<const double>(noun[s]).subspan(i * cn, cn)) != n0) pred.noun_agree[i] = 0;
    }
  }
  return pred;
}

}  // namespace normalign
