// SPDX-License-Identifier: Apache-2.0
#include "normalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <sstream>

#include "normalign/errors.hpp"
#include "normalign/rng.hpp"

namespace normalign {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::SourceOnly: return "source_only";
    case TrainMode::DgRna: return "dg_rna";
    case TrainMode::UdaFull: return "uda_full";
    case TrainMode::Custom: return "custom";
  }
  return {};
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "source_only") return TrainMode::SourceOnly;
  if (name == "dg_rna") return TrainMode::DgRna;
  if (name == "uda_full") return TrainMode::UdaFull;
  if (name == "custom") return TrainMode::Custom;
  throw ContractError("unknown mode '" + name + "' (source_only, dg_rna, uda_full, custom)");
}

LossMask mask_for(TrainMode mode) {
  LossMask m;
  switch (mode) {
    case TrainMode::SourceOnly:
    case TrainMode::Custom: break;
    case TrainMode::DgRna: m.rna = true; break;
    case TrainMode::UdaFull:
      m = LossMask{true, true, true, true, true, true, true};
      break;
  }
  return m;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor", "must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must be in [0, 1)");
  if (streams.empty()) throw ConfigError("streams", "at least one stream required");
  try {
    weights.validate();
  } catch (const ContractError& e) {
    throw ConfigError("weights", e.what());
  }
  if (eval_split == "target_train") throw ConfigError("eval_split", "target_train has no labels");
  if (eval_split != "source") {
    try {
      SplitTag::parse(eval_split);
    } catch (const ContractError& e) {
      throw ConfigError("eval_split", e.what());
    }
  }
}

std::vector<StreamConfig> bind_streams(const TrainConfig& config, const DatasetSpec& spec) {
  std::vector<StreamConfig> out;
  for (std::size_t i = 0; i < config.streams.size(); ++i) {
    StreamConfig s = config.streams[i];
    s.modalities = spec.modalities;
    s.frames = spec.frames;
    s.verb_classes = spec.verb_classes;
    s.noun_classes = spec.noun_classes;
    s.domain_count = spec.num_source_domains + 1;
    try {
      s.validate();
    } catch (const ContractError& e) {
      throw ConfigError("streams[" + std::to_string(i) + "]", e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<StreamModel> build_streams(const TrainConfig& config, const DatasetSpec& spec) {
  std::vector<StreamModel> streams;
  const auto configs = bind_streams(config, spec);
  for (std::size_t i = 0; i < configs.size(); ++i) streams.emplace_back(configs[i], derive_seed(config.seed, {100, i}));
  return streams;
}

double grl_lambda(double progress) { return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0; }

double learning_rate_at(const TrainConfig& config, std::size_t epoch) {
  double lr = config.learning_rate;
  for (auto e : config.lr_decay_epochs)
    if (epoch > e) lr *= config.lr_decay_factor;
  return lr;
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr, double momentum,
              std::span<double> velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size())
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                         " grads, " + std::to_string(velocity.size()) + " velocities");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, double momentum)
    : params_(std::move(params)), momentum_(momentum) {
  for (const auto& p : params_) velocity_.emplace_back(p.size(), 0.0);
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void SgdOptimizer::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    sgd_step(params_[i].mutable_values(), params_[i].grad(), lr, momentum_, velocity_[i]);
  }
}

// --- evaluation ------------------------------------------------------------------

namespace {

// Position of `truth` when scores are sorted descending, ties broken by index.
std::size_t rank_of(std::span<const double> scores, std::size_t truth) {
  std::size_t r = 0;
  const double t = scores[truth];
  for (std::size_t c = 0; c < scores.size(); ++c)
    if (scores[c] > t || (scores[c] == t && c < truth)) ++r;
  return r;
}

double pct(std::size_t hits, std::size_t n) { return n == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / n; }

}  // namespace

EvalMetrics metrics_from_scores(const EnsemblePrediction& pred, std::span<const ClipLabels> labels) {
  if (labels.size() != pred.samples) throw ContractError("metrics_from_scores: label count differs from samples");
  const std::size_t n = pred.samples;
  const std::size_t cv = n ? pred.verb_scores.size() / n : 0, cn = n ? pred.noun_scores.size() / n : 0;
  std::size_t v1 = 0, v5 = 0, n1 = 0, n5 = 0, a1 = 0, a5 = 0;
  std::vector<double> pair(cv * cn);
  for (std::size_t i = 0; i < n; ++i) {
    auto vs = std::span<const double>(pred.verb_scores).subspan(i * cv, cv);
    auto ns = std::span<const double>(pred.noun_scores).subspan(i * cn, cn);
    const auto rv = rank_of(vs, labels[i].verb), rn = rank_of(ns, labels[i].noun);
    v1 += rv == 0;
    v5 += rv < 5;
    n1 += rn == 0;
    n5 += rn < 5;
    a1 += rv == 0 && rn == 0;
    for (std::size_t a = 0; a < cv; ++a)
      for (std::size_t b = 0; b < cn; ++b) pair[a * cn + b] = vs[a] * ns[b];
    a5 += rank_of(pair, labels[i].verb * cn + labels[i].noun) < 5;
  }
  EvalMetrics m;
  m.samples = n;
  m.verb_top1 = pct(v1, n);
  m.verb_top5 = pct(v5, n);
  m.noun_top1 = pct(n1, n);
  m.noun_top5 = pct(n5, n);
  m.action_top1 = pct(a1, n);
  m.action_top5 = pct(a5, n);
  m.agreement = 100.0 * pred.agreement();
  return m;
}

EvalMetrics evaluate(const std::vector<StreamModel>& streams, const FeatureDataset& dataset, const std::string& split) {
  if (!dataset.has_labels(split)) throw ContractError("evaluate: split '" + split + "' has no labels");
  const auto clips = dataset.indices(split);
  if (clips.empty()) throw ContractError("evaluate: split '" + split + "' is empty");
  std::vector<ClipLabels> labels;
  labels.reserve(clips.size());
  for (auto c : clips) labels.push_back(dataset.labels(c));
  return metrics_from_scores(ensemble_predict(streams, dataset.gather(clips)), labels);
}

std::vector<std::vector<double>> norm_stats(const std::vector<StreamModel>& streams, const FeatureDataset& dataset,
                                            const std::string& split) {
  NoGradGuard no_grad;
  const auto clips = dataset.indices(split);
  const std::size_t mcount = dataset.modality_count();
  std::vector<std::vector<double>> out(streams.size(), std::vector<double>(mcount, 0.0));
  if (clips.empty()) return out;
  constexpr std::size_t kChunk = 256;
  std::size_t rows = 0;
  for (std::size_t start = 0; start < clips.size(); start += kChunk) {
    auto chunk = std::span<const std::size_t>(clips).subspan(start, std::min(kChunk, clips.size() - start));
    const auto input = dataset.gather(chunk);
    rows += input.front().rows();
    for (std::size_t s = 0; s < streams.size(); ++s) {
      const auto emb = streams[s].extract_features(input);
      for (std::size_t m = 0; m < mcount; ++m) {
        const auto v = emb[m].values();
        const std::size_t d = emb[m].cols();
        for (std::size_t r = 0; r < emb[m].rows(); ++r) {
          double sq = 0.0;
          for (std::size_t c = 0; c < d; ++c) sq += v[r * d + c] * v[r * d + c];
          out[s][m] += std::sqrt(sq + kNormEpsilon);
        }
      }
    }
  }
  for (auto& row : out)
    for (auto& x : row) x /= static_cast<double>(rows);
  return out;
}

double norm_ratio(std::span<const double> modality_norms) {
  if (modality_norms.empty()) throw ContractError("norm_ratio: no modalities");
  const auto [lo, hi] = std::minmax_element(modality_norms.begin(), modality_norms.end());
  return *hi / *lo;
}

// --- training ----------------------------------------------------------------------

namespace {

struct ActiveTerms {
  bool rna = false, rna_target = false;
  std::array<bool, 3> adversarial{};
  bool attention = false, attentive_entropy = false, thna = false, mec = false;
  bool discriminators() const {
    return adversarial[0] || adversarial[1] || adversarial[2] || attention || attentive_entropy;
  }
  bool target() const { return rna_target || discriminators() || thna || mec; }
};

// Terms with a zero weight are not computed at all.
ActiveTerms active_terms(const TrainConfig& c) {
  const LossMask m = c.mask();
  const auto& w = c.weights;
  const bool multi = c.streams.size() >= 2;
  ActiveTerms t;
  t.rna = m.rna && w.lambda_rna > 0.0;
  t.rna_target = t.rna && m.rna_target;
  for (std::size_t l = 0; l < 3; ++l) t.adversarial[l] = m.adversarial && w.beta_levels[l] > 0.0;
  t.attention = m.domain_attention && (t.adversarial[0] || t.adversarial[1] || t.adversarial[2]);
  t.attentive_entropy = m.attentive_entropy && w.gamma_attentive > 0.0;
  t.thna = m.thna && w.lambda_thna > 0.0 && (multi || c.thna_single_stream);
  t.mec = m.mec && w.lambda_mec > 0.0 && multi;
  return t;
}

std::vector<ModalityBatch> modality_batches(const StreamConfig& cfg, const std::vector<Tensor>& emb, DomainTag tag) {
  std::vector<ModalityBatch> out;
  for (std::size_t m = 0; m < emb.size(); ++m) out.push_back({cfg.modalities[m].name, emb[m], tag});
  return out;
}

Tensor both(const Tensor& src, const std::optional<Tensor>& tgt) { return tgt ? concat({src, *tgt}, 0) : src; }

Tensor accumulate(const std::optional<Tensor>& acc, const Tensor& x) { return acc ? *acc + x : x; }

// log p(verb, noun) = log p(verb) + log p(noun), as [N × C_v·C_n].
Tensor action_log_probs(const Tensor& verb, const Tensor& noun) {
  const std::size_t cv = verb.cols(), cn = noun.cols();
  std::vector<double> ev(cv * cv * cn, 0.0), en(cn * cv * cn, 0.0);
  for (std::size_t a = 0; a < cv; ++a)
    for (std::size_t b = 0; b < cn; ++b) {
      ev[a * cv * cn + a * cn + b] = 1.0;
      en[b * cv * cn + a * cn + b] = 1.0;
    }
  return matmul(log_softmax(verb), Tensor::from({cv, cv * cn}, std::move(ev))) +
         matmul(log_softmax(noun), Tensor::from({cn, cv * cn}, std::move(en)));
}

void check_finite(const std::string& name, const std::optional<Tensor>& t) {
  if (t && !std::isfinite(t->item()))
    throw NumericalAbort(name, "loss term '" + name + "' became non-finite (" + std::to_string(t->item()) + ")");
}

std::vector<std::string> norm_splits(const DatasetSpec& spec) {
  std::vector<std::string> s{"source"};
  for (std::size_t k = 0; k < spec.num_source_domains; ++k) s.push_back("source_" + std::to_string(k));
  s.push_back("target_train");
  s.push_back("target_test");
  return s;
}

EpochRecord snapshot(const std::vector<StreamModel>& streams, const FeatureDataset& dataset, const TrainConfig& config,
                     std::size_t epoch) {
  EpochRecord r;
  r.epoch = epoch;
  r.metrics = evaluate(streams, dataset, config.eval_split);
  const auto& spec = dataset.spec();
  for (const auto& split : norm_splits(spec)) {
    if (dataset.indices(split).empty()) continue;
    const auto stats = norm_stats(streams, dataset, split);
    for (std::size_t s = 0; s < streams.size(); ++s)
      for (std::size_t m = 0; m < spec.modalities.size(); ++m)
        r.norms["s" + std::to_string(s) + "/" + spec.modalities[m].name + "/" + split] = stats[s][m];
  }
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& config, const FeatureDataset& dataset) {
  config.validate();
  const auto& spec = dataset.spec();
  const ActiveTerms terms = active_terms(config);
  if (terms.rna && spec.modalities.size() < 2) throw ConfigError("mode", "RNA needs at least two modalities");

  TrainResult result;
  result.report.config = config;
  result.report.streams = bind_streams(config, spec);
  result.streams = build_streams(config, spec);
  auto& streams = result.streams;

  std::vector<Tensor> params;
  for (const auto& s : streams)
    for (const auto& p : s.parameters()) params.push_back(p.second);
  SgdOptimizer optimizer(params, config.momentum);

  std::vector<std::mt19937_64> dropout_rng;
  for (std::size_t i = 0; i < streams.size(); ++i) dropout_rng.emplace_back(derive_seed(config.seed, {400, i}));

  const std::uint64_t shuffle_seed = derive_seed(config.seed, {300});
  const std::size_t frames = spec.frames;
  const std::size_t target_domain = spec.num_source_domains;
  const auto& w = config.weights;

  result.report.epochs.push_back(snapshot(streams, dataset, config, 0));
  result.report.epochs.back().learning_rate = learning_rate_at(config, 1);

  std::size_t global_step = 0;
  std::size_t steps_per_epoch = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = learning_rate_at(config, epoch);
    auto source = batches(dataset, "source", config.batch_size, shuffle_seed, epoch);
    std::vector<UdaStep> steps;
    if (terms.target()) {
      steps = zip_cycled(source, batches(dataset, "target_train", config.batch_size, shuffle_seed, epoch));
    } else {
      for (auto& b : source) steps.push_back({std::move(b), {}});
    }
    if (steps_per_epoch == 0) steps_per_epoch = steps.size();
    const double total_steps = static_cast<double>(steps_per_epoch * config.epochs);

    std::map<std::string, double> sums;
    for (std::size_t step = 0; step < steps.size(); ++step, ++global_step) {
      const auto src = make_labeled_batch(dataset, steps[step].source);
      std::optional<UnlabeledBatch> tgt;
      if (terms.target()) tgt = make_unlabeled_batch(dataset, steps[step].target);

      ForwardOptions opt;
      opt.discriminators = terms.discriminators();
      opt.domain_attention = terms.attention;
      opt.grl_lambda = grl_lambda(std::min(1.0, static_cast<double>(global_step) / total_steps));
      opt.dropout = config.dropout;
      opt.subset_seed = derive_seed(config.seed, {200, global_step});

      std::vector<std::size_t> frame_domains, clip_domains;
      for (auto d : src.domains)
        for (std::size_t t = 0; t < frames; ++t) frame_domains.push_back(d);
      clip_domains = src.domains;
      if (tgt) {
        frame_domains.insert(frame_domains.end(), tgt->clips.size() * frames, target_domain);
        clip_domains.insert(clip_domains.end(), tgt->clips.size(), target_domain);
      }

      LossParts parts;
      std::optional<Tensor> cls;
      std::vector<std::vector<Tensor>> thna_features;
      std::vector<Tensor> mec_verb, mec_noun;
      for (std::size_t s = 0; s < streams.size(); ++s) {
        opt.rng = &dropout_rng[s];
        const auto& cfg = streams[s].config();
        const StreamOutput so = streams[s].forward(src.features, opt);
        std::optional<StreamOutput> to;
        if (tgt) to = streams[s].forward(tgt->features, opt);

        cls = accumulate(cls, classification_loss(so.verb, src.verbs) + classification_loss(so.noun, src.nouns));

        if (terms.rna) {
          const auto sb = modality_batches(cfg, so.embeddings, DomainTag::source(0));
          Tensor r = terms.rna_target ? rna_uda_loss(sb, modality_batches(cfg, to->embeddings, DomainTag::target()))
                                      : rna_loss(sb);
          parts.rna = accumulate(parts.rna, r);
        }

        const double inv_branches = 1.0 / static_cast<double>(so.branches.size());
        std::array<std::optional<Tensor>, 3> adv;
        std::optional<Tensor> ae;
        std::vector<Tensor> stream_thna;
        for (std::size_t b = 0; b < so.branches.size(); ++b) {
          const auto& sb = so.branches[b];
          const BranchOutput* tb = to ? &to->branches[b] : nullptr;
          if (terms.adversarial[0])
            adv[0] = accumulate(adv[0], domain_adversarial_loss(
                                            both(*sb.frame_domain, tb ? tb->frame_domain : std::nullopt), frame_domains));
          if (terms.adversarial[1]) {
            std::optional<Tensor> rel;
            for (std::size_t k = 0; k < sb.relation_domain.size(); ++k) {
              const auto t = tb ? std::optional<Tensor>(tb->relation_domain[k]) : std::nullopt;
              rel = accumulate(rel, domain_adversarial_loss(both(sb.relation_domain[k], t), clip_domains));
            }
            adv[1] = accumulate(adv[1], *rel * (1.0 / static_cast<double>(sb.relation_domain.size())));
          }
          if (terms.adversarial[2])
            adv[2] = accumulate(adv[2], domain_adversarial_loss(
                                            both(*sb.video_domain, tb ? tb->video_domain : std::nullopt), clip_domains));
          if (terms.attentive_entropy) {
            const Tensor dom = both(*sb.video_domain, tb ? tb->video_domain : std::nullopt);
            const auto tv = tb ? std::optional<Tensor>(tb->verb_logits) : std::nullopt;
            const auto tn = tb ? std::optional<Tensor>(tb->noun_logits) : std::nullopt;
            ae = accumulate(ae, attentive_entropy_loss(both(sb.verb_logits, tv), dom) +
                                    attentive_entropy_loss(both(sb.noun_logits, tn), dom));
          }
          if (terms.thna)
            for (std::size_t k = 0; k < sb.relations.size(); ++k)
              stream_thna.push_back(
                  both(sb.relations[k], tb ? std::optional<Tensor>(tb->relations[k]) : std::nullopt));
        }
        for (std::size_t l = 0; l < 3; ++l)
          if (adv[l]) parts.adversarial[l] = accumulate(parts.adversarial[l], *adv[l] * inv_branches);
        if (ae) parts.attentive_entropy = accumulate(parts.attentive_entropy, *ae * inv_branches);
        if (terms.thna) thna_features.push_back(std::move(stream_thna));
        if (terms.mec) {
          mec_verb.push_back(to->verb);
          mec_noun.push_back(to->noun);
        }
      }
      parts.classification = *cls;
      if (terms.thna) parts.thna = thna_loss(thna_features, w.radius_R);
      if (terms.mec) {
        if (config.mec_target == MecTarget::PerHead) {
          parts.mec = mec_loss(mec_verb) + mec_loss(mec_noun);
        } else {
          std::vector<Tensor> action;
          for (std::size_t s = 0; s < mec_verb.size(); ++s) action.push_back(action_log_probs(mec_verb[s], mec_noun[s]));
          parts.mec = mec_loss(action);
        }
      }

      check_finite("classification", parts.classification);
      check_finite("rna", parts.rna);
      check_finite("adversarial_frame", parts.adversarial[0]);
      check_finite("adversarial_relation", parts.adversarial[1]);
      check_finite("adversarial_video", parts.adversarial[2]);
      check_finite("attentive_entropy", parts.attentive_entropy);
      check_finite("thna", parts.thna);
      check_finite("mec", parts.mec);
      const Tensor total = total_uda_loss(parts, w);
      check_finite("total", total);

      sums["classification"] += parts.classification.item();
      if (parts.rna) sums["rna"] += parts.rna->item();
      if (parts.adversarial[0]) sums["adversarial_frame"] += parts.adversarial[0]->item();
      if (parts.adversarial[1]) sums["adversarial_relation"] += parts.adversarial[1]->item();
      if (parts.adversarial[2]) sums["adversarial_video"] += parts.adversarial[2]->item();
      if (parts.attentive_entropy) sums["attentive_entropy"] += parts.attentive_entropy->item();
      if (parts.thna) sums["thna"] += parts.thna->item();
      if (parts.mec) sums["mec"] += parts.mec->item();
      sums["total"] += total.item();

      optimizer.zero_grad();
      backward(total);
      optimizer.step(lr);
    }

    EpochRecord rec = snapshot(streams, dataset, config, epoch);
    rec.learning_rate = lr;
    rec.grl_lambda = terms.discriminators() ? grl_lambda(static_cast<double>(epoch) / config.epochs) : 0.0;
    for (const auto& [k, v] : sums) rec.losses[k] = v / static_cast<double>(steps.size());
    result.report.epochs.push_back(std::move(rec));
  }
  result.report.target_label_reads = dataset.target_label_reads();
  return result;
}

// --- presets -------------------------------------------------------------------------

std::vector<std::string> preset_names() { return {"table2-left", "table2-right"}; }

std::vector<PresetRow> preset_rows(const std::string& name, const TrainConfig& base) {
  std::vector<PresetRow> rows;
  auto row = [&](std::string n, TrainMode mode, std::optional<LossMask> mask, std::size_t stream_count) {
    TrainConfig c = base;
    c.mode = mode;
    if (mask) c.custom_mask = *mask;
    const StreamConfig arch = base.streams.front();
    c.streams.assign(stream_count, arch);
    rows.push_back({std::move(n), std::move(c)});
  };
  if (name == "table2-right") {
    LossMask ta3n;
    ta3n.adversarial = ta3n.domain_attention = ta3n.attentive_entropy = true;
    row("source_only", TrainMode::SourceOnly, std::nullopt, 1);
    row("ta3n", TrainMode::Custom, ta3n, 1);
    row("dg_rna", TrainMode::DgRna, std::nullopt, 1);
    row("ta3n_rna", TrainMode::UdaFull, std::nullopt, 1);
  } else if (name == "table2-left") {
    LossMask ensemble = mask_for(TrainMode::UdaFull);
    ensemble.thna = ensemble.mec = false;
    LossMask with_thna = ensemble;
    with_thna.thna = true;
    row("ensemble", TrainMode::Custom, ensemble, 2);
    row("ensemble_thna", TrainMode::Custom, with_thna, 2);
    row("ensemble_thna_mec", TrainMode::UdaFull, std::nullopt, 2);
  } else {
    throw ContractError("unknown preset '" + name + "' (table2-left, table2-right)");
  }
  return rows;
}

DatasetSpec default_preset_spec() {
  DatasetSpec spec;
  spec.norm_scales["audio"] = {2.0, 4.0, 6.0, 3.0};
  return spec;
}

TrainConfig default_preset_config() {
  TrainConfig c;
  c.learning_rate = 0.01;
  c.weights.radius_R = 15.0;
  c.weights.lambda_mec = 0.3;
  return c;
}

namespace {

EvalMetrics combine(const std::vector<EvalMetrics>& v, bool stddev) {
  EvalMetrics out;
  const double n = static_cast<double>(v.size());
  auto stat = [&](double EvalMetrics::*f) {
    double mu = 0.0;
    for (const auto& m : v) mu += m.*f;
    mu /= n;
    if (!stddev) return mu;
    double var = 0.0;
    for (const auto& m : v) var += (m.*f - mu) * (m.*f - mu);
    return std::sqrt(var / n);
  };
  out.samples = v.empty() ? 0 : v.front().samples;
  for (auto f : {&EvalMetrics::verb_top1, &EvalMetrics::verb_top5, &EvalMetrics::noun_top1, &EvalMetrics::noun_top5,
                 &EvalMetrics::action_top1, &EvalMetrics::action_top5, &EvalMetrics::agreement})
    out.*f = stat(f);
  return out;
}

}  // namespace

PresetResult run_preset(const std::string& name, const DatasetSpec& spec, const TrainConfig& base,
                        std::span<const std::uint64_t> seeds, std::size_t threads) {
  if (seeds.empty()) throw ContractError("run_preset: at least one seed required");
  const auto rows = preset_rows(name, base);
  std::vector<FeatureDataset> datasets;
  for (auto seed : seeds) {
    DatasetSpec s = spec;
    s.seed = seed;
    datasets.push_back(generate(s));
  }

  const std::size_t jobs = rows.size() * seeds.size();
  std::vector<EvalMetrics> metrics(jobs);
  std::vector<double> ratios(jobs);
  std::vector<std::exception_ptr> errors(jobs);
  const auto count = static_cast<std::int64_t>(jobs);
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(std::max<std::size_t>(1, threads)))
  for (std::int64_t j = 0; j < count; ++j) {
    const std::size_t r = static_cast<std::size_t>(j) / seeds.size(), k = static_cast<std::size_t>(j) % seeds.size();
    try {
      TrainConfig c = rows[r].config;
      c.seed = seeds[k];
      const auto res = train(c, datasets[k]);
      const auto& last = res.report.epochs.back();
      metrics[j] = last.metrics;
      std::vector<double> norms;
      for (const auto& m : spec.modalities) norms.push_back(last.norms.at("s0/" + m.name + "/source"));
      ratios[j] = norm_ratio(norms);
    } catch (...) {
      errors[j] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  PresetResult out;
  out.name = name;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    PresetRowResult row;
    row.name = rows[r].name;
    row.seeds.assign(seeds.begin(), seeds.end());
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      row.per_seed.push_back(metrics[r * seeds.size() + k]);
      row.final_norm_ratio.push_back(ratios[r * seeds.size() + k]);
    }
    row.mean = combine(row.per_seed, false);
    row.stddev = combine(row.per_seed, true);
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string preset_csv(const PresetResult& result) {
  std::ostringstream os;
  os << "row,verb_top1_mean,verb_top1_std,noun_top1_mean,noun_top1_std,action_top1_mean,action_top1_std\n";
  char buf[256];
  for (const auto& r : result.rows) {
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.name.c_str(), r.mean.verb_top1,
                  r.stddev.verb_top1, r.mean.noun_top1, r.stddev.noun_top1, r.mean.action_top1, r.stddev.action_top1);
    os << buf;
  }
  return os.str();
}

}  // namespace normalign
