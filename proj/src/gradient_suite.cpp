// SPDX-License-Identifier: Apache-2.0
#include "normalign/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "normalign/losses.hpp"
#include "normalign/models.hpp"
#include "normalign/rng.hpp"

namespace normalign {

namespace {

Tensor randn(Shape shape, std::mt19937_64& rng, double scale = 1.0, double shift = 0.0) {
  std::normal_distribution<double> normal(shift, scale);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::vector<std::size_t> labels(std::size_t n, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = pick(rng);
  return out;
}

std::vector<Tensor> all_parameters(const std::vector<StreamModel>& streams, bool discriminators_only) {
  std::vector<Tensor> out;
  for (const auto& s : streams)
    for (const auto& [name, t] : s.parameters())
      if (!discriminators_only || name.find(".disc_") != std::string::npos) out.push_back(t);
  return out;
}

// Gradient through grad_reverse must equal -lambda times the plain gradient.
CheckReport check_reversal(std::mt19937_64& rng, double step, double tol) {
  const double lambda = 0.37;
  Tensor x = randn({5, 4}, rng);
  Tensor w = randn({4, 3}, rng).detach();
  const auto y = labels(5, 3, rng);
  auto plain = [&] { return domain_adversarial_loss(matmul(x, w), y); };
  x.zero_grad();
  backward(domain_adversarial_loss(matmul(grad_reverse(x, lambda), w), y));
  std::vector<double> reversed(x.grad().begin(), x.grad().end());
  x.zero_grad();

  CheckReport report;
  NoGradGuard no_grad;
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = plain().item();
    values[i] = orig - step;
    const double down = plain().item();
    values[i] = orig;
    const double numeric = -lambda * (up - down) / (2.0 * step);
    const double rel = std::abs(reversed[i] - numeric) / std::max({1.0, std::abs(reversed[i]), std::abs(numeric)});
    if (i == 0 || rel > report.max_rel_error) report = {rel, i, reversed[i], numeric, false};
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error <= tol;
  return report;
}

struct MicroSetup {
  std::vector<StreamModel> streams;
  std::vector<Tensor> source, target;
  std::vector<std::size_t> verbs, nouns, frame_domains, clip_domains;
};

MicroSetup micro_setup(FusionMode fusion, std::mt19937_64& rng) {
  StreamConfig cfg;
  cfg.modalities = {{"a", 4}, {"b", 5}};
  cfg.frames = 2;
  cfg.extractor_hidden = {4};
  cfg.embed_dim = 3;
  cfg.trm_scales = {2};
  cfg.relation_dim = 4;
  cfg.discriminator_hidden = 4;
  cfg.verb_classes = cfg.noun_classes = 2;
  cfg.domain_count = 3;
  cfg.fusion = fusion;
  MicroSetup s;
  s.streams.emplace_back(cfg, rng());
  s.streams.emplace_back(cfg, rng());
  // Positive biases keep the relu units alive, away from kinks and dead
  // extractors whose zero norms would make the ratio terms ill-conditioned.
  for (auto& stream : s.streams)
    for (const auto& [name, t] : stream.parameters())
      if (name.ends_with(".bias"))
        for (auto& v : Tensor(t).mutable_values()) v = 0.3 + std::abs(v);
  const std::size_t n = 3;
  for (const auto& m : cfg.modalities) {
    s.source.push_back(randn({n * cfg.frames, m.input_dim}, rng).detach());
    s.target.push_back(randn({n * cfg.frames, m.input_dim}, rng, 1.5, 0.3).detach());
  }
  s.verbs = labels(n, 2, rng);
  s.nouns = labels(n, 2, rng);
  const auto src_domains = labels(n, 2, rng);
  for (auto d : src_domains) s.frame_domains.insert(s.frame_domains.end(), cfg.frames, d);
  s.frame_domains.insert(s.frame_domains.end(), n * cfg.frames, 2);
  s.clip_domains = src_domains;
  s.clip_domains.insert(s.clip_domains.end(), n, 2);
  return s;
}

// Classification, RNA over source and target, T-HNA and MEC over both streams.
Tensor micro_consistency_loss(const MicroSetup& s) {
  LossParts parts;
  std::vector<std::vector<Tensor>> thna;
  std::vector<Tensor> mec_verb, mec_noun;
  for (const auto& stream : s.streams) {
    const auto so = stream.forward(s.source), to = stream.forward(s.target);
    Tensor cls = classification_loss(so.verb, s.verbs) + classification_loss(so.noun, s.nouns);
    parts.classification = parts.classification.defined() ? parts.classification + cls : cls;
    std::vector<ModalityBatch> sb, tb;
    for (std::size_t m = 0; m < so.embeddings.size(); ++m) {
      sb.push_back({stream.config().modalities[m].name, so.embeddings[m], DomainTag::source(0)});
      tb.push_back({stream.config().modalities[m].name, to.embeddings[m], DomainTag::target()});
    }
    Tensor rna = rna_uda_loss(sb, tb);
    parts.rna = parts.rna ? *parts.rna + rna : rna;
    std::vector<Tensor> scales;
    for (std::size_t b = 0; b < so.branches.size(); ++b)
      for (std::size_t k = 0; k < so.branches[b].relations.size(); ++k)
        scales.push_back(concat({so.branches[b].relations[k], to.branches[b].relations[k]}, 0));
    thna.push_back(scales);
    mec_verb.push_back(to.verb);
    mec_noun.push_back(to.noun);
  }
  parts.thna = thna_loss(thna, 2.0);
  parts.mec = mec_loss(mec_verb) + mec_loss(mec_noun);
  LossWeights w;
  w.lambda_thna = 0.05;
  w.lambda_mec = 0.5;
  return total_uda_loss(parts, w);
}

// Classification plus the three adversarial levels.
Tensor micro_adversarial_loss(const MicroSetup& s) {
  ForwardOptions opt;
  opt.discriminators = true;
  opt.grl_lambda = 0.5;
  LossParts parts;
  for (const auto& stream : s.streams) {
    const auto so = stream.forward(s.source, opt), to = stream.forward(s.target, opt);
    Tensor cls = classification_loss(so.verb, s.verbs) + classification_loss(so.noun, s.nouns);
    parts.classification = parts.classification.defined() ? parts.classification + cls : cls;
    for (std::size_t b = 0; b < so.branches.size(); ++b) {
      const auto& sb = so.branches[b];
      const auto& tb = to.branches[b];
      Tensor f = domain_adversarial_loss(concat({*sb.frame_domain, *tb.frame_domain}, 0), s.frame_domains);
      Tensor r = domain_adversarial_loss(concat({sb.relation_domain[0], tb.relation_domain[0]}, 0), s.clip_domains);
      for (std::size_t k = 1; k < sb.relation_domain.size(); ++k)
        r = r + domain_adversarial_loss(concat({sb.relation_domain[k], tb.relation_domain[k]}, 0), s.clip_domains);
      Tensor v = domain_adversarial_loss(concat({*sb.video_domain, *tb.video_domain}, 0), s.clip_domains);
      parts.adversarial[0] = parts.adversarial[0] ? *parts.adversarial[0] + f : f;
      parts.adversarial[1] = parts.adversarial[1] ? *parts.adversarial[1] + r : r;
      parts.adversarial[2] = parts.adversarial[2] ? *parts.adversarial[2] + v : v;
    }
  }
  return total_uda_loss(parts, LossWeights{});
}

}  // namespace

std::vector<GradientCheckRow> run_gradient_suite(std::uint64_t seed, double step, double tol) {
  std::vector<GradientCheckRow> rows;
  std::mt19937_64 rng(derive_seed(seed, {7}));
  auto add = [&](std::string name, CheckReport r) { rows.push_back({std::move(name), r}); };

  {
    Tensor a = randn({8, 16}, rng), b = randn({8, 32}, rng, 2.0);
    add("rna", finite_diff_check(
                   [&] {
                     std::vector<ModalityBatch> mb{{"a", a, DomainTag::source(0)}, {"b", b, DomainTag::source(0)}};
                     return rna_loss(mb);
                   },
                   {a, b}, step, tol));
  }
  {
    Tensor a = randn({6, 5}, rng), b = randn({6, 7}, rng, 2.0), c = randn({6, 3}, rng, 0.5);
    add("rna_three_modalities", finite_diff_check(
                                    [&] {
                                      std::vector<ModalityBatch> mb{{"a", a}, {"b", b}, {"c", c}};
                                      return rna_loss(mb);
                                    },
                                    {a, b, c}, step, tol));
  }
  {
    Tensor sa = randn({6, 5}, rng), sb = randn({6, 7}, rng, 3.0), ta = randn({4, 5}, rng), tb = randn({4, 7}, rng, 0.5);
    add("rna_uda", finite_diff_check(
                       [&] {
                         std::vector<ModalityBatch> s{{"a", sa, DomainTag::source(0)}, {"b", sb, DomainTag::source(0)}};
                         std::vector<ModalityBatch> t{{"a", ta}, {"b", tb}};
                         return rna_uda_loss(s, t);
                       },
                       {sa, sb, ta, tb}, step, tol));
  }
  {
    std::vector<std::vector<Tensor>> feats(2);
    std::vector<Tensor> inputs;
    for (auto& backbone : feats)
      for (std::size_t t = 0; t < 3; ++t) {
        backbone.push_back(randn({5, 4 + t}, rng, 10.0));
        inputs.push_back(backbone.back());
      }
    add("thna", finite_diff_check([&] { return thna_loss(feats, 40.0); }, inputs, step, tol));
  }
  {
    Tensor a = randn({4, 3}, rng), b = randn({4, 3}, rng);
    add("mec", finite_diff_check(
                   [&] {
                     std::vector<Tensor> s{a, b};
                     return mec_loss(s);
                   },
                   {a, b}, step, tol));
  }
  {
    Tensor logits = randn({7, 5}, rng);
    const auto y = labels(7, 5, rng);
    add("cross_entropy", finite_diff_check([&](const Tensor& x) { return classification_loss(x, y); }, logits, step, tol));
  }
  {
    Tensor x = randn({6, 4}, rng), w1 = randn({4, 5}, rng, 0.5), b1 = randn({5}, rng, 0.1), w2 = randn({5, 3}, rng, 0.5);
    const auto y = labels(6, 3, rng);
    add("adversarial", finite_diff_check(
                           [&] { return domain_adversarial_loss(matmul(relu(add_bias(matmul(x, w1), b1)), w2), y); },
                           {x, w1, b1, w2}, step, tol));
  }
  add("gradient_reversal", check_reversal(rng, step, tol));
  {
    Tensor cls = randn({6, 4}, rng);
    Tensor dom = randn({6, 3}, rng).detach();
    add("attentive_entropy",
        finite_diff_check([&](const Tensor& x) { return attentive_entropy_loss(x, dom); }, cls, step, tol));
  }
  {
    Tensor r1 = randn({5, 4}, rng), r2 = randn({5, 4}, rng);
    const std::vector<Tensor> dom{randn({5, 3}, rng).detach(), randn({5, 3}, rng).detach()};
    Tensor head = randn({4, 2}, rng).detach();
    const auto y = labels(5, 2, rng);
    add("domain_attention", finite_diff_check(
                                [&] {
                                  auto att = domain_attention({r1, r2}, dom);
                                  return classification_loss(matmul(att[0] + att[1], head), y);
                                },
                                {r1, r2}, step, tol));
  }
  {
    auto s = micro_setup(FusionMode::Mid, rng);
    add("end_to_end_mid", finite_diff_check([&] { return micro_consistency_loss(s); },
                                            all_parameters(s.streams, false), step, tol));
  }
  {
    auto s = micro_setup(FusionMode::Late, rng);
    add("end_to_end_late", finite_diff_check([&] { return micro_consistency_loss(s); },
                                             all_parameters(s.streams, false), step, tol));
  }
  {
    auto s = micro_setup(FusionMode::Mid, rng);
    add("end_to_end_discriminators", finite_diff_check([&] { return micro_adversarial_loss(s); },
                                                       all_parameters(s.streams, true), step, tol));
  }
  return rows;
}

}  // namespace normalign
