// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>

#include "helpers.hpp"
#include "normalign/errors.hpp"
#include "normalign/gradient_suite.hpp"
#include "normalign/losses.hpp"
#include "normalign/models.hpp"

using namespace normalign;
using normalign::test::random_tensor;

namespace {

StreamConfig small_config(FusionMode fusion = FusionMode::Mid) {
  StreamConfig c;
  c.modalities = {{"rgb", 5}, {"audio", 3}};
  c.frames = 4;
  c.extractor_hidden = {6};
  c.embed_dim = 4;
  c.trm_scales = {2, 3};
  c.relation_dim = 5;
  c.discriminator_hidden = 4;
  c.verb_classes = 3;
  c.noun_classes = 4;
  c.domain_count = 3;
  c.fusion = fusion;
  return c;
}

std::vector<Tensor> random_clip(const StreamConfig& c, std::size_t n, std::mt19937_64& rng) {
  std::vector<Tensor> clip;
  for (const auto& m : c.modalities) clip.push_back(random_tensor({n * c.frames, m.input_dim}, rng, -1, 1, false));
  return clip;
}

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_values()) x = v;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// relu(x·W + b) computed with plain loops.
std::vector<double> affine_relu(const std::vector<double>& x, const Linear& l) {
  const std::size_t in = l.weight.rows(), out = l.weight.cols();
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = l.bias.at(j);
    for (std::size_t i = 0; i < in; ++i) acc += x[i] * l.weight.at(i, j);
    y[j] = std::max(acc, 0.0);
  }
  return y;
}

double entropy(std::span<const double> logits) {
  double mx = *std::max_element(logits.begin(), logits.end()), z = 0;
  for (double l : logits) z += std::exp(l - mx);
  double h = 0;
  for (double l : logits) {
    const double p = std::exp(l - mx) / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace

TEST_CASE("trm_subsets enumeration and sampling") {
  const auto s32 = trm_subsets(3, 2, 0);
  CHECK(s32 == std::vector<std::vector<std::size_t>>{{0, 1}, {0, 2}, {1, 2}});
  CHECK(trm_subsets(2, 2, 5) == std::vector<std::vector<std::size_t>>{{0, 1}});
  CHECK(trm_subsets(5, 2, 1).size() == 10);  // C(5,2) = 10 is still exhaustive
  CHECK(trm_subsets(5, 2, 1) == trm_subsets(5, 2, 99));

  const auto a = trm_subsets(6, 3, 7);
  CHECK(a.size() == kTrmSubsetCap);
  std::set<std::vector<std::size_t>> uniq(a.begin(), a.end());
  CHECK(uniq.size() == kTrmSubsetCap);
  for (const auto& s : a) {
    CHECK(s.size() == 3);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(s.back() < 6);
  }
  CHECK(trm_subsets(6, 3, 7) == a);
  bool differs = false;
  for (std::uint64_t seed = 8; seed < 16 && !differs; ++seed) differs = trm_subsets(6, 3, seed) != a;
  CHECK(differs);

  CHECK_THROWS_AS(trm_subsets(2, 3, 0), ContractError);
}

TEST_CASE("trm_forward matches explicit enumeration") {
  std::mt19937_64 rng(1);
  const std::size_t d = 3, dr = 4;
  Linear g{random_tensor({2 * d, dr}, rng), random_tensor({dr}, rng)};

  SUBCASE("two frames, one subset") {
    auto frames = random_tensor({2, d}, rng, -1, 1, false);
    auto out = trm_forward(frames, 2, {2}, {g}, 0);
    std::vector<double> x(frames.values().begin(), frames.values().end());
    const auto expect = affine_relu(x, g);
    for (std::size_t j = 0; j < dr; ++j) CHECK(out.relations[0].at(0, j) == doctest::Approx(expect[j]).epsilon(1e-14));
    CHECK(same_bits(out.video.values(), out.relations[0].values()));
  }

  SUBCASE("three frames, all ordered pairs") {
    const std::size_t n = 2;
    auto frames = random_tensor({n * 3, d}, rng, -1, 1, false);
    auto out = trm_forward(frames, 3, {2}, {g}, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> acc(dr, 0.0);
      for (auto [p, q] : {std::pair<std::size_t, std::size_t>{0, 1}, {0, 2}, {1, 2}}) {
        std::vector<double> x;
        for (std::size_t j = 0; j < d; ++j) x.push_back(frames.at(i * 3 + p, j));
        for (std::size_t j = 0; j < d; ++j) x.push_back(frames.at(i * 3 + q, j));
        const auto y = affine_relu(x, g);
        for (std::size_t j = 0; j < dr; ++j) acc[j] += y[j] / 3.0;
      }
      for (std::size_t j = 0; j < dr; ++j) CHECK(std::abs(out.relations[0].at(i, j) - acc[j]) <= 1e-12);
    }
  }

  SUBCASE("zero relation maps give a zero video feature") {
    Linear z2{Tensor::zeros({2 * d, dr}), Tensor::zeros({dr})};
    Linear z3{Tensor::zeros({3 * d, dr}), Tensor::zeros({dr})};
    auto frames = random_tensor({8, d}, rng, -1, 1, false);
    auto out = trm_forward(frames, 4, {2, 3}, {z2, z3}, 0);
    for (double v : out.video.values()) CHECK(v == 0.0);
  }

  SUBCASE("video feature is the sum of scales; exhaustive scales ignore the seed") {
    Linear g3{random_tensor({3 * d, dr}, rng), random_tensor({dr}, rng)};
    auto frames = random_tensor({8, d}, rng, -1, 1, false);
    auto a = trm_forward(frames, 4, {2, 3}, {g, g3}, 1);
    auto b = trm_forward(frames, 4, {2, 3}, {g, g3}, 2);
    CHECK(same_bits(a.video.values(), b.video.values()));
    for (std::size_t i = 0; i < a.video.size(); ++i)
      CHECK(a.video.at(i) == a.relations[0].at(i) + a.relations[1].at(i));
  }

  SUBCASE("sampled scales are reproducible for a fixed seed") {
    Linear g3{random_tensor({3 * d, dr}, rng), random_tensor({dr}, rng)};
    auto frames = random_tensor({12, d}, rng, -1, 1, false);
    auto a = trm_forward(frames, 6, {3}, {g3}, 4);
    auto b = trm_forward(frames, 6, {3}, {g3}, 4);
    CHECK(same_bits(a.video.values(), b.video.values()));
  }

  CHECK_THROWS_AS(trm_forward(random_tensor({5, d}, rng), 2, {2}, {g}, 0), ContractError);
}

TEST_CASE("mid_fusion") {
  std::mt19937_64 rng(2);
  auto a = random_tensor({4, 3}, rng, -1, 1, false);
  auto one = mid_fusion({a});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(one.at(i) == std::max(a.at(i), 0.0));

  auto pos = random_tensor({4, 3}, rng, 0, 2, false);
  auto twice = mid_fusion({pos, pos});
  for (std::size_t i = 0; i < pos.size(); ++i) CHECK(twice.at(i) == 2.0 * pos.at(i));

  auto b = random_tensor({4, 3}, rng, -1, 1, false);
  auto c = random_tensor({4, 3}, rng, -1, 1, false);
  auto f = mid_fusion({a, b, c});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(f.at(i) == std::max(a.at(i) + b.at(i) + c.at(i), 0.0));

  CHECK_THROWS_AS(mid_fusion({a, random_tensor({4, 2}, rng)}), ContractError);
}

TEST_CASE("domain attention weights") {
  auto confident = Tensor::matrix({{900, 0, 0}});
  CHECK(domain_attention_weights(confident)[0] == 1.0);
  auto uniform = Tensor::zeros({2, 4});
  for (double w : domain_attention_weights(uniform)) CHECK(std::abs(w - 2.0) <= 1e-15);

  std::mt19937_64 rng(3);
  auto logits = random_tensor({6, 3}, rng, -2, 2, false);
  const auto w = domain_attention_weights(logits);
  for (std::size_t i = 0; i < 6; ++i) {
    const double h = entropy(logits.values().subspan(i * 3, 3)) / std::log(3.0);
    CHECK(std::abs(w[i] - (1.0 + h)) <= 1e-10);
  }

  auto rel = random_tensor({1, 5}, rng);
  auto doubled = domain_attention({rel}, {Tensor::zeros({1, 2})});
  for (std::size_t j = 0; j < 5; ++j) CHECK(doubled[0].at(j) == 2.0 * rel.at(j));
  auto kept = domain_attention({rel}, {confident});
  CHECK(same_bits(kept[0].values(), rel.values()));

  // No gradient reaches the domain logits through the weight.
  auto dl = random_tensor({1, 3}, rng);
  backward(sum(domain_attention({rel}, {dl})[0]));
  CHECK_FALSE(dl.has_grad());
  for (std::size_t j = 0; j < 5; ++j) CHECK(rel.grad()[j] == domain_attention_weights(dl)[0]);
}

TEST_CASE("constant attention keeps the class argmax of zero-bias heads") {
  std::mt19937_64 rng(4);
  Branch b;
  b.verb = Linear{random_tensor({5, 4}, rng), Tensor::zeros({4})};
  b.noun = Linear{random_tensor({5, 3}, rng), Tensor::zeros({3})};
  auto video = random_tensor({8, 5}, rng, -1, 1, false);
  auto [v0, n0] = classify(b, video);
  auto scaled = domain_attention({video}, {Tensor::zeros({8, 2})});
  auto [v1, n1] = classify(b, scaled[0]);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(argmax(v0.values().subspan(i * 4, 4)) == argmax(v1.values().subspan(i * 4, 4)));
    CHECK(argmax(n0.values().subspan(i * 3, 3)) == argmax(n1.values().subspan(i * 3, 3)));
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(v1.at(i, j) - 2.0 * v0.at(i, j)) <= 1e-12);
  }
}

TEST_CASE("classify") {
  Branch b;
  b.verb = Linear{Tensor::zeros({3, 4}), Tensor::zeros({4})};
  b.noun = Linear{Tensor::zeros({3, 2}), Tensor::zeros({2})};
  auto [v, n] = classify(b, Tensor::matrix({{1, 2, 3}}));
  for (double x : v.values()) CHECK(x == 0.0);
  auto p = softmax(v);
  for (double x : p.values()) CHECK(x == 0.25);

  Branch id;
  id.verb = Linear{Tensor::matrix({{1}}), Tensor::zeros({1})};
  id.noun = Linear{Tensor::matrix({{1}}), Tensor::zeros({1})};
  CHECK(classify(id, Tensor::matrix({{0.7}})).first.item() == 0.7);
}

TEST_CASE("discriminate_domain reverses and can block gradients") {
  std::mt19937_64 rng(5);
  Mlp disc{{Linear{random_tensor({4, 3}, rng), random_tensor({3}, rng)},
            Linear{random_tensor({3, 2}, rng), random_tensor({2}, rng)}},
           false};
  auto x = random_tensor({5, 4}, rng);
  auto a = discriminate_domain(disc, x, 0.0);
  auto b = discriminate_domain(disc, x, 0.9);
  CHECK(same_bits(a.values(), b.values()));

  std::vector<std::size_t> dom{0, 1, 1, 0, 1};
  backward(domain_adversarial_loss(discriminate_domain(disc, x, 0.0), dom));
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("late_fusion averages scores") {
  auto a = Tensor::matrix({{0.4, 0.6}});
  auto b = Tensor::matrix({{0.7, 0.3}});
  auto f = late_fusion({a, b});
  CHECK(std::abs(f.at(0, 0) - 0.55) <= 1e-15);
  CHECK(std::abs(f.at(0, 1) - 0.45) <= 1e-15);
  CHECK(argmax(f.values()) == 0);
  CHECK(argmax(a.values()) == 1);

  CHECK(same_bits(late_fusion({a}).values(), a.values()));
  CHECK(same_bits(late_fusion({a, a}).values(), a.values()));

  std::mt19937_64 rng(6);
  std::vector<Tensor> s;
  for (int m = 0; m < 3; ++m) s.push_back(softmax(random_tensor({7, 5}, rng, -3, 3, false)));
  auto fused = late_fusion(s);
  for (std::size_t i = 0; i < 7; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 5; ++j) row += fused.at(i, j);
    CHECK(std::abs(row - 1.0) <= 1e-12);
  }
}

TEST_CASE("extract_features") {
  auto cfg = small_config();
  std::mt19937_64 rng(7);
  auto clip = random_clip(cfg, 3, rng);

  SUBCASE("zero parameters give zero embeddings") {
    StreamModel m(cfg, 1);
    std::vector<std::string> names;
    for (const auto& p : m.parameters())
      if (p.first.rfind("extractor.", 0) == 0) names.push_back(p.first);
    for (const auto& n : names) fill(m.parameter(n), 0.0);
    for (const auto& e : m.extract_features(clip))
      for (double v : e.values()) CHECK(v == 0.0);
  }

  SUBCASE("identity single layer is relu of the input") {
    StreamConfig c = cfg;
    c.modalities = {{"rgb", 4}};
    c.extractor_hidden = {};
    c.embed_dim = 4;
    StreamModel m(c, 1);
    auto& w = m.parameter("extractor.rgb.l0.weight");
    fill(w, 0.0);
    for (std::size_t i = 0; i < 4; ++i) w.mutable_values()[i * 4 + i] = 1.0;
    fill(m.parameter("extractor.rgb.l0.bias"), 0.0);
    auto x = random_tensor({8, 4}, rng, -1, 1, false);
    auto e = m.extract_features({x});
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(e[0].at(i) == std::max(x.at(i), 0.0));
  }

  SUBCASE("same seed, same bits") {
    StreamModel a(cfg, 42), b(cfg, 42);
    auto ea = a.extract_features(clip), eb = b.extract_features(clip);
    for (std::size_t m = 0; m < ea.size(); ++m) CHECK(same_bits(ea[m].values(), eb[m].values()));
  }

  SUBCASE("missing or malformed modality") {
    StreamModel m(cfg, 1);
    CHECK_THROWS_AS(m.extract_features({clip[0]}), ContractError);
    CHECK_THROWS_AS(m.extract_features({clip[0], Tensor()}), ContractError);
    CHECK_THROWS_AS(m.extract_features({clip[0], random_tensor({12, 4}, rng)}), ContractError);
  }
}

TEST_CASE("parameter count is a function of the config") {
  for (auto fusion : {FusionMode::Mid, FusionMode::Late}) {
    auto cfg = small_config(fusion);
    StreamModel a(cfg, 1), b(cfg, 2);
    CHECK(a.parameter_count() == b.parameter_count());
    const std::size_t d = 4, dr = 5, dh = 4, dom = 3;
    std::size_t expect = (5 * 6 + 6 + 6 * d + d) + (3 * 6 + 6 + 6 * d + d);
    const std::size_t branch = (2 * d * dr + dr) + (3 * d * dr + dr) + (dr * 3 + 3) + (dr * 4 + 4) +
                               (d * dh + dh + dh * dom + dom) + 2 * (dr * dh + dh + dh * dom + dom);
    expect += branch * (fusion == FusionMode::Mid ? 1 : 2);
    CHECK(a.parameter_count() == expect);
  }
}

TEST_CASE("init stays within the fan-in bound") {
  StreamModel m(small_config(), 3);
  for (const auto& [name, t] : m.parameters()) {
    double mx = 0;
    for (double v : t.values()) mx = std::max(mx, std::abs(v));
    CHECK(mx <= 1.0);
  }
  auto& w = m.parameter("extractor.rgb.l0.weight");
  for (double v : w.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(5.0));
  CHECK_THROWS_AS(m.parameter("nope"), ContractError);
}

TEST_CASE("stream forward shapes and fusion modes") {
  std::mt19937_64 rng(8);
  for (auto fusion : {FusionMode::Mid, FusionMode::Late}) {
    auto cfg = small_config(fusion);
    StreamModel m(cfg, 9);
    auto clip = random_clip(cfg, 3, rng);
    ForwardOptions opt;
    opt.discriminators = true;
    opt.domain_attention = true;
    opt.grl_lambda = 0.5;
    auto out = m.forward(clip, opt);
    CHECK(out.branches.size() == (fusion == FusionMode::Mid ? 1u : 2u));
    CHECK(out.verb.shape() == Shape{3, 3});
    CHECK(out.noun.shape() == Shape{3, 4});
    for (const auto& b : out.branches) {
      CHECK(b.frame_domain->shape() == Shape{12, 3});
      CHECK(b.relation_domain.size() == 2);
      CHECK(b.video_domain->shape() == Shape{3, 3});
      CHECK(b.attention.size() == 2);
    }
    if (fusion == FusionMode::Late) {
      auto p = softmax(out.verb);
      std::vector<Tensor> branch_scores;
      for (const auto& b : out.branches) branch_scores.push_back(softmax(b.verb_logits));
      auto expect = late_fusion(branch_scores);
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p.at(i) - expect.at(i)) <= 1e-12);
    }
  }

  auto cfg = small_config();
  StreamModel m(cfg, 9);
  ForwardOptions bad;
  bad.domain_attention = true;
  CHECK_THROWS_AS(m.forward(random_clip(cfg, 1, rng), bad), ContractError);
}

TEST_CASE("clone copies values, not handles") {
  StreamModel a(small_config(), 10);
  StreamModel b = a.clone();
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(same_bits(a.parameters()[i].second.values(), b.parameters()[i].second.values()));
  fill(b.parameter("branch.fused.verb.bias"), 5.0);
  CHECK(a.parameter("branch.fused.verb.bias").at(0) != 5.0);
}

TEST_CASE("ensemble_predict") {
  auto cfg = small_config();
  std::mt19937_64 rng(11);
  auto clip = random_clip(cfg, 6, rng);

  std::vector<StreamModel> one;
  one.emplace_back(cfg, 1);
  auto p1 = ensemble_predict(one, clip);
  NoGradGuard guard;
  auto out = one[0].forward(clip);
  CHECK(same_bits(p1.verb_scores, softmax(out.verb).values()));
  CHECK(same_bits(p1.noun_scores, softmax(out.noun).values()));
  CHECK(p1.agreement() == 1.0);

  std::vector<StreamModel> twins;
  twins.emplace_back(cfg, 1);
  twins.push_back(twins[0].clone());
  auto p2 = ensemble_predict(twins, clip);
  for (std::size_t i = 0; i < p2.verb_scores.size(); ++i) CHECK(std::abs(p2.verb_scores[i] - p1.verb_scores[i]) <= 1e-15);
  CHECK(p2.agreement() == 1.0);

  std::vector<StreamModel> mixed;
  mixed.emplace_back(cfg, 1);
  mixed.emplace_back(small_config(FusionMode::Late), 2);
  mixed.emplace_back(cfg, 3);
  auto p3 = ensemble_predict(mixed, clip);
  std::vector<std::vector<double>> per;
  for (const auto& s : mixed) {
    auto v = softmax(s.forward(clip).verb);
    per.emplace_back(v.values().begin(), v.values().end());
  }
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const double mean = (per[0][i * 3 + j] + per[1][i * 3 + j] + per[2][i * 3 + j]) / 3.0;
      CHECK(std::abs(p3.verb_scores[i * 3 + j] - mean) <= 1e-12);
    }
    const auto a0 = argmax(std::span<const double>(per[0]).subspan(i * 3, 3));
    const bool all = a0 == argmax(std::span<const double>(per[1]).subspan(i * 3, 3)) &&
                     a0 == argmax(std::span<const double>(per[2]).subspan(i * 3, 3));
    CHECK(p3.verb_agree[i] == (all ? 1 : 0));
  }
}

TEST_CASE("stream config validation") {
  auto c = small_config();
  c.validate();
  auto bad = c;
  bad.trm_scales = {1};
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = c;
  bad.trm_scales = {5};
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = c;
  bad.modalities.push_back({"rgb", 2});
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = c;
  bad.verb_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  CHECK(fusion_from_string(to_string(FusionMode::Late)) == FusionMode::Late);
  CHECK_THROWS(fusion_from_string("early"));
}

TEST_CASE("gradient suite passes on a few seeds") {
  for (std::uint64_t seed : {0u, 1u}) {
    for (const auto& row : run_gradient_suite(seed)) {
      INFO(row.name);
      CHECK(row.report.passed);
    }
  }
}
