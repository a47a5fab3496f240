// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "helpers.hpp"
#include "normalign/config.hpp"
#include "normalign/data.hpp"
#include "normalign/errors.hpp"

using namespace normalign;
namespace fs = std::filesystem;

namespace {

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.num_source_domains = 2;
  s.modalities = {{"rgb", 6}, {"audio", 4}};
  s.frames = 3;
  s.verb_classes = 3;
  s.noun_classes = 2;
  s.samples_per_domain = 20;
  s.norm_scales = {{"audio", {1.0, 2.0, 3.0}}};
  s.seed = 5;
  return s;
}

std::vector<std::vector<double>> class_means(const FeatureDataset& ds, const std::string& split, std::size_t m) {
  const auto& spec = ds.spec();
  const std::size_t d = spec.modalities[m].input_dim, t = spec.frames;
  std::vector<std::vector<double>> sum(spec.verb_classes, std::vector<double>(d, 0.0));
  std::vector<double> count(spec.verb_classes, 0.0);
  auto f = ds.features(m);
  for (auto c : ds.indices(split)) {
    const auto v = ds.labels(c).verb;
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t j = 0; j < d; ++j) sum[v][j] += f[(c * t + r) * d + j];
      count[v] += 1.0;
    }
  }
  for (std::size_t v = 0; v < sum.size(); ++v)
    for (auto& x : sum[v]) x /= count[v];
  return sum;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("generate layout and labels") {
  const auto ds = generate(tiny_spec());
  CHECK(ds.size() == 20 * 4);
  CHECK(ds.indices("source").size() == 40);
  CHECK(ds.indices("source_1").size() == 20);
  CHECK(ds.indices("target_train").size() == 20);
  CHECK(ds.indices("target_test").size() == 20);
  CHECK(ds.has_labels("source"));
  CHECK(ds.has_labels("target_test"));
  CHECK_FALSE(ds.has_labels("target_train"));
  CHECK(ds.domain_label(ds.indices("source_1").front()) == 1);
  CHECK(ds.domain_label(ds.indices("target_test").front()) == 2);
  for (auto c : ds.indices("target_train")) CHECK_FALSE(ds.raw_labels()[c].has_value());
  for (auto c : ds.indices("target_test")) CHECK(ds.raw_labels()[c].has_value());
  CHECK_THROWS_AS(ds.indices("source_x"), ContractError);
}

TEST_CASE("generate is a pure function of the spec") {
  const auto a = generate(tiny_spec());
  const auto b = generate(tiny_spec());
  CHECK(a == b);
  auto other = tiny_spec();
  other.seed = 6;
  CHECK_FALSE(a == generate(other));
}

TEST_CASE("without shift, source and target class means agree") {
  DatasetSpec s;
  s.num_source_domains = 1;
  s.modalities = {{"rgb", 8}};
  s.frames = 4;
  s.verb_classes = 2;
  s.noun_classes = 2;
  s.samples_per_domain = 4000;  // about 2000 clips per verb class
  s.shift_magnitude = 0.0;
  s.seed = 3;
  const auto ds = generate(s);
  const auto src = class_means(ds, "source_0", 0);
  const auto tgt = class_means(ds, "target_test", 0);
  for (std::size_t v = 0; v < 2; ++v) {
    double dist = 0;
    for (std::size_t j = 0; j < 8; ++j) dist += (src[v][j] - tgt[v][j]) * (src[v][j] - tgt[v][j]);
    CHECK(std::sqrt(dist) < 0.1);
  }
}

TEST_CASE("norm scale factors show up in the empirical mean norms") {
  DatasetSpec s;
  s.num_source_domains = 2;
  s.modalities = {{"rgb", 16}, {"audio", 16}};
  s.frames = 4;
  s.samples_per_domain = 2000;
  s.shift_magnitude = 0.0;
  s.norm_scales = {{"audio", {1.0, 4.0, 1.0}}};
  s.seed = 4;
  const auto ds = generate(s);
  const auto d0 = input_mean_norms(ds, "source_0");
  const auto d1 = input_mean_norms(ds, "source_1");
  CHECK(std::abs(d1[1] / d0[1] - 4.0) <= 0.05 * 4.0);
  CHECK(std::abs(d1[1] / d1[0] - 4.0) <= 0.05 * 4.0);
  CHECK(std::abs(d1[0] / d0[0] - 1.0) <= 0.05);
}

TEST_CASE("label noise flips to other classes") {
  auto s = tiny_spec();
  s.samples_per_domain = 500;
  auto clean = generate(s);
  s.label_noise = 0.3;
  auto noisy = generate(s);
  std::size_t flipped = 0, total = 0;
  for (auto c : clean.indices("source")) {
    flipped += clean.labels(c).verb != noisy.labels(c).verb;
    ++total;
  }
  const double rate = static_cast<double>(flipped) / static_cast<double>(total);
  CHECK(rate > 0.25);
  CHECK(rate < 0.35);
}

TEST_CASE("spec validation names the field") {
  auto s = tiny_spec();
  s.norm_scales["audio"] = {1.0, 2.0};
  try {
    s.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "norm_scales.audio");
  }
  s = tiny_spec();
  s.label_noise = 1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.num_source_domains = 0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = tiny_spec();
  s.norm_scales["depth"] = {1, 1, 1};
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("label hygiene guard counts target_train reads") {
  const auto ds = generate(tiny_spec());
  CHECK(ds.target_label_reads() == 0);
  const auto tt = ds.indices("target_train");
  CHECK_THROWS_AS(ds.labels(tt[0]), LabelHygieneViolation);
  CHECK(ds.target_label_reads() == 1);
  CHECK_THROWS_AS(make_labeled_batch(ds, tt), LabelHygieneViolation);
  CHECK(ds.target_label_reads() == 2);
  auto ub = make_unlabeled_batch(ds, tt);
  CHECK(ub.features.size() == 2);
  CHECK(ds.target_label_reads() == 2);
  const_cast<FeatureDataset&>(ds).reset_target_label_reads();
  CHECK(ds.target_label_reads() == 0);
}

TEST_CASE("batches") {
  const auto ds = generate(tiny_spec());
  const auto all = batches(ds, "source", 1000, 1, 0);
  REQUIRE(all.size() == 1);
  CHECK(all[0].size() == 40);

  auto b = batches(ds, "source", 7, 1, 0);
  CHECK(b.size() == 6);
  CHECK(b.back().size() == 5);
  std::vector<std::size_t> flat;
  for (const auto& x : b) flat.insert(flat.end(), x.begin(), x.end());
  std::sort(flat.begin(), flat.end());
  CHECK(flat == ds.indices("source"));

  CHECK(batches(ds, "source", 7, 1, 0) == b);
  CHECK(batches(ds, "source", 7, 1, 1) != b);
  CHECK(batches(ds, "source", 7, 2, 0) != b);
  CHECK(batches(ds, "target_train", 7, 1, 0) != batches(ds, "target_test", 7, 1, 0));

  CHECK_THROWS_AS(batches(ds, "source", 0, 1, 0), ContractError);
  auto s = tiny_spec();
  s.num_source_domains = 1;
  s.norm_scales.clear();
  CHECK_THROWS_AS(batches(generate(s), "source_1", 4, 0, 0), ContractError);
}

TEST_CASE("labeled batches carry features, labels and domains") {
  const auto ds = generate(tiny_spec());
  const std::vector<std::size_t> clips{3, 25, 0};
  auto lb = make_labeled_batch(ds, clips);
  CHECK(lb.features[0].shape() == Shape{9, 6});
  CHECK(lb.features[1].shape() == Shape{9, 4});
  CHECK(lb.domains == std::vector<std::size_t>{0, 1, 0});
  CHECK(lb.verbs[1] == ds.labels(25).verb);
  for (std::size_t j = 0; j < 6; ++j) CHECK(lb.features[0].at(3, j) == ds.features(0)[25 * 18 + j]);
}

TEST_CASE("zip_cycled") {
  std::vector<std::vector<std::size_t>> s{{1}, {2}, {3}}, t{{10}, {20}};
  auto z = zip_cycled(s, t);
  REQUIRE(z.size() == 3);
  CHECK(z[2].source == std::vector<std::size_t>{3});
  CHECK(z[2].target == std::vector<std::size_t>{10});
  CHECK(zip_cycled(t, s).size() == 3);
  CHECK_THROWS_AS(zip_cycled(s, {}), ContractError);
}

TEST_CASE("save and load round trip bitwise") {
  const auto dir = test::scratch_dir("data_roundtrip");
  const auto ds = generate(tiny_spec());
  save(ds, dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "rgb.f32"));
  CHECK(fs::exists(dir / "audio.f32"));
  const auto back = load(dir);
  CHECK(back == ds);

  const auto manifest = Json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["modalities"].size() == 2);
  CHECK(manifest["modalities"][0]["shape"] == Json::array({80, 3, 6}));

  std::ifstream csv(dir / "labels.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "clip_id,domain,verb,noun");
  const auto tt = ds.indices("target_train").front();
  std::string line;
  for (std::size_t i = 0; i <= tt; ++i) std::getline(csv, line);
  CHECK(line == std::to_string(tt) + ",target_train,,");

  const auto again = test::scratch_dir("data_roundtrip_again");
  save(back, again);
  for (const char* f : {"manifest.json", "labels.csv", "rgb.f32", "audio.f32"}) CHECK(slurp(dir / f) == slurp(again / f));
}

TEST_CASE("load detects damaged files") {
  const auto ds = generate(tiny_spec());
  auto fresh = [&](const std::string& name) {
    const auto dir = test::scratch_dir(name);
    save(ds, dir);
    return dir;
  };

  SUBCASE("truncated blob") {
    const auto dir = fresh("data_trunc");
    auto blob = slurp(dir / "audio.f32");
    blob.pop_back();
    spit(dir / "audio.f32", blob);
    CHECK_THROWS_AS(load(dir), TruncatedFileError);
  }
  SUBCASE("flipped byte") {
    const auto dir = fresh("data_crc");
    auto blob = slurp(dir / "rgb.f32");
    blob[17] = static_cast<char>(blob[17] ^ 0x10);
    spit(dir / "rgb.f32", blob);
    CHECK_THROWS_AS(load(dir), ChecksumError);
  }
  SUBCASE("future version") {
    const auto dir = fresh("data_version");
    auto m = Json::parse(slurp(dir / "manifest.json"));
    m["format_version"] = kDatasetFormatVersion + 1;
    spit(dir / "manifest.json", m.dump());
    CHECK_THROWS_AS(load(dir), VersionMismatchError);
  }
  SUBCASE("manifest lists fewer modalities than blocks") {
    const auto dir = fresh("data_count");
    auto m = Json::parse(slurp(dir / "manifest.json"));
    m["modalities"].erase(1);
    spit(dir / "manifest.json", m.dump());
    CHECK_THROWS_AS(load(dir), ConsistencyError);
  }
  SUBCASE("missing blob") {
    const auto dir = fresh("data_missing");
    fs::remove(dir / "audio.f32");
    CHECK_THROWS_AS(load(dir), ConsistencyError);
  }
  SUBCASE("trailing bytes") {
    const auto dir = fresh("data_trailing");
    spit(dir / "rgb.f32", slurp(dir / "rgb.f32") + "xxxx");
    CHECK_THROWS_AS(load(dir), ConsistencyError);
  }
  SUBCASE("labels for a target_train clip") {
    const auto dir = fresh("data_labels");
    auto csv = slurp(dir / "labels.csv");
    const auto tt = ds.indices("target_train").front();
    const std::string from = "\n" + std::to_string(tt) + ",target_train,,\n";
    const std::string to = "\n" + std::to_string(tt) + ",target_train,1,1\n";
    csv.replace(csv.find(from), from.size(), to);
    spit(dir / "labels.csv", csv);
    CHECK_THROWS_AS(load(dir), ConsistencyError);
  }
  SUBCASE("every load failure is a FormatError") {
    const auto dir = fresh("data_gone");
    fs::remove(dir / "manifest.json");
    CHECK_THROWS_AS(load(dir), FormatError);
  }
}
