// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "normalign/checkpoint.hpp"
#include "normalign/config.hpp"
#include "normalign/errors.hpp"

using namespace normalign;
using normalign::test::random_tensor;

namespace {

StreamConfig config_for(FusionMode fusion) {
  StreamConfig c;
  c.modalities = {{"rgb", 4}, {"audio", 3}};
  c.frames = 3;
  c.extractor_hidden = {5};
  c.embed_dim = 4;
  c.trm_scales = {2, 3};
  c.relation_dim = 6;
  c.discriminator_hidden = 3;
  c.verb_classes = 3;
  c.noun_classes = 2;
  c.domain_count = 3;
  c.fusion = fusion;
  return c;
}

std::vector<StreamModel> two_streams() {
  std::vector<StreamModel> s;
  s.emplace_back(config_for(FusionMode::Mid), 5);
  s.emplace_back(config_for(FusionMode::Late), 6);
  return s;
}

template <class E>
bool throws_as(const std::string& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

std::size_t header_end(const std::string& bytes) {
  std::uint64_t h = 0;
  for (int i = 0; i < 8; ++i) h |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[12 + i])) << (8 * i);
  return 20 + h;
}

}  // namespace

TEST_CASE("checkpoint round trip is bitwise") {
  auto streams = two_streams();
  const std::string bytes = serialize_checkpoint(streams);
  CHECK(bytes.compare(0, 8, "NALNCKPT") == 0);

  auto back = deserialize_checkpoint(bytes);
  REQUIRE(back.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(back[s].config() == streams[s].config());
    REQUIRE(back[s].parameters().size() == streams[s].parameters().size());
    for (std::size_t i = 0; i < back[s].parameters().size(); ++i) {
      const auto& [na, a] = streams[s].parameters()[i];
      const auto& [nb, b] = back[s].parameters()[i];
      CHECK(na == nb);
      CHECK(a.shape() == b.shape());
      CHECK(std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0);
    }
  }
  CHECK(serialize_checkpoint(back) == bytes);

  std::mt19937_64 rng(3);
  std::vector<Tensor> clip;
  for (const auto& m : streams[0].config().modalities) clip.push_back(random_tensor({4 * 3, m.input_dim}, rng, -1, 1, false));
  const auto p = ensemble_predict(streams, clip);
  const auto q = ensemble_predict(back, clip);
  CHECK(p.verb_scores == q.verb_scores);
  CHECK(p.noun_scores == q.noun_scores);

  const auto dir = test::scratch_dir("checkpoint");
  save_checkpoint(streams, dir / "a.ckpt");
  auto loaded = load_checkpoint(dir / "a.ckpt");
  CHECK(serialize_checkpoint(loaded) == bytes);
}

TEST_CASE("checkpoint keeps special values") {
  auto streams = two_streams();
  auto w = streams[0].parameter("branch.fused.verb.bias").mutable_values();
  w[0] = -0.0;
  w[1] = 5e-324;
  w[2] = 1.7976931348623157e308;
  auto back = deserialize_checkpoint(serialize_checkpoint(streams));
  const auto v = back[0].parameter("branch.fused.verb.bias").values();
  CHECK(std::signbit(v[0]));
  CHECK(v[1] == 5e-324);
  CHECK(v[2] == 1.7976931348623157e308);
}

TEST_CASE("damaged checkpoints are detected") {
  const std::string good = serialize_checkpoint(two_streams());

  SUBCASE("truncated data") { CHECK(throws_as<TruncatedFileError>(good.substr(0, good.size() - 1))); }
  SUBCASE("truncated header") { CHECK(throws_as<TruncatedFileError>(good.substr(0, 40))); }
  SUBCASE("truncated preamble") { CHECK(throws_as<TruncatedFileError>(good.substr(0, 10))); }
  SUBCASE("flipped data byte") {
    std::string bad = good;
    bad[header_end(bad) + 17] ^= 0x01;
    CHECK(throws_as<ChecksumError>(bad));
  }
  SUBCASE("last data byte") {
    std::string bad = good;
    bad.back() ^= 0x80;
    CHECK(throws_as<ChecksumError>(bad));
  }
  SUBCASE("version") {
    std::string bad = good;
    bad[8] = 2;
    CHECK(throws_as<VersionMismatchError>(bad));
  }
  SUBCASE("magic") {
    std::string bad = good;
    bad[0] = 'X';
    CHECK(throws_as<ConsistencyError>(bad));
  }
  SUBCASE("trailing bytes") { CHECK(throws_as<ConsistencyError>(good + "x")); }
  SUBCASE("shape in header") {
    std::string bad = good;
    const auto pos = bad.find("\"embed_dim\":4");
    REQUIRE(pos < header_end(bad));
    bad[pos + 12] = '5';
    CHECK(throws_as<ConsistencyError>(bad));
  }
  SUBCASE("every format error is a FormatError") {
    CHECK(throws_as<FormatError>(good.substr(0, good.size() - 8)));
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(test::scratch_dir("ckpt_missing") / "none"), FormatError); }
}
