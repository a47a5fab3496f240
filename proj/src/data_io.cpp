// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "normalign/config.hpp"
#include "normalign/data.hpp"
#include "normalign/errors.hpp"

namespace normalign {

namespace fs = std::filesystem;

namespace {

std::uint32_t crc_of(const std::string& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConsistencyError("missing file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + p.string());
}

// float32 little-endian; the build targets little-endian hosts.
std::string encode_f32(std::span<const double> values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = static_cast<float>(values[i]);
    std::memcpy(out.data() + 4 * i, &f, 4);
  }
  return out;
}

std::vector<double> decode_f32(const std::string& bytes) {
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, bytes.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::size_t parse_index(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw ConsistencyError("labels.csv: bad " + what + " '" + s + "'");
  return std::stoull(s);
}

}  // namespace

void save(const FeatureDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& spec = dataset.spec();
  Json mods = Json::array();
  for (std::size_t m = 0; m < dataset.modality_count(); ++m) {
    const auto& ms = spec.modalities[m];
    const std::string file = ms.name + ".f32";
    const std::string blob = encode_f32(dataset.features(m));
    write_file(dir / file, blob);
    mods.push_back(Json{{"name", ms.name},
                        {"dtype", "float32"},
                        {"shape", {dataset.size(), spec.frames, ms.input_dim}},
                        {"file", file},
                        {"crc32", crc_of(blob)}});
  }

  std::ostringstream csv;
  csv << "clip_id,domain,verb,noun\n";
  const auto& labels = dataset.raw_labels();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    csv << i << ',' << dataset.split(i).name() << ',';
    if (labels[i]) csv << labels[i]->verb << ',' << labels[i]->noun;
    else csv << ',';
    csv << '\n';
  }
  write_file(dir / "labels.csv", csv.str());

  Json manifest{{"format_version", kDatasetFormatVersion},
                {"spec", to_json(spec)},
                {"num_clips", dataset.size()},
                {"frames", spec.frames},
                {"modalities", mods}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

FeatureDataset load(const fs::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(read_file(dir / "manifest.json"));
  } catch (const Json::exception& e) {
    throw ConsistencyError(std::string("manifest.json: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version") || !manifest["format_version"].is_number_integer())
    throw ConsistencyError("manifest.json: missing format_version");
  const auto version = manifest["format_version"].get<long long>();
  if (version != kDatasetFormatVersion)
    throw VersionMismatchError("dataset format version " + std::to_string(version) + ", expected " +
                               std::to_string(kDatasetFormatVersion));

  DatasetSpec spec;
  std::size_t clips = 0;
  try {
    spec = dataset_spec_from_json(manifest.at("spec"), "spec");
    clips = manifest.at("num_clips").get<std::size_t>();
    if (manifest.at("frames").get<std::size_t>() != spec.frames)
      throw ConsistencyError("manifest frames disagree with the spec");
  } catch (const Json::exception& e) {
    throw ConsistencyError(std::string("manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw ConsistencyError(std::string("manifest.json: ") + e.what());
  }

  const Json& mods = manifest.contains("modalities") ? manifest["modalities"] : Json();
  if (!mods.is_array() || mods.size() != spec.modalities.size())
    throw ConsistencyError("manifest lists a different number of modalities than the spec");

  std::vector<std::vector<double>> features;
  for (std::size_t m = 0; m < mods.size(); ++m) {
    const auto& ms = spec.modalities[m];
    const Json& e = mods[m];
    try {
      if (e.at("name").get<std::string>() != ms.name) throw ConsistencyError("modality order differs from the spec");
      if (e.at("dtype").get<std::string>() != "float32") throw ConsistencyError("unsupported dtype");
      const auto shape = e.at("shape").get<std::vector<std::size_t>>();
      if (shape != std::vector<std::size_t>{clips, spec.frames, ms.input_dim})
        throw ConsistencyError("modality '" + ms.name + "' shape disagrees with the clip count");
      const fs::path file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) throw ConsistencyError("missing feature blob " + file.string());
      const std::string blob = read_file(file);
      const std::size_t expected = clips * spec.frames * ms.input_dim * 4;
      if (blob.size() < expected)
        throw TruncatedFileError(file.string() + ": " + std::to_string(blob.size()) + " bytes, expected " +
                                 std::to_string(expected));
      if (blob.size() > expected) throw ConsistencyError(file.string() + ": trailing bytes");
      if (crc_of(blob) != e.at("crc32").get<std::uint32_t>()) throw ChecksumError(file.string() + ": crc32 mismatch");
      features.push_back(decode_f32(blob));
    } catch (const Json::exception& ex) {
      throw ConsistencyError(std::string("manifest.json modality entry: ") + ex.what());
    }
  }

  std::istringstream csv(read_file(dir / "labels.csv"));
  std::string line;
  if (!std::getline(csv, line) || line != "clip_id,domain,verb,noun")
    throw ConsistencyError("labels.csv: bad header");
  std::vector<SplitTag> splits;
  std::vector<std::optional<ClipLabels>> labels;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw ConsistencyError("labels.csv: expected 4 columns in '" + line + "'");
    if (parse_index(cells[0], "clip_id") != splits.size()) throw ConsistencyError("labels.csv: clip ids out of order");
    SplitTag tag;
    try {
      tag = SplitTag::parse(cells[1]);
    } catch (const ContractError&) {
      throw ConsistencyError("labels.csv: unknown domain '" + cells[1] + "'");
    }
    if (tag.kind == SplitTag::Kind::Source && tag.source_index >= spec.num_source_domains)
      throw ConsistencyError("labels.csv: source index beyond the spec");
    splits.push_back(tag);
    if (cells[2].empty() && cells[3].empty()) {
      labels.emplace_back();
    } else {
      ClipLabels l{parse_index(cells[2], "verb"), parse_index(cells[3], "noun")};
      if (l.verb >= spec.verb_classes || l.noun >= spec.noun_classes)
        throw ConsistencyError("labels.csv: label out of range in '" + line + "'");
      labels.emplace_back(l);
    }
  }
  if (splits.size() != clips)
    throw ConsistencyError("labels.csv has " + std::to_string(splits.size()) + " clips, manifest " +
                           std::to_string(clips));
  return FeatureDataset(std::move(spec), std::move(features), std::move(splits), std::move(labels));
}

}  // namespace normalign
