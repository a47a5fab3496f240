// SPDX-License-Identifier: Apache-2.0
#include "normalign/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "normalign/config.hpp"
#include "normalign/errors.hpp"

namespace normalign {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'L', 'N', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class T>
T get_le(const std::string& in, std::size_t off) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const std::size_t chunk = std::min<std::size_t>(n, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(chunk));
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace

std::string serialize_checkpoint(const std::vector<StreamModel>& streams) {
  if (streams.empty()) throw ContractError("checkpoint: no streams");
  std::string data;
  Json jstreams = Json::array();
  std::size_t offset = 0;
  for (const auto& s : streams) {
    Json params = Json::array();
    for (const auto& [name, t] : s.parameters()) {
      params.push_back(Json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
      for (double v : t.values()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le(data, bits);
      }
      offset += t.size();
    }
    jstreams.push_back(Json{{"config", to_json(s.config())}, {"parameters", params}});
  }
  const Json header{{"format_version", kCheckpointFormatVersion},
                    {"streams", jstreams},
                    {"data_bytes", data.size()},
                    {"data_crc32", crc_of(data.data(), data.size())}};
  const std::string h = header.dump();
  std::string out(kMagic, 8);
  put_le<std::uint32_t>(out, kCheckpointFormatVersion);
  put_le<std::uint64_t>(out, h.size());
  out += h;
  out += data;
  return out;
}

std::vector<StreamModel> deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 20) throw TruncatedFileError("checkpoint shorter than its fixed preamble");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ConsistencyError("not a checkpoint file (bad magic)");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointFormatVersion)
    throw VersionMismatchError("checkpoint format version " + std::to_string(version) + ", expected " +
                               std::to_string(kCheckpointFormatVersion));
  const auto hlen = get_le<std::uint64_t>(bytes, 12);
  if (bytes.size() - 20 < hlen) throw TruncatedFileError("checkpoint header truncated");
  Json header;
  try {
    header = Json::parse(bytes.substr(20, hlen));
  } catch (const Json::exception& e) {
    throw ConsistencyError(std::string("checkpoint header: ") + e.what());
  }
  const std::size_t data_off = 20 + hlen;
  std::vector<StreamModel> streams;
  try {
    const auto data_bytes = header.at("data_bytes").get<std::size_t>();
    if (bytes.size() - data_off < data_bytes)
      throw TruncatedFileError("checkpoint data truncated: " + std::to_string(bytes.size() - data_off) + " of " +
                               std::to_string(data_bytes) + " bytes");
    if (bytes.size() - data_off > data_bytes) throw ConsistencyError("checkpoint has trailing bytes");
    if (crc_of(bytes.data() + data_off, data_bytes) != header.at("data_crc32").get<std::uint32_t>())
      throw ChecksumError("checkpoint data crc32 mismatch");
    for (const auto& js : header.at("streams")) {
      StreamConfig config;
      try {
        config = stream_config_from_json(js.at("config"), "config");
      } catch (const ConfigError& e) {
        throw ConsistencyError(std::string("checkpoint config: ") + e.what());
      }
      StreamModel model(config, 0);
      const auto& manifest = js.at("parameters");
      if (manifest.size() != model.parameters().size())
        throw ConsistencyError("checkpoint parameter count does not match its config");
      for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& e = manifest[i];
        Tensor& p = model.parameter(e.at("name").get<std::string>());
        if (e.at("shape").get<std::vector<std::size_t>>() != p.shape())
          throw ConsistencyError("checkpoint parameter '" + e.at("name").get<std::string>() + "' has the wrong shape");
        const auto off = e.at("offset").get<std::size_t>();
        if ((off + p.size()) * 8 > data_bytes) throw ConsistencyError("checkpoint parameter offset out of range");
        auto dst = p.mutable_values();
        for (std::size_t k = 0; k < p.size(); ++k) {
          const auto bits = get_le<std::uint64_t>(bytes, data_off + (off + k) * 8);
          std::memcpy(&dst[k], &bits, 8);
        }
      }
      streams.push_back(std::move(model));
    }
  } catch (const Json::exception& e) {
    throw ConsistencyError(std::string("checkpoint header: ") + e.what());
  } catch (const ContractError& e) {
    throw ConsistencyError(std::string("checkpoint: ") + e.what());
  }
  if (streams.empty()) throw ConsistencyError("checkpoint holds no streams");
  return streams;
}

void save_checkpoint(const std::vector<StreamModel>& streams, const std::filesystem::path& file) {
  const std::string bytes = serialize_checkpoint(streams);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + file.string());
}

std::vector<StreamModel> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConsistencyError("cannot open checkpoint " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace normalign
