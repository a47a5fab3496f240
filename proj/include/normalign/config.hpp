// SPDX-License-Identifier: Apache-2.0
//
// JSON forms of the configuration and report types. Parsing is strict:
// unknown keys and wrongly typed values raise ConfigError with the JSON path
// of the offending field. Missing keys keep their defaults.
#pragma once

#include <string>

#include <json.hpp>

#include "normalign/data.hpp"
#include "normalign/losses.hpp"
#include "normalign/models.hpp"
#include "normalign/trainer.hpp"

namespace normalign {

using Json = nlohmann::ordered_json;

Json to_json(const ModalitySpec& m);
Json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const Json& j, const std::string& path = "");

/// Full stream configuration, as stored in checkpoints.
Json to_json(const StreamConfig& config);
StreamConfig stream_config_from_json(const Json& j, const std::string& path = "");

/// Architecture-only subset used inside training configs.
Json stream_arch_to_json(const StreamConfig& config);
StreamConfig stream_arch_from_json(const Json& j, const std::string& path);

Json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const Json& j, const std::string& path = "weights");

Json to_json(const LossMask& mask);
LossMask loss_mask_from_json(const Json& j, const std::string& path);

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j, const std::string& path = "");

Json to_json(const EvalMetrics& m);
Json to_json(const EpochRecord& r);

/// One JSON object per epoch, newline separated.
std::string report_jsonl(const TrainReport& report);
/// Header (config, weights, stream configs) and the final epoch.
Json report_summary(const TrainReport& report);

Json to_json(const PresetResult& result);

/// Human-readable list of every config key with its default, for --help.
std::string config_reference();

}  // namespace normalign
