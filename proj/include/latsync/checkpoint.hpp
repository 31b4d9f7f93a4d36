#pragma once

#include <string>

#include <json.hpp>

#include "latsync/nn.hpp"
#include "latsync/perception.hpp"

namespace latsync {

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Parameters are stored as <prefix>.bin (raw little-endian doubles, registry
// order) plus <prefix>.json — a manifest mapping each tensor name to its
// shape and byte offset, carrying a format version and the architecture the
// parameters belong to.
void save_checkpoint(const nn::ParamRegistry& params, const ModelConfig& model,
                     const std::string& prefix);

// Architecture recorded in the manifest; use it to rebuild the model before
// loading values.
ModelConfig checkpoint_model_config(const std::string& prefix);

// Loads values into an already-built registry; every tensor must match the
// manifest by name and shape, with nothing missing and nothing extra.
void load_checkpoint(nn::ParamRegistry& params, const std::string& prefix);

}  // namespace latsync
