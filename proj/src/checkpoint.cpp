#include "latsync/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "latsync/util.hpp"

namespace latsync {

using nlohmann::json;

namespace {
constexpr int kFormatVersion = 1;

static_assert(sizeof(double) == 8, "checkpoint format assumes 8-byte doubles");
}  // namespace

json model_config_to_json(const ModelConfig& c) {
    return json{{"grid", c.grid},
                {"feature_channels", c.feature_channels},
                {"hidden_channels", c.hidden_channels},
                {"history_frames", c.history_frames},
                {"estimation", c.estimation},
                {"multi_resolution", c.multi_resolution},
                {"time_modulation", c.time_modulation},
                {"bypass_at_zero", c.bypass_at_zero},
                {"detect_threshold", c.detect_threshold},
                {"nms_iou", c.nms_iou}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    c.grid = j.at("grid").get<int>();
    c.feature_channels = j.at("feature_channels").get<int>();
    c.hidden_channels = j.at("hidden_channels").get<int>();
    c.history_frames = j.at("history_frames").get<int>();
    c.estimation = j.at("estimation").get<std::string>();
    c.multi_resolution = j.at("multi_resolution").get<bool>();
    c.time_modulation = j.at("time_modulation").get<bool>();
    c.bypass_at_zero = j.at("bypass_at_zero").get<bool>();
    c.detect_threshold = j.at("detect_threshold").get<double>();
    c.nms_iou = j.at("nms_iou").get<double>();
    c.validate();
    return c;
}

void save_checkpoint(const nn::ParamRegistry& params, const ModelConfig& model,
                     const std::string& prefix) {
    json manifest;
    manifest["version"] = kFormatVersion;
    manifest["model"] = model_config_to_json(model);
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params.items()) {
        tensors.push_back(json{{"name", name},
                               {"shape", t.shape()},
                               {"offset", offset},
                               {"count", t.size()}});
        offset += t.size() * sizeof(double);
    }
    manifest["tensors"] = std::move(tensors);

    std::ofstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw Error(msg("cannot open '", prefix, ".bin' for writing"));
    for (const auto& [name, t] : params.items())
        bin.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!bin) throw Error(msg("write failed for '", prefix, ".bin'"));
    bin.close();

    write_text_file(prefix + ".json", manifest.dump(2) + "\n");
}

namespace {

json read_manifest(const std::string& prefix) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(prefix + ".json"));
    } catch (const json::exception& e) {
        throw ConfigError(msg("checkpoint manifest '", prefix, ".json' is not valid JSON: ",
                              e.what()));
    }
    if (!manifest.contains("version"))
        throw ConfigError(msg("checkpoint manifest '", prefix, ".json' lacks a version field"));
    const int version = manifest.at("version").get<int>();
    if (version != kFormatVersion)
        throw ConfigError(msg("checkpoint format version ", version, " unsupported (expected ",
                              kFormatVersion, ")"));
    return manifest;
}

}  // namespace

ModelConfig checkpoint_model_config(const std::string& prefix) {
    json manifest = read_manifest(prefix);
    try {
        return model_config_from_json(manifest.at("model"));
    } catch (const json::exception& e) {
        throw ConfigError(msg("checkpoint manifest '", prefix, ".json': bad model block: ",
                              e.what()));
    }
}

void load_checkpoint(nn::ParamRegistry& params, const std::string& prefix) {
    json manifest = read_manifest(prefix);

    std::ifstream bin(prefix + ".bin", std::ios::binary);
    if (!bin) throw ConfigError(msg("cannot open checkpoint data '", prefix, ".bin'"));

    struct Entry {
        ad::Shape shape;
        std::size_t offset = 0, count = 0;
    };
    std::map<std::string, Entry> entries;
    try {
        for (const json& t : manifest.at("tensors")) {
            Entry e;
            e.shape = t.at("shape").get<ad::Shape>();
            e.offset = t.at("offset").get<std::size_t>();
            e.count = t.at("count").get<std::size_t>();
            entries[t.at("name").get<std::string>()] = e;
        }
    } catch (const json::exception& e) {
        throw ConfigError(msg("checkpoint manifest '", prefix, ".json': bad tensor table: ",
                              e.what()));
    }

    for (const auto& [name, shared] : params.items()) {
        ad::Tensor tensor = shared;  // handle copy: writes go to the registry's storage
        auto it = entries.find(name);
        if (it == entries.end())
            throw ConfigError(msg("checkpoint is missing tensor '", name,
                                  "' required by this model"));
        const Entry& e = it->second;
        if (e.shape != tensor.shape())
            throw ConfigError(msg("checkpoint tensor '", name, "' has shape ",
                                  ad::shape_str(e.shape), ", model expects ",
                                  ad::shape_str(tensor.shape())));
        if (e.count != tensor.size())
            throw ConfigError(msg("checkpoint tensor '", name, "' count mismatch"));
        bin.seekg(static_cast<std::streamoff>(e.offset));
        bin.read(reinterpret_cast<char*>(tensor.data_mut()),
                 static_cast<std::streamsize>(e.count * sizeof(double)));
        if (!bin)
            throw ConfigError(msg("checkpoint data '", prefix, ".bin' truncated at tensor '",
                                  name, "'"));
        entries.erase(it);
    }
    if (!entries.empty())
        throw ConfigError(msg("checkpoint holds ", entries.size(),
                              " tensor(s) unknown to this model, first: '",
                              entries.begin()->first, "'"));
}

}  // namespace latsync
