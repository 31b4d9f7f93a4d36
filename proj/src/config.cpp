#include "latsync/config.hpp"

#include <initializer_list>
#include <string>

#include "latsync/checkpoint.hpp"
#include "latsync/error.hpp"
#include "latsync/util.hpp"

namespace latsync {

using nlohmann::json;

namespace {

// Reject unknown keys loudly instead of silently ignoring a typo.
void require_keys(const json& j, const std::string& path,
                  std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(msg("config section '", path, "' must be an object"));
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known) throw ConfigError(msg("unknown config key '", path, key, "'"));
    }
}

// Fill a full section object from defaults, overlay the user's partial one.
json merge_over(json defaults, const json& user) {
    defaults.update(user);
    return defaults;
}

}  // namespace

void CurriculumSchedule::validate() const {
    if (frames_per_stage < 1)
        throw ConfigError(msg("curriculum.frames_per_stage must be >= 1, got ", frames_per_stage));
    if (max_fixed_latency < 0)
        throw ConfigError(
            msg("curriculum.max_fixed_latency must be >= 0, got ", max_fixed_latency));
    if (!(final_mean > 0.0))
        throw ConfigError(msg("curriculum.final_mode.mean must be > 0, got ", final_mean));
}

void LossWeights::validate() const {
    if (!(lambda_o >= 0.0) || !(lambda_f >= 0.0) || !(lambda_w >= 0.0))
        throw ConfigError("loss weights must be >= 0");
}

void TrainParams::validate() const {
    // Zero epochs is a valid request: it checkpoints the initialization.
    if (epochs < 0) throw ConfigError(msg("train.epochs must be >= 0, got ", epochs));
    if (scenarios < 1) throw ConfigError(msg("train.scenarios must be >= 1, got ", scenarios));
    if (samples_per_scenario < 1)
        throw ConfigError(
            msg("train.samples_per_scenario must be >= 1, got ", samples_per_scenario));
    if (!(learning_rate > 0.0))
        throw ConfigError(msg("train.learning_rate must be > 0, got ", learning_rate));
    if (!(clip_norm > 0.0)) throw ConfigError(msg("train.clip_norm must be > 0, got ", clip_norm));
    if (checkpoint_every < 1)
        throw ConfigError(msg("train.checkpoint_every must be >= 1, got ", checkpoint_every));
}

void EvalParams::validate() const {
    if (scenarios < 1) throw ConfigError(msg("eval.scenarios must be >= 1, got ", scenarios));
    if (iou_thresholds.empty()) throw ConfigError("eval.iou_thresholds must not be empty");
    for (double t : iou_thresholds)
        if (!(t > 0.0) || !(t < 1.0))
            throw ConfigError(msg("eval.iou_thresholds entries must lie in (0,1), got ", t));
    if (frames_per_scenario < 1)
        throw ConfigError(
            msg("eval.frames_per_scenario must be >= 1, got ", frames_per_scenario));
}

void ExperimentConfig::validate() const {
    world.validate();
    model.validate();
    channel.validate();
    curriculum.validate();
    loss.validate();
    train.validate();
    eval.validate();
    if (out.empty()) throw ConfigError("out must not be empty");
    if (model.grid != world.grid)
        throw ConfigError(
            msg("model.grid (", model.grid, ") must match world.grid (", world.grid, ")"));
}

json latency_model_to_json(const LatencyModel& m) {
    return json{{"mode", m.mode == LatencyModel::Mode::Fixed ? "fixed" : "exponential"},
                {"mean_frames", m.mean_frames},
                {"per_link", m.per_link},
                {"time_unit", m.time_unit}};
}

LatencyModel latency_model_from_json(const json& j) {
    LatencyModel m;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "fixed")
        m.mode = LatencyModel::Mode::Fixed;
    else if (mode == "exponential")
        m.mode = LatencyModel::Mode::Exponential;
    else
        throw ConfigError(msg("channel.mode must be 'fixed' or 'exponential', got '", mode, "'"));
    m.mean_frames = j.at("mean_frames").get<double>();
    m.per_link = j.at("per_link").get<bool>();
    m.time_unit = j.at("time_unit").get<double>();
    return m;
}

ExperimentConfig experiment_from_json(const json& j) {
    require_keys(j, "", {"seed", "out", "world", "model", "channel", "curriculum", "loss",
                         "train", "eval"});
    ExperimentConfig c;
    try {
        if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("out")) c.out = j.at("out").get<std::string>();

        if (j.contains("world")) {
            require_keys(j.at("world"), "world.",
                         {"size", "grid", "frame_rate", "duration", "objects", "agents",
                          "min_object_size", "max_object_size", "min_speed", "max_speed",
                          "accel_noise", "occlusion", "sector_half_angle", "sector_range",
                          "obs_dropout"});
            c.world = world_config_from_json(merge_over(world_config_to_json(WorldConfig{}),
                                                        j.at("world")));
        }
        if (j.contains("model")) {
            require_keys(j.at("model"), "model.",
                         {"grid", "feature_channels", "hidden_channels", "history_frames",
                          "estimation", "multi_resolution", "time_modulation", "bypass_at_zero",
                          "detect_threshold", "nms_iou"});
            json merged = merge_over(model_config_to_json(ModelConfig{}), j.at("model"));
            if (!j.at("model").contains("grid")) merged["grid"] = c.world.grid;
            c.model = model_config_from_json(merged);
        } else {
            c.model.grid = c.world.grid;
        }
        if (j.contains("channel")) {
            require_keys(j.at("channel"), "channel.",
                         {"mode", "mean_frames", "per_link", "time_unit"});
            c.channel = latency_model_from_json(
                merge_over(latency_model_to_json(LatencyModel{}), j.at("channel")));
        }
        if (j.contains("curriculum")) {
            const json& cur = j.at("curriculum");
            require_keys(cur, "curriculum.",
                         {"frames_per_stage", "max_fixed_latency", "final_mode"});
            if (cur.contains("frames_per_stage"))
                c.curriculum.frames_per_stage = cur.at("frames_per_stage").get<int>();
            if (cur.contains("max_fixed_latency"))
                c.curriculum.max_fixed_latency = cur.at("max_fixed_latency").get<int>();
            if (cur.contains("final_mode")) {
                require_keys(cur.at("final_mode"), "curriculum.final_mode.", {"mean"});
                if (cur.at("final_mode").contains("mean"))
                    c.curriculum.final_mean = cur.at("final_mode").at("mean").get<double>();
            }
        }
        if (j.contains("loss")) {
            const json& l = j.at("loss");
            require_keys(l, "loss.", {"lambda_o", "lambda_f", "lambda_w"});
            if (l.contains("lambda_o")) c.loss.lambda_o = l.at("lambda_o").get<double>();
            if (l.contains("lambda_f")) c.loss.lambda_f = l.at("lambda_f").get<double>();
            if (l.contains("lambda_w")) c.loss.lambda_w = l.at("lambda_w").get<double>();
        }
        if (j.contains("train")) {
            const json& t = j.at("train");
            require_keys(t, "train.",
                         {"epochs", "scenarios", "samples_per_scenario", "learning_rate",
                          "clip_norm", "checkpoint_every"});
            if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<int>();
            if (t.contains("scenarios")) c.train.scenarios = t.at("scenarios").get<int>();
            if (t.contains("samples_per_scenario"))
                c.train.samples_per_scenario = t.at("samples_per_scenario").get<int>();
            if (t.contains("learning_rate"))
                c.train.learning_rate = t.at("learning_rate").get<double>();
            if (t.contains("clip_norm")) c.train.clip_norm = t.at("clip_norm").get<double>();
            if (t.contains("checkpoint_every"))
                c.train.checkpoint_every = t.at("checkpoint_every").get<int>();
        }
        if (j.contains("eval")) {
            const json& e = j.at("eval");
            require_keys(e, "eval.", {"scenarios", "iou_thresholds", "frames_per_scenario"});
            if (e.contains("scenarios")) c.eval.scenarios = e.at("scenarios").get<int>();
            if (e.contains("iou_thresholds"))
                c.eval.iou_thresholds = e.at("iou_thresholds").get<std::vector<double>>();
            if (e.contains("frames_per_scenario"))
                c.eval.frames_per_scenario = e.at("frames_per_scenario").get<int>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(msg("config type error: ", e.what()));
    }
    c.validate();
    return c;
}

json experiment_to_json(const ExperimentConfig& c) {
    return json{{"seed", c.seed},
                {"out", c.out},
                {"world", world_config_to_json(c.world)},
                {"model", model_config_to_json(c.model)},
                {"channel", latency_model_to_json(c.channel)},
                {"curriculum",
                 json{{"frames_per_stage", c.curriculum.frames_per_stage},
                      {"max_fixed_latency", c.curriculum.max_fixed_latency},
                      {"final_mode", json{{"mean", c.curriculum.final_mean}}}}},
                {"loss",
                 json{{"lambda_o", c.loss.lambda_o},
                      {"lambda_f", c.loss.lambda_f},
                      {"lambda_w", c.loss.lambda_w}}},
                {"train",
                 json{{"epochs", c.train.epochs},
                      {"scenarios", c.train.scenarios},
                      {"samples_per_scenario", c.train.samples_per_scenario},
                      {"learning_rate", c.train.learning_rate},
                      {"clip_norm", c.train.clip_norm},
                      {"checkpoint_every", c.train.checkpoint_every}}},
                {"eval",
                 json{{"scenarios", c.eval.scenarios},
                      {"iou_thresholds", c.eval.iou_thresholds},
                      {"frames_per_scenario", c.eval.frames_per_scenario}}}};
}

void apply_override(json& j, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError(msg("override must look like key.path=value, got '", assignment, "'"));
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // unquoted strings, e.g. estimation=ve
    }

    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty())
            throw ConfigError(msg("override path '", path, "' has an empty segment"));
        if (dot == std::string::npos) {
            (*node)[key] = std::move(value);
            return;
        }
        if (!node->contains(key)) (*node)[key] = json::object();
        node = &(*node)[key];
        if (!node->is_object())
            throw ConfigError(msg("override path '", path, "' descends into non-object at '",
                                  key, "'"));
        start = dot + 1;
    }
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        try {
            j = json::parse(read_text_file(path));
        } catch (const json::exception& e) {
            throw ConfigError(msg("config file '", path, "' is not valid JSON: ", e.what()));
        }
        if (!j.is_object()) throw ConfigError(msg("config file '", path, "' must hold an object"));
    }
    for (const std::string& o : overrides) apply_override(j, o);
    return experiment_from_json(j);
}

}  // namespace latsync
