#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsync/channel.hpp"
#include "latsync/perception.hpp"
#include "latsync/world.hpp"

namespace latsync {

// Latency difficulty schedule: hold tau fixed at stage s = 1 + epoch/frames_per_stage
// while s <= max_fixed_latency, then switch to stochastic latency with an
// exponential mean of final_mean.
struct CurriculumSchedule {
    int frames_per_stage = 10;
    int max_fixed_latency = 10;
    double final_mean = 5.0;

    void validate() const;
};

struct LossWeights {
    double lambda_o = 1.0;  // detection terms
    double lambda_f = 0.5;  // fusion + feature reconstruction terms
    double lambda_w = 0.5;  // attention-weight reconstruction term

    void validate() const;
};

struct TrainParams {
    int epochs = 120;
    int scenarios = 40;
    int samples_per_scenario = 1;
    double learning_rate = 1e-3;
    double clip_norm = 5.0;
    int checkpoint_every = 25;

    void validate() const;
};

struct EvalParams {
    int scenarios = 10;
    std::vector<double> iou_thresholds = {0.5, 0.7};
    int frames_per_scenario = 3;

    void validate() const;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out = "runs/default";
    WorldConfig world;
    ModelConfig model;
    LatencyModel channel;
    CurriculumSchedule curriculum;
    LossWeights loss;
    TrainParams train;
    EvalParams eval;

    void validate() const;  // every section
};

// Strict parse: missing keys take defaults, unknown keys anywhere are
// rejected with their full path.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& c);

// `key.path=value` assignment into raw JSON; the value is parsed as JSON when
// possible and kept as a string otherwise. Intermediate objects are created.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Read file (or start from an empty object when path is empty), apply
// overrides in order, parse strictly.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides);

nlohmann::json latency_model_to_json(const LatencyModel& m);
LatencyModel latency_model_from_json(const nlohmann::json& j);

}  // namespace latsync
