#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latsync/geometry.hpp"
#include "latsync/tensor.hpp"

namespace latsync {

struct WorldConfig {
    double size = 64.0;        // square world edge, meters
    int grid = 64;             // occupancy cells per side
    double frame_rate = 5.0;   // Hz; one frame of latency = 1/frame_rate seconds
    int duration = 20;         // frames per scenario
    int objects = 8;
    int agents = 3;
    double min_object_size = 3.0;   // meters
    double max_object_size = 6.0;
    double min_speed = 0.2;         // meters per frame
    double max_speed = 1.0;
    double accel_noise = 0.0;       // per-frame velocity jitter stddev, m/frame
    bool occlusion = true;
    double sector_half_angle = 1.1; // radians
    double sector_range = 48.0;     // meters
    double obs_dropout = 0.0;       // probability an occupied cell reads 0

    void validate() const;  // throws ConfigError on inconsistency
};

// Trajectory is stored per frame so observation/ground truth are pure lookups.
struct MovingObject {
    double w = 0, h = 0;    // box size, meters
    double vx = 0, vy = 0;  // initial velocity, m/frame
    std::vector<std::array<double, 2>> centers;  // one (x,y) per frame

    Box box_at(int frame) const {
        const auto& c = centers.at(static_cast<std::size_t>(frame));
        return Box::from_center(c[0], c[1], w, h);
    }
};

struct AgentPose {
    double x = 0, y = 0;
    double orientation = 0;   // radians
    double half_angle = 1.1;  // radians, view sector half width
    double range = 48.0;      // meters
};

struct Scenario {
    WorldConfig config;
    std::uint64_t seed = 0;
    std::vector<MovingObject> objects;
    std::vector<AgentPose> agents;

    int duration() const { return config.duration; }
};

struct Observation {
    ad::Tensor grid;  // [G,G,1], occupancy in {0,1}
    int agent_id = 0;
    int frame = 0;
};

// Reproducible scene synthesis: same (config, seed) gives an identical
// scenario. Objects are placed without initial overlap and their whole
// trajectories stay inside the world; placement that cannot satisfy the
// constraints after bounded retries fails loudly.
Scenario generate_scenario(const WorldConfig& config, std::uint64_t seed);

// Ego-view occupancy: a cell is 1 exactly when some object intersects the
// cell, the cell center lies in the agent's view sector, and (with occlusion
// enabled) the sight line to the cell center is not blocked by another object.
Observation observe(const Scenario& scenario, int agent_id, int frame);

// Full-visibility occupancy (no sector, no occlusion, no dropout); every
// observe() grid is an elementwise subset of this.
ad::Tensor occupancy_grid(const Scenario& scenario, int frame);

// All objects intersecting `region` at `frame`, clipped to it, confidence 1.
// Deliberately not limited by any agent's view.
BoxSet ground_truth_boxes(const Scenario& scenario, int frame, const Box& region);
BoxSet ground_truth_boxes(const Scenario& scenario, int frame);  // whole world

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& text);

nlohmann::json world_config_to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const nlohmann::json& j);

}  // namespace latsync
