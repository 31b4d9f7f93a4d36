#include "latsync/world.hpp"

#include <cmath>

#include <json.hpp>

#include "latsync/rng.hpp"
#include "latsync/util.hpp"

namespace latsync {

namespace {

constexpr double kPi = 3.14159265358979323846;

// All generated coordinates are snapped to 2^-20 m so that trajectory sums
// and frame-to-frame differences are exact in double precision (and survive
// JSON round trips bit-for-bit).
double snap(double x) { return std::round(x * 1048576.0) / 1048576.0; }

bool box_inside(const Box& b, double size, double margin) {
    return b.x0 >= margin && b.y0 >= margin && b.x1 <= size - margin && b.y1 <= size - margin;
}

double angle_diff(double a, double b) {
    double d = std::fmod(a - b, 2.0 * kPi);
    if (d > kPi) d -= 2.0 * kPi;
    if (d < -kPi) d += 2.0 * kPi;
    return std::abs(d);
}

bool cell_in_sector(double ccx, double ccy, const AgentPose& a) {
    const double dx = ccx - a.x, dy = ccy - a.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 > a.range * a.range) return false;
    if (d2 == 0.0) return true;
    return angle_diff(std::atan2(dy, dx), a.orientation) <= a.half_angle;
}

}  // namespace

void WorldConfig::validate() const {
    auto bad = [](const std::string& m) { throw ConfigError(msg("world config: ", m)); };
    if (size <= 0) bad("size must be positive");
    if (grid <= 0) bad("grid must be positive");
    if (frame_rate <= 0) bad("frame_rate must be positive");
    if (duration < 1) bad("duration must be at least 1 frame");
    if (objects < 0) bad("objects must be nonnegative");
    if (agents < 2) bad("at least 2 agents are required for collaboration");
    if (min_object_size <= 0 || max_object_size < min_object_size)
        bad("object sizes must satisfy 0 < min <= max");
    if (max_object_size >= size / 2) bad("max_object_size must be below half the world size");
    if (min_speed < 0 || max_speed < min_speed) bad("speeds must satisfy 0 <= min <= max");
    if (accel_noise < 0) bad("accel_noise must be nonnegative");
    if (sector_half_angle <= 0 || sector_half_angle > kPi)
        bad("sector_half_angle must be in (0, pi]");
    if (sector_range <= 0) bad("sector_range must be positive");
    if (obs_dropout < 0 || obs_dropout >= 1) bad("obs_dropout must be in [0,1)");
}

Scenario generate_scenario(const WorldConfig& config, std::uint64_t seed) {
    config.validate();
    Scenario s;
    s.config = config;
    s.seed = seed;
    Rng rng(mix_seed(seed, "world"));

    // Agents: spread positions, each looking roughly at the world center so
    // the view sectors overlap where the objects are.
    const double lo = 0.2 * config.size, hi = 0.8 * config.size;
    const double min_agent_dist = config.size / 5.0;
    for (int i = 0; i < config.agents; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            AgentPose a;
            a.x = snap(rng.uniform(lo, hi));
            a.y = snap(rng.uniform(lo, hi));
            bool clear = true;
            for (const AgentPose& other : s.agents) {
                const double dx = a.x - other.x, dy = a.y - other.y;
                if (dx * dx + dy * dy < min_agent_dist * min_agent_dist) { clear = false; break; }
            }
            if (!clear) continue;
            const double to_center =
                std::atan2(config.size / 2 - a.y, config.size / 2 - a.x);
            a.orientation = snap(to_center + rng.uniform(-0.4, 0.4));
            a.half_angle = config.sector_half_angle;
            a.range = config.sector_range;
            s.agents.push_back(a);
            placed = true;
        }
        if (!placed)
            throw Error(msg("could not place agent ", i, " at pairwise distance >= ",
                            min_agent_dist, " after 1000 attempts"));
    }

    // Objects: random size, pose, velocity; the entire trajectory must stay
    // inside the world and the initial boxes must not overlap.
    const double margin = 0.25;
    for (int i = 0; i < config.objects; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
            MovingObject o;
            o.w = snap(rng.uniform(config.min_object_size, config.max_object_size));
            o.h = snap(rng.uniform(config.min_object_size, config.max_object_size));
            const double keep = margin + 0.5 * std::max(o.w, o.h);
            double cx = snap(rng.uniform(keep, config.size - keep));
            double cy = snap(rng.uniform(keep, config.size - keep));
            const double speed = rng.uniform(config.min_speed, config.max_speed);
            const double dir = rng.uniform(0.0, 2.0 * kPi);
            o.vx = snap(speed * std::cos(dir));
            o.vy = snap(speed * std::sin(dir));

            Box first = Box::from_center(cx, cy, o.w, o.h);
            bool clear = box_inside(first, config.size, margin);
            for (const MovingObject& other : s.objects) {
                if (!clear) break;
                if (boxes_overlap(first, other.box_at(0))) clear = false;
            }
            if (!clear) continue;

            double vx = o.vx, vy = o.vy;
            o.centers.assign(static_cast<std::size_t>(config.duration), {0.0, 0.0});
            o.centers[0] = {cx, cy};
            bool inside = true;
            for (int f = 1; f < config.duration && inside; ++f) {
                if (config.accel_noise > 0) {
                    vx = snap(vx + rng.normal(0.0, config.accel_noise));
                    vy = snap(vy + rng.normal(0.0, config.accel_noise));
                }
                cx += vx;
                cy += vy;
                o.centers[static_cast<std::size_t>(f)] = {cx, cy};
                inside = box_inside(Box::from_center(cx, cy, o.w, o.h), config.size, margin);
            }
            if (!inside) continue;
            s.objects.push_back(std::move(o));
            placed = true;
        }
        if (!placed)
            throw Error(msg("could not place object ", i,
                            " with a fully in-bounds, non-overlapping trajectory after 2000 "
                            "attempts; loosen speed/size/duration"));
    }
    return s;
}

ad::Tensor occupancy_grid(const Scenario& scenario, int frame) {
    const int G = scenario.config.grid;
    const double cs = scenario.config.size / G;
    ad::Tensor grid = ad::Tensor::zeros({G, G, 1});
    double* g = grid.data_mut();
    for (const MovingObject& o : scenario.objects) {
        const Box b = o.box_at(frame);
        const int c0 = std::max(0, static_cast<int>(std::floor(b.x0 / cs)));
        const int c1 = std::min(G - 1, static_cast<int>(std::floor(b.x1 / cs)));
        const int r0 = std::max(0, static_cast<int>(std::floor(b.y0 / cs)));
        const int r1 = std::min(G - 1, static_cast<int>(std::floor(b.y1 / cs)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                const Box cell{c * cs, r * cs, (c + 1) * cs, (r + 1) * cs, 1.0};
                if (boxes_overlap(b, cell)) g[r * G + c] = 1.0;
            }
    }
    return grid;
}

Observation observe(const Scenario& scenario, int agent_id, int frame) {
    if (agent_id < 0 || agent_id >= static_cast<int>(scenario.agents.size()))
        throw Error(msg("unknown agent id ", agent_id, " (scenario has ",
                        scenario.agents.size(), " agents)"));
    if (frame < 0 || frame >= scenario.duration())
        throw Error(msg("frame ", frame, " outside scenario duration ", scenario.duration()));

    const AgentPose& agent = scenario.agents[static_cast<std::size_t>(agent_id)];
    const int G = scenario.config.grid;
    const double cs = scenario.config.size / G;
    ad::Tensor grid = ad::Tensor::zeros({G, G, 1});
    double* g = grid.data_mut();

    const int n = static_cast<int>(scenario.objects.size());
    for (int oi = 0; oi < n; ++oi) {
        const Box b = scenario.objects[static_cast<std::size_t>(oi)].box_at(frame);
        const int c0 = std::max(0, static_cast<int>(std::floor(b.x0 / cs)));
        const int c1 = std::min(G - 1, static_cast<int>(std::floor(b.x1 / cs)));
        const int r0 = std::max(0, static_cast<int>(std::floor(b.y0 / cs)));
        const int r1 = std::min(G - 1, static_cast<int>(std::floor(b.y1 / cs)));
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c) {
                if (g[r * G + c] != 0.0) continue;  // already visible via another object
                const Box cell{c * cs, r * cs, (c + 1) * cs, (r + 1) * cs, 1.0};
                if (!boxes_overlap(b, cell)) continue;
                const double ccx = (c + 0.5) * cs, ccy = (r + 0.5) * cs;
                if (!cell_in_sector(ccx, ccy, agent)) continue;
                bool blocked = false;
                if (scenario.config.occlusion) {
                    for (int pi = 0; pi < n && !blocked; ++pi) {
                        if (pi == oi) continue;
                        blocked = segment_crosses_box(
                            agent.x, agent.y, ccx, ccy,
                            scenario.objects[static_cast<std::size_t>(pi)].box_at(frame));
                    }
                }
                if (!blocked) g[r * G + c] = 1.0;
            }
    }

    if (scenario.config.obs_dropout > 0) {
        Rng rng(mix_seed(scenario.seed, "obs-dropout",
                         static_cast<std::uint64_t>(agent_id) * 1000003u +
                             static_cast<std::uint64_t>(frame)));
        for (int i = 0; i < G * G; ++i)
            if (g[i] != 0.0 && rng.uniform() < scenario.config.obs_dropout) g[i] = 0.0;
    }

    return Observation{std::move(grid), agent_id, frame};
}

BoxSet ground_truth_boxes(const Scenario& scenario, int frame, const Box& region) {
    if (frame < 0 || frame >= scenario.duration())
        throw Error(msg("frame ", frame, " outside scenario duration ", scenario.duration()));
    BoxSet out;
    for (const MovingObject& o : scenario.objects) {
        Box clipped = clip_box(o.box_at(frame), region);
        if (clipped.valid()) {
            clipped.confidence = 1.0;
            out.push_back(clipped);
        }
    }
    return out;
}

BoxSet ground_truth_boxes(const Scenario& scenario, int frame) {
    return ground_truth_boxes(scenario, frame,
                              Box{0, 0, scenario.config.size, scenario.config.size, 1.0});
}

using nlohmann::json;

json world_config_to_json(const WorldConfig& c) {
    return json{{"size", c.size},
                {"grid", c.grid},
                {"frame_rate", c.frame_rate},
                {"duration", c.duration},
                {"objects", c.objects},
                {"agents", c.agents},
                {"min_object_size", c.min_object_size},
                {"max_object_size", c.max_object_size},
                {"min_speed", c.min_speed},
                {"max_speed", c.max_speed},
                {"accel_noise", c.accel_noise},
                {"occlusion", c.occlusion},
                {"sector_half_angle", c.sector_half_angle},
                {"sector_range", c.sector_range},
                {"obs_dropout", c.obs_dropout}};
}

WorldConfig world_config_from_json(const json& j) {
    WorldConfig c;
    c.size = j.at("size").get<double>();
    c.grid = j.at("grid").get<int>();
    c.frame_rate = j.at("frame_rate").get<double>();
    c.duration = j.at("duration").get<int>();
    c.objects = j.at("objects").get<int>();
    c.agents = j.at("agents").get<int>();
    c.min_object_size = j.at("min_object_size").get<double>();
    c.max_object_size = j.at("max_object_size").get<double>();
    c.min_speed = j.at("min_speed").get<double>();
    c.max_speed = j.at("max_speed").get<double>();
    c.accel_noise = j.at("accel_noise").get<double>();
    c.occlusion = j.at("occlusion").get<bool>();
    c.sector_half_angle = j.at("sector_half_angle").get<double>();
    c.sector_range = j.at("sector_range").get<double>();
    c.obs_dropout = j.at("obs_dropout").get<double>();
    return c;
}


std::string scenario_to_json(const Scenario& s) {
    json j;
    j["seed"] = s.seed;
    j["config"] = world_config_to_json(s.config);
    j["agents"] = json::array();
    for (const AgentPose& a : s.agents)
        j["agents"].push_back(json{{"x", a.x},
                                   {"y", a.y},
                                   {"orientation", a.orientation},
                                   {"half_angle", a.half_angle},
                                   {"range", a.range}});
    j["objects"] = json::array();
    for (const MovingObject& o : s.objects) {
        json centers = json::array();
        for (const auto& c : o.centers) centers.push_back(json::array({c[0], c[1]}));
        j["objects"].push_back(json{
            {"w", o.w}, {"h", o.h}, {"vx", o.vx}, {"vy", o.vy}, {"centers", std::move(centers)}});
    }
    return j.dump(2) + "\n";
}

Scenario scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(msg("scenario JSON parse error: ", e.what()));
    }
    try {
        Scenario s;
        s.seed = j.at("seed").get<std::uint64_t>();
        s.config = world_config_from_json(j.at("config"));
        s.config.validate();
        for (const json& a : j.at("agents")) {
            AgentPose p;
            p.x = a.at("x").get<double>();
            p.y = a.at("y").get<double>();
            p.orientation = a.at("orientation").get<double>();
            p.half_angle = a.at("half_angle").get<double>();
            p.range = a.at("range").get<double>();
            if (p.range <= 0 || p.half_angle <= 0 || p.half_angle > kPi)
                throw ConfigError("scenario agent with invalid view sector");
            s.agents.push_back(p);
        }
        if (static_cast<int>(s.agents.size()) != s.config.agents)
            throw ConfigError("scenario agent list does not match config.agents");
        for (const json& oj : j.at("objects")) {
            MovingObject o;
            o.w = oj.at("w").get<double>();
            o.h = oj.at("h").get<double>();
            o.vx = oj.at("vx").get<double>();
            o.vy = oj.at("vy").get<double>();
            if (o.w <= 0 || o.h <= 0) throw ConfigError("scenario object with non-positive size");
            for (const json& c : oj.at("centers"))
                o.centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
            if (static_cast<int>(o.centers.size()) != s.config.duration)
                throw ConfigError("scenario object trajectory length does not match duration");
            s.objects.push_back(std::move(o));
        }
        if (static_cast<int>(s.objects.size()) != s.config.objects)
            throw ConfigError("scenario object list does not match config.objects");
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(msg("scenario JSON structure error: ", e.what()));
    }
}

}  // namespace latsync
