#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "latsync/world.hpp"

using namespace latsync;
using ad::Tensor;

namespace {

constexpr double kPi = 3.14159265358979323846;

double wrap_angle_abs(double a, double b) {
    double d = std::fmod(a - b, 2.0 * kPi);
    if (d > kPi) d -= 2.0 * kPi;
    if (d < -kPi) d += 2.0 * kPi;
    return std::abs(d);
}

// Independent occlusion probe: walk the sight line in small steps and ask
// whether any point strictly inside an occluder box is crossed. This checks
// the analytic segment clipper against brute force.
bool ray_blocked_sampled(double ax, double ay, double cx, double cy, const Scenario& s, int frame,
                         int skip_object) {
    const int kSamples = 4096;
    for (int i = 1; i < kSamples; ++i) {
        const double t = static_cast<double>(i) / kSamples;
        const double px = ax + t * (cx - ax);
        const double py = ay + t * (cy - ay);
        for (int oi = 0; oi < static_cast<int>(s.objects.size()); ++oi) {
            if (oi == skip_object) continue;
            const Box b = s.objects[static_cast<std::size_t>(oi)].box_at(frame);
            if (px > b.x0 && px < b.x1 && py > b.y0 && py < b.y1) return true;
        }
    }
    return false;
}

// A two-object scene laid out by hand: a blocker near the agent and a target
// behind it, all box edges on integer cell boundaries.
Scenario shadow_scene(bool occlusion) {
    WorldConfig cfg;
    cfg.size = 64.0;
    cfg.grid = 64;
    cfg.duration = 1;
    cfg.objects = 2;
    cfg.agents = 2;
    cfg.occlusion = occlusion;
    cfg.sector_half_angle = 1.2;
    cfg.sector_range = 60.0;

    Scenario s;
    s.config = cfg;
    s.seed = 0;
    AgentPose ego;
    ego.x = 8.5;
    ego.y = 32.5;
    ego.orientation = 0.0;  // looking straight along +x
    ego.half_angle = cfg.sector_half_angle;
    ego.range = cfg.sector_range;
    s.agents.push_back(ego);
    AgentPose other = ego;
    other.x = 55.5;
    other.orientation = kPi;
    s.agents.push_back(other);

    MovingObject blocker;
    blocker.w = 6.0;
    blocker.h = 6.0;
    blocker.centers = {{24.0, 33.0}};  // box [21,27] x [30,36]
    s.objects.push_back(blocker);
    MovingObject target;
    target.w = 6.0;
    target.h = 6.0;
    target.centers = {{44.0, 33.0}};  // box [41,47] x [30,36]
    s.objects.push_back(target);
    return s;
}

}  // namespace

TEST_CASE("scenario generation is a pure function of config and seed") {
    WorldConfig cfg;
    Scenario a = generate_scenario(cfg, 7);
    Scenario b = generate_scenario(cfg, 7);
    Scenario c = generate_scenario(cfg, 8);
    CHECK(scenario_to_json(a) == scenario_to_json(b));
    CHECK(scenario_to_json(a) != scenario_to_json(c));
}

TEST_CASE("generated scenarios respect the placement contract") {
    WorldConfig cfg;
    cfg.accel_noise = 0.05;
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 12ull}) {
        Scenario s = generate_scenario(cfg, seed);
        REQUIRE(static_cast<int>(s.agents.size()) == cfg.agents);
        REQUIRE(static_cast<int>(s.objects.size()) == cfg.objects);

        for (const AgentPose& a : s.agents) {
            CHECK(a.x >= 0.2 * cfg.size);
            CHECK(a.x <= 0.8 * cfg.size);
            CHECK(a.y >= 0.2 * cfg.size);
            CHECK(a.y <= 0.8 * cfg.size);
            const double to_center = std::atan2(cfg.size / 2 - a.y, cfg.size / 2 - a.x);
            CHECK(wrap_angle_abs(a.orientation, to_center) <= 0.4 + 1e-6);
        }
        for (std::size_t i = 0; i < s.agents.size(); ++i)
            for (std::size_t j = i + 1; j < s.agents.size(); ++j) {
                const double dx = s.agents[i].x - s.agents[j].x;
                const double dy = s.agents[i].y - s.agents[j].y;
                CHECK(std::sqrt(dx * dx + dy * dy) >= cfg.size / 5.0 - 1e-9);
            }

        for (std::size_t i = 0; i < s.objects.size(); ++i) {
            const MovingObject& o = s.objects[i];
            CHECK(o.w >= cfg.min_object_size);
            CHECK(o.w <= cfg.max_object_size);
            CHECK(o.h >= cfg.min_object_size);
            CHECK(o.h <= cfg.max_object_size);
            const double speed = std::sqrt(o.vx * o.vx + o.vy * o.vy);
            CHECK(speed >= cfg.min_speed - 1e-5);  // coordinates are snapped
            CHECK(speed <= cfg.max_speed + 1e-5);
            REQUIRE(static_cast<int>(o.centers.size()) == cfg.duration);
            for (int f = 0; f < cfg.duration; ++f) {
                const Box b = o.box_at(f);
                CHECK(b.x0 >= 0.25);
                CHECK(b.y0 >= 0.25);
                CHECK(b.x1 <= cfg.size - 0.25);
                CHECK(b.y1 <= cfg.size - 0.25);
            }
            for (std::size_t j = i + 1; j < s.objects.size(); ++j)
                CHECK_FALSE(boxes_overlap(o.box_at(0), s.objects[j].box_at(0)));
        }
    }
}

TEST_CASE("unsatisfiable placement fails loudly instead of looping") {
    WorldConfig cfg;
    cfg.objects = 50;
    cfg.min_object_size = 20.0;
    cfg.max_object_size = 20.0;
    cfg.min_speed = 0.0;
    cfg.max_speed = 0.0;
    cfg.duration = 1;
    CHECK_THROWS_AS(generate_scenario(cfg, 1), Error);
}

TEST_CASE("scenario JSON round trip is bit exact") {
    WorldConfig cfg;
    cfg.accel_noise = 0.03;  // exercise the snapped velocity-jitter path
    Scenario s = generate_scenario(cfg, 42);
    const std::string text = scenario_to_json(s);
    Scenario back = scenario_from_json(text);
    CHECK(scenario_to_json(back) == text);
    for (std::size_t i = 0; i < s.objects.size(); ++i)
        for (std::size_t f = 0; f < s.objects[i].centers.size(); ++f) {
            // bitwise, not approximate
            CHECK(std::memcmp(&s.objects[i].centers[f], &back.objects[i].centers[f],
                              sizeof(double) * 2) == 0);
        }
    CHECK_THROWS_AS(scenario_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(scenario_from_json("{\"seed\": 1}"), ConfigError);
}

TEST_CASE("observation grids are deterministic and inside the full-visibility grid") {
    WorldConfig cfg;
    cfg.obs_dropout = 0.3;
    Scenario s = generate_scenario(cfg, 5);
    for (int agent = 0; agent < cfg.agents; ++agent)
        for (int frame : {0, 7, cfg.duration - 1}) {
            Observation o1 = observe(s, agent, frame);
            Observation o2 = observe(s, agent, frame);
            CHECK(o1.grid.values() == o2.grid.values());
            Tensor full = occupancy_grid(s, frame);
            for (std::size_t i = 0; i < full.size(); ++i) {
                const double v = o1.grid.values()[i];
                CHECK((v == 0.0 || v == 1.0));
                CHECK(v <= full.values()[i]);
            }
        }
    CHECK_THROWS_AS(observe(s, cfg.agents, 0), Error);
    CHECK_THROWS_AS(observe(s, 0, cfg.duration), Error);
}

TEST_CASE("a blocker hides cells of the object behind it") {
    Scenario s = shadow_scene(true);
    Observation obs = observe(s, 0, 0);
    const int G = s.config.grid;
    const double cs = s.config.size / G;
    const AgentPose& ego = s.agents[0];

    // Every cell's flag must agree with a brute-force re-derivation:
    // occupied by some object + center in sector + sight line not blocked.
    int visible_target_cells = 0, hidden_target_cells = 0, visible_blocker_cells = 0;
    for (int r = 0; r < G; ++r)
        for (int c = 0; c < G; ++c) {
            const double ccx = (c + 0.5) * cs, ccy = (r + 0.5) * cs;
            bool expect = false;
            for (int oi = 0; oi < 2 && !expect; ++oi) {
                const Box b = s.objects[static_cast<std::size_t>(oi)].box_at(0);
                const Box cell{c * cs, r * cs, (c + 1) * cs, (r + 1) * cs, 1.0};
                if (!boxes_overlap(b, cell)) continue;
                const double dx = ccx - ego.x, dy = ccy - ego.y;
                if (dx * dx + dy * dy > ego.range * ego.range) continue;
                if (wrap_angle_abs(std::atan2(dy, dx), ego.orientation) > ego.half_angle)
                    continue;
                if (!ray_blocked_sampled(ego.x, ego.y, ccx, ccy, s, 0, oi)) expect = true;
            }
            const bool got = obs.grid.at({r, c, 0}) != 0.0;
            CHECK(got == expect);
            const Box target = s.objects[1].box_at(0);
            const Box cell{c * cs, r * cs, (c + 1) * cs, (r + 1) * cs, 1.0};
            if (boxes_overlap(target, cell)) (got ? visible_target_cells : hidden_target_cells)++;
            if (boxes_overlap(s.objects[0].box_at(0), cell) && got) visible_blocker_cells++;
        }
    CHECK(hidden_target_cells > 0);   // the shadow exists
    CHECK(visible_blocker_cells > 0); // and the blocker itself is seen

    // Without occlusion the whole target is visible (it is inside the sector).
    Scenario open = shadow_scene(false);
    Observation clear = observe(open, 0, 0);
    int target_cells_seen = 0;
    const Box target = open.objects[1].box_at(0);
    for (int r = 0; r < G; ++r)
        for (int c = 0; c < G; ++c) {
            const Box cell{c * cs, r * cs, (c + 1) * cs, (r + 1) * cs, 1.0};
            if (boxes_overlap(target, cell) && clear.grid.at({r, c, 0}) != 0.0)
                ++target_cells_seen;
        }
    CHECK(target_cells_seen > visible_target_cells);
    CHECK(target_cells_seen >= 36);  // 6x6 m box on 1 m cells
}

TEST_CASE("observation dropout removes cells deterministically") {
    WorldConfig cfg;
    Scenario s = generate_scenario(cfg, 9);
    Scenario dropped = s;
    dropped.config.obs_dropout = 0.5;

    int kept_full = 0, kept_dropped = 0;
    Observation a = observe(s, 0, 3);
    Observation b = observe(dropped, 0, 3);
    Observation b2 = observe(dropped, 0, 3);
    CHECK(b.grid.values() == b2.grid.values());
    for (std::size_t i = 0; i < a.grid.size(); ++i) {
        kept_full += a.grid.values()[i] != 0.0;
        kept_dropped += b.grid.values()[i] != 0.0;
        // dropout only clears cells, never invents them
        CHECK(b.grid.values()[i] <= a.grid.values()[i]);
    }
    REQUIRE(kept_full > 5);
    CHECK(kept_dropped < kept_full);
}

TEST_CASE("ground truth covers all objects regardless of any agent's view") {
    Scenario s = shadow_scene(true);
    BoxSet gt = ground_truth_boxes(s, 0);
    REQUIRE(gt.size() == 2);  // the hidden target is still ground truth
    CHECK(gt[0].confidence == 1.0);
    CHECK(gt[0].x0 == 21.0);
    CHECK(gt[0].x1 == 27.0);
    CHECK(gt[1].x0 == 41.0);

    // A region crops and clips.
    BoxSet right = ground_truth_boxes(s, 0, Box{40.0, 0.0, 64.0, 64.0, 1.0});
    REQUIRE(right.size() == 1);
    CHECK(right[0].x0 == 41.0);
    BoxSet half = ground_truth_boxes(s, 0, Box{0.0, 0.0, 44.0, 64.0, 1.0});
    REQUIRE(half.size() == 2);
    CHECK(half[1].x1 == 44.0);  // clipped at the region edge

    CHECK_THROWS_AS(ground_truth_boxes(s, 99), Error);
}
