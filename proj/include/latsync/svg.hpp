#pragma once

#include <string>

#include "latsync/world.hpp"

namespace latsync {

// Standalone SVG of one frame: world boundary, object boxes, agent positions
// with their view sectors. The overlay variants draw extra box sets on top —
// solid outlines for the first set (e.g. ground truth), dashed outlines with
// confidence-scaled opacity for the second (e.g. detections).
std::string render_frame_svg(const Scenario& scenario, int frame);
std::string render_frame_svg(const Scenario& scenario, int frame, const BoxSet& solid_overlay,
                             const BoxSet& dashed_overlay);

}  // namespace latsync
