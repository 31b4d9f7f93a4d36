#include "latsync/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "latsync/error.hpp"

namespace latsync {

namespace {

std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

// Wedge outline as a polyline fan; avoids SVG arc-flag orientation pitfalls
// inside the y-flipped world group.
std::string sector_path(const AgentPose& a) {
    std::ostringstream os;
    os << "M " << num(a.x) << ' ' << num(a.y);
    const int segments = 24;
    for (int i = 0; i <= segments; ++i) {
        const double ang = a.orientation - a.half_angle +
                           2.0 * a.half_angle * static_cast<double>(i) / segments;
        os << " L " << num(a.x + a.range * std::cos(ang)) << ' '
           << num(a.y + a.range * std::sin(ang));
    }
    os << " Z";
    return os.str();
}

void draw_box_outline(std::ostringstream& os, const Box& b, const char* stroke, bool dashed,
                      double opacity, double stroke_w) {
    os << "  <rect x=\"" << num(b.x0) << "\" y=\"" << num(b.y0) << "\" width=\""
       << num(b.width()) << "\" height=\"" << num(b.height()) << "\" fill=\"none\" stroke=\""
       << stroke << "\" stroke-width=\"" << num(stroke_w) << "\" stroke-opacity=\""
       << num(opacity) << '"';
    if (dashed) os << " stroke-dasharray=\"" << num(stroke_w * 3) << '"';
    os << "/>\n";
}

}  // namespace

std::string render_frame_svg(const Scenario& scenario, int frame, const BoxSet& solid_overlay,
                             const BoxSet& dashed_overlay) {
    if (frame < 0 || frame >= scenario.duration())
        throw Error(msg("render_frame_svg: frame ", frame, " outside [0,", scenario.duration(),
                        ")"));
    const double size = scenario.config.size;
    const double stroke = size / 220.0;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(size) << ' '
       << num(size) << "\" width=\"720\" height=\"720\">\n";
    os << " <rect width=\"" << num(size) << "\" height=\"" << num(size)
       << "\" fill=\"#10151c\"/>\n";
    // World coordinates have y growing upward; flip into SVG's y-down space.
    os << " <g transform=\"translate(0," << num(size) << ") scale(1,-1)\">\n";

    for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
        const AgentPose& a = scenario.agents[i];
        os << "  <path d=\"" << sector_path(a)
           << "\" fill=\"#5e81ac\" fill-opacity=\"0.10\" stroke=\"#5e81ac\" stroke-opacity=\"0.5\""
           << " stroke-width=\"" << num(stroke * 0.6) << "\"><title>agent " << i
           << " view</title></path>\n";
    }
    for (std::size_t i = 0; i < scenario.objects.size(); ++i) {
        const Box b = scenario.objects[i].box_at(frame);
        os << "  <rect x=\"" << num(b.x0) << "\" y=\"" << num(b.y0) << "\" width=\""
           << num(b.width()) << "\" height=\"" << num(b.height())
           << "\" fill=\"#d08770\" fill-opacity=\"0.85\" stroke=\"#bf616a\" stroke-width=\""
           << num(stroke * 0.5) << "\"><title>object " << i << "</title></rect>\n";
    }
    for (std::size_t i = 0; i < scenario.agents.size(); ++i) {
        const AgentPose& a = scenario.agents[i];
        os << "  <circle cx=\"" << num(a.x) << "\" cy=\"" << num(a.y) << "\" r=\""
           << num(size / 80.0) << "\" fill=\"#88c0d0\" stroke=\"#2e3440\" stroke-width=\""
           << num(stroke * 0.5) << "\"><title>agent " << i << "</title></circle>\n";
    }
    for (const Box& b : solid_overlay) draw_box_outline(os, b, "#a3be8c", false, 0.9, stroke);
    for (const Box& b : dashed_overlay) {
        const double opacity = std::clamp(b.confidence, 0.25, 1.0);
        draw_box_outline(os, b, "#ebcb8b", true, opacity, stroke);
    }
    os << " </g>\n</svg>\n";
    return os.str();
}

std::string render_frame_svg(const Scenario& scenario, int frame) {
    return render_frame_svg(scenario, frame, {}, {});
}

}  // namespace latsync
