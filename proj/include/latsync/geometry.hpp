#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "latsync/error.hpp"

namespace latsync {

// Axis-aligned box in world meters, with a detection confidence
// (1.0 for ground truth).
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double confidence = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x0 + x1); }
    double cy() const { return 0.5 * (y0 + y1); }

    bool valid() const { return x0 < x1 && y0 < y1; }

    static Box from_center(double cx, double cy, double w, double h, double conf = 1.0) {
        return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h, conf};
    }
};

using BoxSet = std::vector<Box>;

inline bool boxes_overlap(const Box& a, const Box& b) {
    return a.x0 < b.x1 && b.x0 < a.x1 && a.y0 < b.y1 && b.y0 < a.y1;
}

// Intersection clipped box; !valid() when disjoint.
inline Box clip_box(const Box& a, const Box& region) {
    Box r{std::max(a.x0, region.x0), std::max(a.y0, region.y0), std::min(a.x1, region.x1),
          std::min(a.y1, region.y1), a.confidence};
    return r;
}

// Intersection-over-union of two axis-aligned boxes; 0 when disjoint.
inline double iou(const Box& a, const Box& b) {
    if (!a.valid() || !b.valid()) throw Error("iou: degenerate box");
    const double ix = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double iy = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (ix <= 0.0 || iy <= 0.0) return 0.0;
    const double inter = ix * iy;
    return inter / (a.area() + b.area() - inter);
}

// True when the open segment p->q passes through the interior of the box
// (touching only the boundary does not count). Liang–Barsky clipping.
inline bool segment_crosses_box(double px, double py, double qx, double qy, const Box& b) {
    const double dx = qx - px, dy = qy - py;
    double t0 = 0.0, t1 = 1.0;
    const double pclip[4] = {-dx, dx, -dy, dy};
    const double qclip[4] = {px - b.x0, b.x1 - px, py - b.y0, b.y1 - py};
    for (int i = 0; i < 4; ++i) {
        if (pclip[i] == 0.0) {
            if (qclip[i] < 0.0) return false;  // parallel and outside
        } else {
            const double r = qclip[i] / pclip[i];
            if (pclip[i] < 0.0) {
                if (r > t1) return false;
                if (r > t0) t0 = r;
            } else {
                if (r < t0) return false;
                if (r < t1) t1 = r;
            }
        }
    }
    // Interior crossing requires a nonempty open interval strictly inside (0,1).
    const double eps = 1e-12;
    return t0 + eps < t1 && t1 > eps && t0 < 1.0 - eps;
}

}  // namespace latsync
