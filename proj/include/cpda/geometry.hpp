#pragma once

#include <algorithm>
#include <cmath>

#include "cpda/common.hpp"

namespace cpda {

// Axis-aligned box in center/size form, normalized to [0,1] within its image.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x1() const { return cx - 0.5 * w; }
    double y1() const { return cy - 0.5 * h; }
    double x2() const { return cx + 0.5 * w; }
    double y2() const { return cy + 0.5 * h; }
    double area() const { return w * h; }

    static Box from_corners(double x1, double y1, double x2, double y2) {
        return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
    }

    // Clamps the box to the unit square, preserving the covered region.
    Box clamped() const {
        double a = std::clamp(x1(), 0.0, 1.0);
        double b = std::clamp(y1(), 0.0, 1.0);
        double c = std::clamp(x2(), 0.0, 1.0);
        double d = std::clamp(y2(), 0.0, 1.0);
        return from_corners(a, b, c, d);
    }
};

inline double intersection_area(const Box& a, const Box& b) {
    double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
    double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    return iw * ih;
}

inline double iou(const Box& a, const Box& b) {
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

// Generalized overlap in (-1, 1]: IoU minus the enclosing-hull slack fraction.
inline double giou(const Box& a, const Box& b) {
    double inter = intersection_area(a, b);
    double uni = a.area() + b.area() - inter;
    double hull_w = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
    double hull_h = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
    double hull = hull_w * hull_h;
    double v = uni > 0.0 ? inter / uni : 0.0;
    if (hull > 0.0) v -= (hull - uni) / hull;
    return v;
}

}  // namespace cpda
