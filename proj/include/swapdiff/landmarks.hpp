#pragma once

#include <string>
#include <utility>
#include <vector>

namespace swapdiff {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Named facial keypoints in pixel coordinates. The set is fixed: eye
// centers, brow endpoints, nose tip, mouth corners — by construction a
// landmark record is never empty.
struct Landmarks {
    Point left_eye;
    Point right_eye;
    Point left_brow_outer;
    Point left_brow_inner;
    Point right_brow_inner;
    Point right_brow_outer;
    Point nose_tip;
    Point mouth_left;
    Point mouth_right;

    std::vector<std::pair<std::string, Point>> named() const {
        return {{"left_eye", left_eye},
                {"right_eye", right_eye},
                {"left_brow_outer", left_brow_outer},
                {"left_brow_inner", left_brow_inner},
                {"right_brow_inner", right_brow_inner},
                {"right_brow_outer", right_brow_outer},
                {"nose_tip", nose_tip},
                {"mouth_left", mouth_left},
                {"mouth_right", mouth_right}};
    }

    bool in_bounds(double width, double height) const {
        for (const auto& [name, p] : named()) {
            if (p.x < 0.0 || p.y < 0.0 || p.x > width - 1.0 || p.y > height - 1.0) return false;
        }
        return true;
    }

    Landmarks translated(double dx, double dy) const {
        Landmarks out = *this;
        for (Point* p : {&out.left_eye, &out.right_eye, &out.left_brow_outer, &out.left_brow_inner,
                         &out.right_brow_inner, &out.right_brow_outer, &out.nose_tip,
                         &out.mouth_left, &out.mouth_right}) {
            p->x += dx;
            p->y += dy;
        }
        return out;
    }
};

}  // namespace swapdiff
