#include "mito/types.hpp"

#include <algorithm>

namespace mito {

BBox point_to_box(const PointAnnotation& p, double side) {
    if (!(side > 0.0)) {
        throw std::invalid_argument("point_to_box: side must be positive");
    }
    const double h = 0.5 * side;
    return BBox{p.x - h, p.y - h, p.x + h, p.y + h};
}

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) {
        return 0.0;
    }
    return inter / uni;
}

const char* to_string(Category c) {
    return c == Category::Mitotic ? "mitotic" : "impostor";
}

const char* to_string(Subtype s) {
    return s == Subtype::Normal ? "normal" : "atypical";
}

const char* to_string(Stage s) {
    return s == Stage::Detector ? "detector" : "pipeline";
}

}  // namespace mito
