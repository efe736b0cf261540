#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mito {

/// Continuous pixel coordinates, origin at the top-left image corner,
/// x rightward, y downward. Shared by every module.

/// Raised when training or inference produces non-finite numbers; mapped to
/// its own exit code by the CLI.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Category { Mitotic, Impostor };
enum class Subtype { Normal, Atypical };
enum class Stage { Detector, Pipeline };

/// Ground-truth point annotation: a mitotic figure or a hard-negative
/// impostor. `subtype` is meaningful only for mitotic annotations.
struct PointAnnotation {
    std::string image_id;
    double x = 0.0;
    double y = 0.0;
    Category category = Category::Mitotic;
    std::optional<Subtype> subtype;
};

/// Axis-aligned box with float corners. Area is (x_max-x_min)*(y_max-y_min),
/// no +1 correction.
struct BBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    bool valid() const { return x_min < x_max && y_min < y_max; }
};

/// A scored detection, either raw detector output or a classifier-confirmed
/// pipeline result.
struct Detection {
    std::string image_id;
    BBox box;
    double score = 0.0;
    Stage stage = Stage::Detector;
};

/// Reference to an image on disk. width/height must match the decoded file.
struct ImageRecord {
    std::string image_id;
    std::string path;
    int width = 0;
    int height = 0;
    std::optional<std::string> domain_tag;
};

/// Square box of side `side` centered on the annotation point. No clamping
/// to image bounds; clamping is the consumer's decision at crop time.
BBox point_to_box(const PointAnnotation& p, double side);

/// Intersection over union of two valid boxes, in [0,1]. Symmetric.
double iou(const BBox& a, const BBox& b);

const char* to_string(Category c);
const char* to_string(Subtype s);
const char* to_string(Stage s);

}  // namespace mito
