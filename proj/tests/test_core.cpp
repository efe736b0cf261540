#include <cmath>

#include <doctest.h>

#include "mito/rng.hpp"
#include "mito/types.hpp"

using namespace mito;

TEST_CASE("point_to_box centers a square on the annotation") {
    PointAnnotation p;
    p.x = 100;
    p.y = 100;
    BBox b = point_to_box(p, 50);
    CHECK(b.x_min == doctest::Approx(75));
    CHECK(b.y_min == doctest::Approx(75));
    CHECK(b.x_max == doctest::Approx(125));
    CHECK(b.y_max == doctest::Approx(125));

    // no clamping at this layer
    p.x = 0;
    p.y = 0;
    b = point_to_box(p, 50);
    CHECK(b.x_min == doctest::Approx(-25));
    CHECK(b.y_min == doctest::Approx(-25));
    CHECK(b.x_max == doctest::Approx(25));
    CHECK(b.y_max == doctest::Approx(25));

    p.x = 10.5;
    p.y = 20.5;
    b = point_to_box(p, 3);
    CHECK(b.x_min == doctest::Approx(9));
    CHECK(b.y_min == doctest::Approx(19));
    CHECK(b.x_max == doctest::Approx(12));
    CHECK(b.y_max == doctest::Approx(22));

    CHECK_THROWS_AS(point_to_box(p, 0), std::invalid_argument);
    CHECK_THROWS_AS(point_to_box(p, -1), std::invalid_argument);
}

TEST_CASE("point_to_box center round trip is the identity") {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        PointAnnotation p;
        p.x = rng.uniform(0, 2000);
        p.y = rng.uniform(0, 2000);
        const double side = rng.uniform(1e-3, 300);
        const BBox b = point_to_box(p, side);
        CHECK(b.center_x() == doctest::Approx(p.x).epsilon(1e-12));
        CHECK(b.center_y() == doctest::Approx(p.y).epsilon(1e-12));
        CHECK(b.width() == doctest::Approx(side).epsilon(1e-9));
    }
}

TEST_CASE("iou handles identity, disjoint and partial overlap") {
    const BBox a{0, 0, 2, 2};
    CHECK(iou(a, a) == doctest::Approx(1.0));

    const BBox far{10, 10, 12, 12};
    CHECK(iou(a, far) == doctest::Approx(0.0));

    const BBox b{1, 0, 3, 2};
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("iou is symmetric and bounded on random box pairs") {
    Rng rng(11);
    auto random_box = [&]() {
        const double x0 = rng.uniform(0, 100);
        const double y0 = rng.uniform(0, 100);
        return BBox{x0, y0, x0 + rng.uniform(0.5, 60), y0 + rng.uniform(0.5, 60)};
    };
    for (int i = 0; i < 1000; ++i) {
        const BBox a = random_box();
        const BBox b = random_box();
        const double ab = iou(a, b);
        const double ba = iou(b, a);
        CHECK(ab == ba);
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(iou(a, a) == 1.0);
    }
}
