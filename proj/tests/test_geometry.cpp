#include <doctest.h>

#include "hoidet/geometry.hpp"
#include "hoidet/rng.hpp"

using namespace hoidet;
using geom::Box;

TEST_CASE("iou basics") {
    Box a{0, 0, 1, 1};
    CHECK(geom::iou(a, a) == doctest::Approx(1.0));
    CHECK(geom::iou(a, Box{2, 2, 3, 3}) == doctest::Approx(0.0));
    // Half overlap: [0,1]x[0,1] vs [0.5,0]x[1.5,1] -> inter 0.5, union 1.5
    CHECK(geom::iou(a, Box{0.5, 0, 1.5, 1}) == doctest::Approx(0.5 / 1.5));
    // Degenerate boxes have zero area and zero IoU
    CHECK(geom::iou(Box{0, 0, 0, 1}, Box{0, 0, 0, 1}) == doctest::Approx(0.0));
}

TEST_CASE("giou hand cases") {
    Box a{0, 0, 1, 1};
    CHECK(geom::giou(a, a) == doctest::Approx(1.0));

    // Corner-touching 0.5-squares: centers (0.25,0.25) and (0.75,0.75),
    // w=h=0.5. Intersection 0, union 0.5, hull the unit square.
    Box p = geom::from_cxcywh(0.25, 0.25, 0.5, 0.5);
    Box q = geom::from_cxcywh(0.75, 0.75, 0.5, 0.5);
    CHECK(geom::giou(p, q) == doctest::Approx(-0.5));

    // A pair engineered to land exactly at -1/3: two 0.25-wide strips with a
    // 0.25 gap. Union 0.5, hull 0.75, penalty (0.75-0.5)/0.75 = 1/3.
    Box s1{0, 0, 0.25, 1};
    Box s2{0.5, 0, 0.75, 1};
    CHECK(geom::giou(s1, s2) == doctest::Approx(-1.0 / 3.0));

    // GIoU is bounded in (-1, 1] and equals IoU when one box contains the other
    Box inner{0.25, 0.25, 0.75, 0.75};
    CHECK(geom::giou(a, inner) == doctest::Approx(geom::iou(a, inner)));
    CHECK(geom::giou(Box{0, 0, 0.1, 0.1}, Box{10, 10, 10.1, 10.1}) > -1.0);
}

TEST_CASE("graph giou matches scalar giou and differentiates") {
    Rng rng(41);
    int G = 6;
    auto pred = ag::make_value({G, 4}, true);
    auto tgt = ag::make_value({G, 4}, false);
    for (int i = 0; i < G; ++i) {
        // center-form boxes with healthy sizes, away from clamp kinks
        pred->x[i * 4 + 0] = 0.3 + 0.4 * rng.uniform();
        pred->x[i * 4 + 1] = 0.3 + 0.4 * rng.uniform();
        pred->x[i * 4 + 2] = 0.2 + 0.3 * rng.uniform();
        pred->x[i * 4 + 3] = 0.2 + 0.3 * rng.uniform();
        tgt->x[i * 4 + 0] = 0.3 + 0.4 * rng.uniform();
        tgt->x[i * 4 + 1] = 0.3 + 0.4 * rng.uniform();
        tgt->x[i * 4 + 2] = 0.2 + 0.3 * rng.uniform();
        tgt->x[i * 4 + 3] = 0.2 + 0.3 * rng.uniform();
    }

    auto g = geom::giou_rows(pred, tgt);
    REQUIRE(g->shape == std::vector<int>{G, 1});
    for (int i = 0; i < G; ++i) {
        Box p = geom::from_cxcywh(pred->x[i * 4], pred->x[i * 4 + 1], pred->x[i * 4 + 2],
                                  pred->x[i * 4 + 3]);
        Box t = geom::from_cxcywh(tgt->x[i * 4], tgt->x[i * 4 + 1], tgt->x[i * 4 + 2],
                                  tgt->x[i * 4 + 3]);
        CHECK(g->x[i] == doctest::Approx(geom::giou(p, t)).epsilon(1e-9));
    }

    // finite differences on the summed giou
    auto loss = ag::sum_all(g);
    ag::backward(loss);
    double eps = 1e-6;
    for (size_t i = 0; i < pred->x.size(); ++i) {
        double keep = pred->x[i];
        pred->x[i] = keep + eps;
        double up = ag::item(ag::sum_all(geom::giou_rows(pred, tgt)));
        pred->x[i] = keep - eps;
        double dn = ag::item(ag::sum_all(geom::giou_rows(pred, tgt)));
        pred->x[i] = keep;
        double fd = (up - dn) / (2 * eps);
        CHECK(std::abs(fd - pred->g[i]) < 1e-6);
    }
}

TEST_CASE("l1 rows") {
    auto p = ag::constant({2, 4}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5, 0.5});
    auto t = ag::constant({2, 4}, {0.2, 0.2, 0.3, 0.1, 0.5, 0.5, 0.5, 0.5});
    auto d = geom::l1_rows(p, t);
    CHECK(d->x[0] == doctest::Approx(0.4));
    CHECK(d->x[1] == doctest::Approx(0.0));
}
