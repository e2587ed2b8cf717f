#include "hoidet/geometry.hpp"

#include <algorithm>

namespace hoidet::geom {

namespace {
constexpr double kEps = 1e-9;

double inter_area(const Box& a, const Box& b) {
    double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    return std::max(0.0, iw) * std::max(0.0, ih);
}
}  // namespace

double iou(const Box& a, const Box& b) {
    double inter = inter_area(a, b);
    double uni = a.area() + b.area() - inter;
    return uni <= kEps ? 0.0 : inter / uni;
}

double giou(const Box& a, const Box& b) {
    double inter = inter_area(a, b);
    double uni = a.area() + b.area() - inter;
    Box hull{std::min(a.x0, b.x0), std::min(a.y0, b.y0),
             std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
    double hull_area = hull.area();
    double i = uni <= kEps ? 0.0 : inter / uni;
    if (hull_area <= kEps) return i;
    return i - (hull_area - uni) / hull_area;
}

namespace {
using ag::Value;

struct Corners {
    Value x0, y0, x1, y1;
};

Corners split_corners(const Value& cxcywh) {
    auto cx = ag::slice_cols(cxcywh, 0, 1);
    auto cy = ag::slice_cols(cxcywh, 1, 2);
    auto hw = ag::scale(ag::slice_cols(cxcywh, 2, 3), 0.5);
    auto hh = ag::scale(ag::slice_cols(cxcywh, 3, 4), 0.5);
    return {ag::sub(cx, hw), ag::sub(cy, hh), ag::add(cx, hw), ag::add(cy, hh)};
}

Value area_of(const Corners& c) {
    return ag::mul(ag::clamp_min(ag::sub(c.x1, c.x0), 0.0),
                   ag::clamp_min(ag::sub(c.y1, c.y0), 0.0));
}
}  // namespace

ag::Value giou_rows(const Value& pred, const Value& tgt) {
    auto p = split_corners(pred);
    auto t = split_corners(tgt);

    auto iw = ag::clamp_min(ag::sub(ag::minimum(p.x1, t.x1), ag::maximum(p.x0, t.x0)), 0.0);
    auto ih = ag::clamp_min(ag::sub(ag::minimum(p.y1, t.y1), ag::maximum(p.y0, t.y0)), 0.0);
    auto inter = ag::mul(iw, ih);
    auto uni = ag::clamp_min(ag::sub(ag::add(area_of(p), area_of(t)), inter), kEps);

    auto hw = ag::sub(ag::maximum(p.x1, t.x1), ag::minimum(p.x0, t.x0));
    auto hh = ag::sub(ag::maximum(p.y1, t.y1), ag::minimum(p.y0, t.y0));
    auto hull = ag::clamp_min(ag::mul(hw, hh), kEps);

    auto iou_v = ag::div(inter, uni);
    return ag::sub(iou_v, ag::div(ag::sub(hull, uni), hull));
}

ag::Value l1_rows(const Value& pred, const Value& tgt) {
    return ag::sum_cols(ag::abs_(ag::sub(pred, tgt)));
}

}  // namespace hoidet::geom
