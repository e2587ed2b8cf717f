#pragma once

#include "hoidet/tensor.hpp"

#include <array>

namespace hoidet::geom {

// Corner form (x0,y0,x1,y1). Center form is (cx,cy,w,h); normalized boxes use
// the same layout with coordinates in [0,1].
struct Box {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double w() const { return x1 - x0; }
    double h() const { return y1 - y0; }
    double area() const { return std::max(0.0, w()) * std::max(0.0, h()); }
};

inline Box from_cxcywh(double cx, double cy, double w, double h) {
    return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

inline std::array<double, 4> to_cxcywh(const Box& b) {
    return {(b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2, b.w(), b.h()};
}

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

// Graph variants over row-aligned box sets in center form [G,4]. Each returns
// a [G,1] column so the caller can mask or average as needed.
ag::Value giou_rows(const ag::Value& pred_cxcywh, const ag::Value& tgt_cxcywh);
ag::Value l1_rows(const ag::Value& pred_cxcywh, const ag::Value& tgt_cxcywh);

}  // namespace hoidet::geom
