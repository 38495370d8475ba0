#pragma once

#include <array>
#include <vector>

#include "darkship/common.hpp"

namespace darkship {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
};

using BoxGrad = std::array<double, 4>;  // d/d(x1, y1, x2, y2) of pred

double iou(const Box& a, const Box& b);

// 1 - IoU + center-distance^2 / enclosing-diagonal^2 + aspect term.
// Gradient w.r.t. pred coordinates; subgradients at min/max ties are the
// symmetric one-sided average so the gradient vanishes at pred == gt.
std::pair<double, BoxGrad> ciou_loss(const Box& pred, const Box& gt);

// Size-adaptive edge-distance penalty with non-monotonic attention.
std::pair<double, BoxGrad> piou2_loss(const Box& pred, const Box& gt, double lambda = 1.3);

double wiou_loss(const Box& pred, const Box& gt);

// Corner-distance IoU loss; `norm_sq` is the squared-diagonal normalizer
// (defaults to an 800x800 frame).
double mpdiou_loss(const Box& pred, const Box& gt, double norm_sq = 800.0 * 800.0 * 2.0);

// Cross-entropy against the two integer bins bracketing `target`, weighted
// by linear interpolation. Gradient w.r.t. logits.
std::pair<double, std::vector<double>> dfl_loss(const std::vector<double>& logits,
                                                double target);

}  // namespace darkship
