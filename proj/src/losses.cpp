#include "darkship/losses.hpp"

#include <algorithm>
#include <cmath>

namespace darkship {

namespace {

constexpr double kEps = 1e-10;
constexpr double kPi = 3.14159265358979323846;

void check_box(const Box& b, const char* who) {
    if (!(b.x1 < b.x2) || !(b.y1 < b.y2)) {
        throw DomainError(std::string(who) + ": degenerate box");
    }
}

// Subgradient of max(a, b) w.r.t. a; symmetric choice at ties.
double sel_max(double a, double b) { return a > b ? 1.0 : (a < b ? 0.0 : 0.5); }
double sel_min(double a, double b) { return a < b ? 1.0 : (a > b ? 0.0 : 0.5); }

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct IouParts {
    double iou = 0;
    BoxGrad grad{};  // d(iou)/d(pred)
};

IouParts iou_with_grad(const Box& p, const Box& g) {
    const double ix1 = std::max(p.x1, g.x1), iy1 = std::max(p.y1, g.y1);
    const double ix2 = std::min(p.x2, g.x2), iy2 = std::min(p.y2, g.y2);
    const double iw = ix2 - ix1, ih = iy2 - iy1;
    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    const double uni = p.area() + g.area() - inter;

    BoxGrad d_inter{0, 0, 0, 0};
    if (iw > 0 && ih > 0) {
        d_inter[0] = -sel_max(p.x1, g.x1) * ih;
        d_inter[2] = sel_min(p.x2, g.x2) * ih;
        d_inter[1] = -sel_max(p.y1, g.y1) * iw;
        d_inter[3] = sel_min(p.y2, g.y2) * iw;
    }
    const BoxGrad d_area{-p.height(), -p.width(), p.height(), p.width()};

    IouParts out;
    out.iou = inter / uni;
    for (int i = 0; i < 4; ++i) {
        const double d_union = d_area[i] - d_inter[i];
        out.grad[i] = (d_inter[i] * uni - inter * d_union) / (uni * uni);
    }
    return out;
}

}  // namespace

double iou(const Box& a, const Box& b) {
    check_box(a, "iou");
    check_box(b, "iou");
    const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    return inter / (a.area() + b.area() - inter);
}

std::pair<double, BoxGrad> ciou_loss(const Box& p, const Box& g) {
    check_box(p, "ciou_loss");
    check_box(g, "ciou_loss");
    const IouParts ip = iou_with_grad(p, g);

    // center-distance^2 / enclosing-diagonal^2
    const double dcx = (p.x1 + p.x2 - g.x1 - g.x2) / 2.0;
    const double dcy = (p.y1 + p.y2 - g.y1 - g.y2) / 2.0;
    const double rho2 = dcx * dcx + dcy * dcy;
    const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
    const double chh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
    const double c2 = cw * cw + chh * chh + kEps;

    const BoxGrad d_rho2{dcx, dcy, dcx, dcy};
    const BoxGrad d_c2{-2.0 * cw * sel_min(p.x1, g.x1), -2.0 * chh * sel_min(p.y1, g.y1),
                       2.0 * cw * sel_max(p.x2, g.x2), 2.0 * chh * sel_max(p.y2, g.y2)};

    // aspect-ratio consistency
    const double wp = p.width(), hp = p.height();
    const double phi = std::atan(g.width() / g.height()) - std::atan(wp / hp);
    const double v = 4.0 / (kPi * kPi) * phi * phi;
    const double datan_scale = hp * hp / (hp * hp + wp * wp);  // d atan(wp/hp) / d(wp/hp) * 1
    const BoxGrad d_u{-1.0 / hp, wp / (hp * hp), 1.0 / hp, -wp / (hp * hp)};
    BoxGrad d_v{};
    for (int i = 0; i < 4; ++i) {
        d_v[i] = 4.0 / (kPi * kPi) * 2.0 * phi * (-datan_scale * d_u[i]);
    }

    const double denom = 1.0 - ip.iou + v + kEps;
    const double loss = 1.0 - ip.iou + rho2 / c2 + v * v / denom;

    BoxGrad grad{};
    for (int i = 0; i < 4; ++i) {
        const double d_center = (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
        const double d_denom = -ip.grad[i] + d_v[i];
        const double d_aspect = (2.0 * v * d_v[i] * denom - v * v * d_denom) / (denom * denom);
        grad[i] = -ip.grad[i] + d_center + d_aspect;
    }
    return {loss, grad};
}

std::pair<double, BoxGrad> piou2_loss(const Box& p, const Box& g, double lambda) {
    check_box(p, "piou2_loss");
    check_box(g, "piou2_loss");
    if (!(lambda > 0)) throw DomainError("piou2_loss: lambda must be positive");
    const IouParts ip = iou_with_grad(p, g);

    // mean absolute corresponding-edge distance, normalized by gt dimensions
    const double wg = g.width(), hg = g.height();
    const double pen =
        (std::abs(p.x1 - g.x1) / wg + std::abs(p.x2 - g.x2) / wg +
         std::abs(p.y1 - g.y1) / hg + std::abs(p.y2 - g.y2) / hg) /
        4.0;
    const BoxGrad d_pen{sgn(p.x1 - g.x1) / (4.0 * wg), sgn(p.y1 - g.y1) / (4.0 * hg),
                        sgn(p.x2 - g.x2) / (4.0 * wg), sgn(p.y2 - g.y2) / (4.0 * hg)};

    // base loss 1 - (IoU - f(pen)), f(pen) = 1 - exp(-pen^2)
    const double f = 1.0 - std::exp(-pen * pen);
    const double base = 1.0 - ip.iou + f;

    // non-monotonic attention u(lambda * q), q = exp(-pen)
    const double q = std::exp(-pen);
    const double lq = lambda * q;
    const double att = 3.0 * lq * std::exp(-lq * lq);

    const double loss = att * base;
    BoxGrad grad{};
    const double datt_dq = 3.0 * lambda * std::exp(-lq * lq) * (1.0 - 2.0 * lq * lq);
    for (int i = 0; i < 4; ++i) {
        const double d_base = -ip.grad[i] + std::exp(-pen * pen) * 2.0 * pen * d_pen[i];
        const double d_att = datt_dq * (-q) * d_pen[i];
        grad[i] = d_att * base + att * d_base;
    }
    return {loss, grad};
}

double wiou_loss(const Box& p, const Box& g) {
    check_box(p, "wiou_loss");
    check_box(g, "wiou_loss");
    const double dcx = (p.x1 + p.x2 - g.x1 - g.x2) / 2.0;
    const double dcy = (p.y1 + p.y2 - g.y1 - g.y2) / 2.0;
    const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
    const double chh = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
    const double r = std::exp((dcx * dcx + dcy * dcy) / (cw * cw + chh * chh + kEps));
    return r * (1.0 - iou(p, g));
}

double mpdiou_loss(const Box& p, const Box& g, double norm_sq) {
    check_box(p, "mpdiou_loss");
    check_box(g, "mpdiou_loss");
    const double d1 = (p.x1 - g.x1) * (p.x1 - g.x1) + (p.y1 - g.y1) * (p.y1 - g.y1);
    const double d2 = (p.x2 - g.x2) * (p.x2 - g.x2) + (p.y2 - g.y2) * (p.y2 - g.y2);
    return 1.0 - iou(p, g) + d1 / norm_sq + d2 / norm_sq;
}

std::pair<double, std::vector<double>> dfl_loss(const std::vector<double>& logits,
                                                double target) {
    const int reg_max = static_cast<int>(logits.size());
    if (reg_max < 1) throw DomainError("dfl_loss: empty logits");
    if (target < 0.0 || target > reg_max - 1) {
        throw DomainError("dfl_loss: target out of [0, reg_max-1]");
    }

    int lo = static_cast<int>(std::floor(target));
    if (lo == reg_max - 1) lo = reg_max - 2;  // keep both bins in range at the top edge
    if (lo < 0) lo = 0;
    const int hi = std::min(lo + 1, reg_max - 1);
    const double w_hi = target - lo;
    const double w_lo = 1.0 - w_hi;

    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> prob(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        prob[i] = std::exp(logits[i] - m);
        z += prob[i];
    }
    for (double& p : prob) p /= z;

    const double loss = -(w_lo * std::log(prob[lo]) + w_hi * std::log(prob[hi]));
    std::vector<double> grad = prob;
    grad[lo] -= w_lo;
    grad[hi] -= w_hi;
    return {loss, grad};
}

}  // namespace darkship
