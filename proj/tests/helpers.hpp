// Test-side reference implementations, kept independent of the library code.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "darkship/pipeline.hpp"
#include "darkship/quant.hpp"
#include "darkship/tensor.hpp"

namespace oracle {

using darkship::Detection;
using darkship::ConvParams;
using darkship::QConvGeometry;
using darkship::QTensor;
using darkship::QuantParams;
using darkship::Shape;
using darkship::Tensor;

// Naive direct-sum convolution, quadruple loop per output element.
inline Tensor conv2d_ref(const Tensor& x, const ConvParams& p) {
    const Shape& s = x.shape();
    const int oh = (s.h + 2 * p.padding - p.kh) / p.stride + 1;
    const int ow = (s.w + 2 * p.padding - p.kw) / p.stride + 1;
    const int cin_g = p.c_in / p.groups;
    const int cout_g = p.c_out / p.groups;
    Tensor out(Shape{s.n, p.c_out, oh, ow});
    for (int n = 0; n < s.n; ++n)
        for (int oc = 0; oc < p.c_out; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = p.bias.empty() ? 0.0 : p.bias[oc];
                    const int grp = oc / cout_g;
                    for (int ic = 0; ic < cin_g; ++ic)
                        for (int ky = 0; ky < p.kh; ++ky)
                            for (int kx = 0; kx < p.kw; ++kx) {
                                const int iy = oy * p.stride - p.padding + ky;
                                const int ix = ox * p.stride - p.padding + kx;
                                if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                                const std::size_t ki =
                                    ((static_cast<std::size_t>(oc) * cin_g + ic) * p.kh + ky) *
                                        p.kw +
                                    kx;
                                acc += double(p.kernel[ki]) *
                                       x.at(n, grp * cin_g + ic, iy, ix);
                            }
                    out.at(n, oc, oy, ox) = static_cast<float>(acc);
                }
    return out;
}

inline Tensor maxpool_ref(const Tensor& x, int k, int stride, int pad) {
    const Shape& s = x.shape();
    const int oh = (s.h + 2 * pad - k) / stride + 1;
    const int ow = (s.w + 2 * pad - k) / stride + 1;
    Tensor out(Shape{s.n, s.c, oh, ow});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    float m = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = oy * stride - pad + ky;
                            const int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= s.h || ix < 0 || ix >= s.w) continue;
                            m = std::max(m, x.at(n, c, iy, ix));
                        }
                    out.at(n, c, oy, ox) = m;
                }
    return out;
}

// Exact integer convolution with the same half-away-from-zero requantization.
inline QTensor qconv2d_ref(const QTensor& x, const QTensor& w,
                           const std::vector<std::int32_t>& bias, const QConvGeometry& g,
                           QuantParams out_qp) {
    const int oh = (x.shape.h + 2 * g.padding - g.kh) / g.stride + 1;
    const int ow = (x.shape.w + 2 * g.padding - g.kw) / g.stride + 1;
    const int cin_g = g.c_in / g.groups;
    const int cout_g = g.c_out / g.groups;
    const int shift = x.qp.fraction_bits + w.qp.fraction_bits - out_qp.fraction_bits;
    QTensor out;
    out.shape = Shape{x.shape.n, g.c_out, oh, ow};
    out.qp = out_qp;
    out.data.resize(static_cast<std::size_t>(out.shape.numel()));
    std::size_t oi = 0;
    for (int n = 0; n < x.shape.n; ++n)
        for (int oc = 0; oc < g.c_out; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    long long acc = bias.empty() ? 0 : bias[oc];
                    const int grp = oc / cout_g;
                    for (int ic = 0; ic < cin_g; ++ic)
                        for (int ky = 0; ky < g.kh; ++ky)
                            for (int kx = 0; kx < g.kw; ++kx) {
                                const int iy = oy * g.stride - g.padding + ky;
                                const int ix = ox * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= x.shape.h || ix < 0 || ix >= x.shape.w)
                                    continue;
                                const std::size_t wi =
                                    ((static_cast<std::size_t>(oc) * cin_g + ic) * g.kh + ky) *
                                        g.kw +
                                    kx;
                                const std::size_t xi =
                                    ((static_cast<std::size_t>(n) * x.shape.c + grp * cin_g +
                                      ic) *
                                         x.shape.h +
                                     iy) *
                                        x.shape.w +
                                    ix;
                                acc += static_cast<long long>(w.data[wi]) * x.data[xi];
                            }
                    long long q;
                    if (shift == 0) {
                        q = acc;
                    } else {
                        const long long half = 1LL << (shift - 1);
                        q = acc >= 0 ? (acc + half) >> shift : -((-acc + half) >> shift);
                    }
                    q = std::clamp<long long>(q, -128, 127);
                    out.data[oi++] = static_cast<std::int8_t>(q);
                }
    return out;
}

// Exhaustive fraction-bits sweep, minimizing round-trip MSE, ties to larger f.
inline int calibrate_ref(const std::vector<const Tensor*>& samples) {
    int best_f = 15;
    double best = -1.0;
    for (int f = 0; f <= 15; ++f) {
        double se = 0;
        long long n = 0;
        for (const Tensor* t : samples)
            for (float v : t->data()) {
                double q = std::round(std::abs(double(v)) * std::ldexp(1.0, f));
                q = std::copysign(std::min(q, v >= 0 ? 127.0 : 128.0), v);
                const double d = std::ldexp(q, -f) - v;
                se += d * d;
                ++n;
            }
        const double mse = se / double(n);
        if (best < 0 || mse < best || (mse == best && f > best_f)) {
            best = mse;
            best_f = f;
        }
    }
    return best_f;
}

// Quadratic-time greedy NMS with the (score desc, row asc, col asc) order.
inline std::vector<Detection> nms_ref(std::vector<Detection> dets, double thresh) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.row != b.row) return a.row < b.row;
        return a.col < b.col;
    });
    std::vector<Detection> keep;
    for (const Detection& d : dets) {
        bool ok = true;
        for (const Detection& k : keep) {
            const double iw = std::min(d.x2, k.x2) - std::max(d.x1, k.x1);
            const double ih = std::min(d.y2, k.y2) - std::max(d.y1, k.y1);
            const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
            const double ua = (d.x2 - d.x1) * (d.y2 - d.y1) + (k.x2 - k.x1) * (k.y2 - k.y1) -
                              inter;
            if (ua > 0 && inter / ua >= thresh) {
                ok = false;
                break;
            }
        }
        if (ok) keep.push_back(d);
    }
    return keep;
}

inline Tensor random_tensor(std::mt19937& rng, Shape s, float lo = -1.f, float hi = 1.f) {
    std::uniform_real_distribution<float> d(lo, hi);
    Tensor t(s);
    for (float& v : t.data()) v = d(rng);
    return t;
}

inline bool same_dets(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].row != b[i].row || a[i].col != b[i].col || a[i].score != b[i].score ||
            a[i].x1 != b[i].x1 || a[i].y1 != b[i].y1 || a[i].x2 != b[i].x2 ||
            a[i].y2 != b[i].y2 || a[i].class_id != b[i].class_id) {
            return false;
        }
    }
    return true;
}

}  // namespace oracle
