#include "darkship/quant.hpp"

#include <cmath>
#include <string>

namespace darkship {

std::int64_t round_half_away(double v) {
    return static_cast<std::int64_t>(v >= 0 ? std::floor(v + 0.5) : std::ceil(v - 0.5));
}

namespace {

void check_f(QuantParams qp) {
    if (qp.fraction_bits < kMinFractionBits || qp.fraction_bits > kMaxFractionBits) {
        throw ConfigError("fraction_bits out of range: " + std::to_string(qp.fraction_bits));
    }
}

std::int8_t quantize_value(double v, int f, std::int64_t* saturated) {
    const std::int64_t q = round_half_away(std::ldexp(v, f));
    if (q < -128) {
        if (saturated) ++*saturated;
        return -128;
    }
    if (q > 127) {
        if (saturated) ++*saturated;
        return 127;
    }
    return static_cast<std::int8_t>(q);
}

}  // namespace

QTensor quantize(const Tensor& x, QuantParams qp, std::int64_t* saturated) {
    check_f(qp);
    QTensor out;
    out.shape = x.shape();
    out.qp = qp;
    out.data.resize(x.data().size());
    const int f = qp.fraction_bits;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
        out.data[i] = quantize_value(x.data()[i], f, saturated);
    }
    return out;
}

Tensor dequantize(const QTensor& q) {
    Tensor out(q.shape);
    const int f = q.qp.fraction_bits;
    for (std::size_t i = 0; i < q.data.size(); ++i) {
        out.data()[i] = static_cast<float>(std::ldexp(static_cast<double>(q.data[i]), -f));
    }
    return out;
}

QuantParams calibrate_fraction_bits(const std::vector<const Tensor*>& samples) {
    if (samples.empty()) throw UsageError("calibrate_fraction_bits: no samples");
    int best_f = kMaxFractionBits;
    double best_mse = -1.0;
    for (int f = kMinFractionBits; f <= kMaxFractionBits; ++f) {
        double se = 0.0;
        std::int64_t count = 0;
        for (const Tensor* t : samples) {
            for (float v : t->data()) {
                const std::int8_t q = quantize_value(v, f, nullptr);
                const double d = std::ldexp(static_cast<double>(q), -f) - v;
                se += d * d;
                ++count;
            }
        }
        const double mse = se / static_cast<double>(count);
        // ties toward larger f
        if (best_mse < 0.0 || mse < best_mse || (mse == best_mse && f > best_f)) {
            best_mse = mse;
            best_f = f;
        }
    }
    return QuantParams{best_f};
}

Tensor fake_quantize(const Tensor& x, QuantParams qp) {
    return dequantize(quantize(x, qp));
}

QTensor qconv2d(const QTensor& x, const QTensor& w, const std::vector<std::int32_t>& bias,
                const QConvGeometry& g, QuantParams out_qp, std::int64_t* saturated) {
    check_f(out_qp);
    if (x.shape.c != g.c_in) {
        throw DimensionError("qconv2d: input channels " + std::to_string(x.shape.c) +
                             " != c_in " + std::to_string(g.c_in));
    }
    if (g.groups < 1 || g.c_in % g.groups != 0 || g.c_out % g.groups != 0) {
        throw ConfigError("qconv2d: c_in/c_out must be divisible by groups");
    }
    const int shift = x.qp.fraction_bits + w.qp.fraction_bits - out_qp.fraction_bits;
    if (shift < 0) {
        throw ConfigError("qconv2d: f_out exceeds f_x + f_w (negative requantize shift)");
    }
    const int oh = (x.shape.h + 2 * g.padding - g.kh) / g.stride + 1;
    const int ow = (x.shape.w + 2 * g.padding - g.kw) / g.stride + 1;
    if (oh < 1 || ow < 1) throw DimensionError("qconv2d: spatial dims too small for kernel");
    const int cin_g = g.c_in / g.groups;
    const int cout_g = g.c_out / g.groups;

    QTensor out;
    out.shape = Shape{x.shape.n, g.c_out, oh, ow};
    out.qp = out_qp;
    out.data.resize(static_cast<std::size_t>(out.shape.numel()));

    const std::int64_t half = shift > 0 ? (std::int64_t{1} << (shift - 1)) : 0;
    auto requant = [&](std::int64_t acc) -> std::int8_t {
        std::int64_t q;
        if (shift == 0) {
            q = acc;
        } else if (acc >= 0) {
            q = (acc + half) >> shift;
        } else {
            q = -((-acc + half) >> shift);
        }
        if (q < -128) {
            if (saturated) ++*saturated;
            return -128;
        }
        if (q > 127) {
            if (saturated) ++*saturated;
            return 127;
        }
        return static_cast<std::int8_t>(q);
    };

    const std::size_t xplane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
    const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
    for (int n = 0; n < x.shape.n; ++n) {
        for (int oc = 0; oc < g.c_out; ++oc) {
            const int grp = oc / cout_g;
            const std::int8_t* kbase =
                w.data.data() + static_cast<std::size_t>(oc) * cin_g * g.kh * g.kw;
            std::int8_t* obase = out.data.data() +
                                 (static_cast<std::size_t>(n) * g.c_out + oc) * oplane;
            const std::int64_t b = bias.empty() ? 0 : bias[oc];
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    std::int64_t acc = b;
                    const int iy0 = oy * g.stride - g.padding;
                    const int ix0 = ox * g.stride - g.padding;
                    for (int ic = 0; ic < cin_g; ++ic) {
                        const std::int8_t* xp =
                            x.data.data() +
                            (static_cast<std::size_t>(n) * x.shape.c + grp * cin_g + ic) * xplane;
                        const std::int8_t* kp = kbase + static_cast<std::size_t>(ic) * g.kh * g.kw;
                        for (int ky = 0; ky < g.kh; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= x.shape.h) continue;
                            for (int kx = 0; kx < g.kw; ++kx) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= x.shape.w) continue;
                                acc += static_cast<std::int64_t>(kp[ky * g.kw + kx]) *
                                       xp[static_cast<std::size_t>(iy) * x.shape.w + ix];
                            }
                        }
                    }
                    obase[static_cast<std::size_t>(oy) * ow + ox] = requant(acc);
                }
            }
        }
    }
    return out;
}

}  // namespace darkship
