#include "darkship/tensor.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace darkship {

namespace {

int out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    const Shape& s = x.shape();
    if (s.c != p.c_in) {
        throw DimensionError("conv2d: input channels " + std::to_string(s.c) +
                             " != c_in " + std::to_string(p.c_in));
    }
    if (p.groups < 1 || p.c_in % p.groups != 0 || p.c_out % p.groups != 0) {
        throw ConfigError("conv2d: c_in/c_out must be divisible by groups");
    }
    if (p.stride < 1 || p.padding < 0) {
        throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
    }
    const int oh = out_dim(s.h, p.kh, p.stride, p.padding);
    const int ow = out_dim(s.w, p.kw, p.stride, p.padding);
    if (oh < 1 || ow < 1) {
        throw DimensionError("conv2d: spatial dims too small for kernel (h=" +
                             std::to_string(s.h) + ", w=" + std::to_string(s.w) + ")");
    }
    const int cin_g = p.c_in / p.groups;
    const int cout_g = p.c_out / p.groups;
    const bool has_bias = !p.bias.empty();

    Tensor out(Shape{s.n, p.c_out, oh, ow});
    std::vector<double> acc(static_cast<std::size_t>(ow));

    for (int n = 0; n < s.n; ++n) {
        for (int oc = 0; oc < p.c_out; ++oc) {
            const int g = oc / cout_g;
            const float* kbase =
                p.kernel.data() + static_cast<std::size_t>(oc) * cin_g * p.kh * p.kw;
            float* orow0 = &out.at(n, oc, 0, 0);
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * p.stride - p.padding;
                for (int oxx = 0; oxx < ow; ++oxx) acc[oxx] = 0.0;
                for (int ic = 0; ic < cin_g; ++ic) {
                    const float* xplane = &x.at(n, g * cin_g + ic, 0, 0);
                    const float* krow = kbase + static_cast<std::size_t>(ic) * p.kh * p.kw;
                    for (int ky = 0; ky < p.kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= s.h) continue;
                        const float* xrow = xplane + static_cast<std::size_t>(iy) * s.w;
                        for (int kx = 0; kx < p.kw; ++kx) {
                            const double kv = krow[ky * p.kw + kx];
                            const int ix0 = kx - p.padding;
                            // valid output range for this kernel column
                            int lo = 0, hi = ow;
                            if (p.stride == 1) {
                                lo = std::max(0, -ix0);
                                hi = std::min(ow, s.w - ix0);
                                const float* xp = xrow + ix0 + lo;
                                double* ap = acc.data() + lo;
                                for (int i = 0; i < hi - lo; ++i) ap[i] += kv * xp[i];
                            } else {
                                for (int ox = lo; ox < hi; ++ox) {
                                    const int ix = ox * p.stride + ix0;
                                    if (ix < 0 || ix >= s.w) continue;
                                    acc[ox] += kv * xrow[ix];
                                }
                            }
                        }
                    }
                }
                const double b = has_bias ? p.bias[oc] : 0.0;
                float* orow = orow0 + static_cast<std::size_t>(oy) * ow;
                for (int ox = 0; ox < ow; ++ox) {
                    orow[ox] = static_cast<float>(acc[ox] + b);
                }
            }
        }
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& x, const ConvParams& p) {
    if (!(p.groups == p.c_in && p.c_in == p.c_out && x.shape().c == p.c_in)) {
        throw ConfigError("depthwise_conv2d: requires groups == c_in == c_out == channels");
    }
    return conv2d(x, p);
}

float activate_scalar(float v, Activation kind) {
    switch (kind) {
        case Activation::SiLU:
            return static_cast<float>(v / (1.0 + std::exp(-static_cast<double>(v))));
        case Activation::HardSwish: {
            float t = v + 3.f;
            t = t < 0.f ? 0.f : (t > 6.f ? 6.f : t);
            return v * t / 6.f;
        }
        case Activation::Sigmoid:
            return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        case Activation::Identity:
            return v;
    }
    return v;
}

Tensor activate(const Tensor& x, Activation kind) {
    if (kind == Activation::Identity) return x;
    Tensor out(x.shape());
    const auto& in = x.data();
    auto& o = out.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = activate_scalar(in[i], kind);
    return out;
}

Tensor maxpool2d(const Tensor& x, int k, int stride, int pad) {
    if (k < 1 || stride < 1 || pad < 0) {
        throw ConfigError("maxpool2d: invalid window configuration");
    }
    const Shape& s = x.shape();
    const int oh = out_dim(s.h, k, stride, pad);
    const int ow = out_dim(s.w, k, stride, pad);
    if (oh < 1 || ow < 1) {
        throw DimensionError("maxpool2d: spatial dims too small for window");
    }
    Tensor out(Shape{s.n, s.c, oh, ow});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    float m = -std::numeric_limits<float>::infinity();
                    const int iy0 = oy * stride - pad;
                    const int ix0 = ox * stride - pad;
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= s.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= s.w) continue;
                            m = std::max(m, x.at(n, c, iy, ix));
                        }
                    }
                    out.at(n, c, oy, ox) = m;
                }
            }
        }
    }
    return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
    const Shape& s = x.shape();
    Tensor out(Shape{s.n, s.c, s.h * 2, s.w * 2});
    for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h * 2; ++y) {
                const float* xrow = &x.at(n, c, y / 2, 0);
                float* orow = &out.at(n, c, y, 0);
                for (int xi = 0; xi < s.w * 2; ++xi) orow[xi] = xrow[xi / 2];
            }
        }
    }
    return out;
}

Tensor concat_channels(const std::vector<const Tensor*>& xs) {
    if (xs.empty()) throw DimensionError("concat_channels: no inputs");
    const Shape& s0 = xs[0]->shape();
    int ctot = 0;
    for (const Tensor* t : xs) {
        const Shape& s = t->shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw DimensionError("concat_channels: batch/spatial dims mismatch");
        }
        ctot += s.c;
    }
    Tensor out(Shape{s0.n, ctot, s0.h, s0.w});
    const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
    for (int n = 0; n < s0.n; ++n) {
        std::size_t coff = 0;
        for (const Tensor* t : xs) {
            const std::size_t nch = static_cast<std::size_t>(t->shape().c);
            const float* src = t->data().data() + static_cast<std::size_t>(n) * nch * plane;
            float* dst = out.data().data() +
                         (static_cast<std::size_t>(n) * ctot + coff) * plane;
            std::copy(src, src + nch * plane, dst);
            coff += nch;
        }
    }
    return out;
}

ConvParams fold_batchnorm(const ConvParams& p, const BatchNormParams& bn) {
    if (static_cast<int>(bn.gamma.size()) != p.c_out ||
        static_cast<int>(bn.beta.size()) != p.c_out ||
        static_cast<int>(bn.running_mean.size()) != p.c_out ||
        static_cast<int>(bn.running_var.size()) != p.c_out) {
        throw DimensionError("fold_batchnorm: BN channel count != c_out");
    }
    ConvParams folded = p;
    if (folded.bias.empty()) folded.bias.assign(p.c_out, 0.f);
    const std::size_t ksz = p.kernel.size() / static_cast<std::size_t>(p.c_out);
    for (int oc = 0; oc < p.c_out; ++oc) {
        const double denom = static_cast<double>(bn.running_var[oc]) + bn.epsilon;
        if (denom <= 0.0) {
            throw NumericError("fold_batchnorm: non-positive variance + epsilon");
        }
        const double scale = bn.gamma[oc] / std::sqrt(denom);
        for (std::size_t i = 0; i < ksz; ++i) {
            folded.kernel[oc * ksz + i] = static_cast<float>(p.kernel[oc * ksz + i] * scale);
        }
        const double b0 = p.bias.empty() ? 0.0 : p.bias[oc];
        folded.bias[oc] =
            static_cast<float>((b0 - bn.running_mean[oc]) * scale + bn.beta[oc]);
    }
    return folded;
}

}  // namespace darkship
