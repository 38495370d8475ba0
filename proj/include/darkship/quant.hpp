#pragma once

#include <cstdint>
#include <vector>

#include "darkship/tensor.hpp"

namespace darkship {

// Symmetric power-of-two INT8 scheme: scale = 2^-fraction_bits,
// representable range [-128 * 2^-f, 127 * 2^-f].
struct QuantParams {
    int fraction_bits = 0;

    double scale() const { return 1.0 / static_cast<double>(std::int64_t{1} << fraction_bits); }
    bool operator==(const QuantParams&) const = default;
};

constexpr int kMinFractionBits = 0;
constexpr int kMaxFractionBits = 15;

struct QTensor {
    Shape shape{};
    std::vector<std::int8_t> data;
    QuantParams qp{};
};

// Round half-away-from-zero, used by every quantization path.
std::int64_t round_half_away(double v);

// q = clamp(round(v * 2^f), -128, 127). Saturation is silent; if `saturated`
// is non-null the number of clamped elements is added to it.
QTensor quantize(const Tensor& x, QuantParams qp, std::int64_t* saturated = nullptr);

Tensor dequantize(const QTensor& q);

// Exhaustive f-sweep minimizing round-trip MSE; ties broken toward larger f.
QuantParams calibrate_fraction_bits(const std::vector<const Tensor*>& samples);

// dequantize(quantize(x)). Forward carries the quantization error; the
// documented derivative contract is identity inside the representable range
// and zero outside.
Tensor fake_quantize(const Tensor& x, QuantParams qp);

struct QConvGeometry {
    int c_out = 0;
    int c_in = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

// Integer convolution: int8 x int8 products accumulated exactly, plus int32
// bias at scale 2^-(f_x + f_w), requantized by arithmetic right shift of
// (f_x + f_w - f_out) with half-away rounding, clamped to int8.
QTensor qconv2d(const QTensor& x, const QTensor& w, const std::vector<std::int32_t>& bias,
                const QConvGeometry& g, QuantParams out_qp,
                std::int64_t* saturated = nullptr);

}  // namespace darkship
