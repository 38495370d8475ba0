#pragma once

#include <cstdint>
#include <vector>

#include "darkship/common.hpp"

namespace darkship {

// Dense rank-4 feature map, row-major (batch, channels, height, width).
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::int64_t numel() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s) : shape_(s), data_(static_cast<std::size_t>(s.numel()), 0.f) {
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
            throw DimensionError("Tensor: all dims must be >= 1");
        }
    }
    Tensor(Shape s, std::vector<float> data) : shape_(s), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != s.numel()) {
            throw DimensionError("Tensor: data length does not match shape");
        }
    }

    const Shape& shape() const { return shape_; }
    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    float& at(int n, int c, int y, int x) {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    const float& at(int n, int c, int y, int x) const {
        return data_[((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

private:
    Shape shape_{};
    std::vector<float> data_;
};

struct ConvParams {
    // kernel layout (c_out, c_in/groups, kh, kw), row-major
    std::vector<float> kernel;
    std::vector<float> bias;  // c_out entries; may be empty for bias-free convs
    int c_out = 0;
    int c_in = 0;
    int kh = 0;
    int kw = 0;
    int stride = 1;
    int padding = 0;
    int groups = 1;
};

struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float epsilon = 1e-5f;
};

enum class Activation { SiLU, HardSwish, Sigmoid, Identity };

// Direct cross-correlation with zero padding. Accumulates in float64,
// stores float32. Supports grouped convolution.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Grouped conv with groups == c_in == c_out.
Tensor depthwise_conv2d(const Tensor& x, const ConvParams& p);

Tensor activate(const Tensor& x, Activation kind);
float activate_scalar(float v, Activation kind);

// Window max with -inf padding semantics.
Tensor maxpool2d(const Tensor& x, int k, int stride, int pad);

Tensor upsample_nearest2x(const Tensor& x);

Tensor concat_channels(const std::vector<const Tensor*>& xs);

// Returns params such that conv2d(x, folded) == bn(conv2d(x, p)).
ConvParams fold_batchnorm(const ConvParams& p, const BatchNormParams& bn);

}  // namespace darkship
