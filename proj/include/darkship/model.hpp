#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "darkship/quant.hpp"
#include "darkship/tensor.hpp"

namespace darkship {

enum class Variant { N, S };

// Declarative description of a model variant.
struct GraphSpec {
    Variant variant = Variant::N;
    bool use_ghost = false;
    bool use_p2 = false;
    bool use_c3 = false;
    Activation activation = Activation::SiLU;
    // 0 means "derive from variant": n -> 0.34/0.25, s -> 0.34/0.50
    double depth_multiple = 0.0;
    double width_multiple = 0.0;
    int reg_max = 16;
    int num_classes = 3;  // non-vessel, non-fishing vessel, fishing vessel
    // Layer names executed with integer arithmetic in quantized mode.
    // Empty means every conv layer.
    std::vector<std::string> quant_boundaries;
};

enum class NodeKind { Input, Conv, MaxPool, Upsample2x, Concat, Add, Slice };

struct Node {
    std::string name;
    NodeKind kind = NodeKind::Input;
    std::vector<int> inputs;
    int c_out = 0;  // output channels, all kinds

    // Conv
    int c_in = 0;
    int k = 1;
    int stride = 1;
    int pad = 0;
    int groups = 1;
    bool has_bn = false;   // structural: BN-backed conv (2*c_out counted params)
    bool has_bias = false; // structural: raw bias (c_out counted params)
    bool has_act = false;  // model activation applied after the conv

    // MaxPool
    int pool_k = 0;
    int pool_stride = 1;
    int pool_pad = 0;

    // Slice (channel range)
    int slice_begin = 0;
};

struct HeadBinding {
    int box_node = -1;  // 4*reg_max channels
    int cls_node = -1;  // num_classes channels
    int stride = 0;     // 4 (P2), 8, 16, 32
};

struct ModelGraph {
    GraphSpec spec;
    std::vector<Node> nodes;
    std::vector<HeadBinding> heads;

    std::vector<std::string> conv_layer_names() const;
};

// Per-conv weights, BN already folded. A quantized payload may sit alongside.
struct ConvWeights {
    std::vector<float> kernel;
    std::vector<float> bias;

    bool quantized = false;
    std::vector<std::int8_t> qkernel;
    int f_w = 0;    // kernel fraction bits
    int f_in = 0;   // input activation fraction bits
    int f_out = 0;  // conv output fraction bits (pre-activation)
};

struct WeightStore {
    std::map<std::string, ConvWeights> entries;
};

struct HeadOutput {
    struct Scale {
        Tensor box;  // (1, 4*reg_max, h, w) raw distribution logits
        Tensor cls;  // (1, num_classes, h, w) raw class logits
        int stride = 0;
    };
    std::vector<Scale> scales;
};

enum class ExecMode { Float, Quantized };

struct QuantStats {
    std::int64_t input_saturated = 0;
    std::int64_t output_saturated = 0;
    std::map<std::string, std::int64_t> per_layer_saturated;
};

ModelGraph build_model(const GraphSpec& spec);

// Checks every conv layer has exactly one weight entry and no orphans exist.
void validate_weights(const ModelGraph& g, const WeightStore& w);

// Deterministic seeded uniform(-0.1, 0.1) weights for desk-scale runs.
WeightStore seeded_weights(const ModelGraph& g, std::uint64_t seed);

// Called with each conv layer's input and pre-activation output.
using ConvObserver = std::function<void(const std::string&, const Tensor&, const Tensor&)>;

HeadOutput forward_chip(const ModelGraph& g, const WeightStore& w, const Tensor& chip,
                        ExecMode mode, QuantStats* stats = nullptr,
                        const ConvObserver& observer = nullptr);

// Post-training calibration: picks per-layer kernel/input/output fraction bits
// by MSE sweep over the given chips (float forwards), clamps f_out to
// f_in + f_w, and returns a store with int8 kernels.
WeightStore calibrate_store(const ModelGraph& g, const WeightStore& w,
                            const std::vector<const Tensor*>& chips);

// Structural parameter / FLOP counts; FLOPs = 2*MACs over one forward at the
// given reference input size (640 matches the convention the reported model
// tables use).
std::pair<std::int64_t, std::int64_t> count_params_flops(const ModelGraph& g,
                                                         int img = 640);

// Two-stage convolution: a primary conv producing half the channels,
// concatenated with a cheap depthwise pass over its output.
Tensor ghost_conv(const Tensor& x, const ConvParams& primary, const ConvParams& cheap);

std::string variant_name(const GraphSpec& spec);

}  // namespace darkship
