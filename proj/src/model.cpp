#include "darkship/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace darkship {

namespace {

int make_divisible(double v, int div = 8) {
    return static_cast<int>(std::ceil(v / div)) * div;
}

struct Builder {
    ModelGraph g;
    Activation act;

    int add(Node n) {
        g.nodes.push_back(std::move(n));
        return static_cast<int>(g.nodes.size()) - 1;
    }

    int input(int c) {
        Node n;
        n.name = "input";
        n.kind = NodeKind::Input;
        n.c_out = c;
        return add(std::move(n));
    }

    int conv(int from, int c2, int k, int s, const std::string& name, int groups = 1,
             bool with_act = true) {
        Node n;
        n.name = name;
        n.kind = NodeKind::Conv;
        n.inputs = {from};
        n.c_in = g.nodes[from].c_out;
        n.c_out = c2;
        n.k = k;
        n.stride = s;
        n.pad = k / 2;
        n.groups = groups;
        n.has_bn = true;
        n.has_act = with_act;
        return add(std::move(n));
    }

    // Detect-head final 1x1: raw bias, no BN, no activation.
    int head_conv(int from, int c2, const std::string& name) {
        Node n;
        n.name = name;
        n.kind = NodeKind::Conv;
        n.inputs = {from};
        n.c_in = g.nodes[from].c_out;
        n.c_out = c2;
        n.k = 1;
        n.has_bias = true;
        return add(std::move(n));
    }

    int maxpool(int from, int k, int s, int pad) {
        Node n;
        n.name = "pool" + std::to_string(g.nodes.size());
        n.kind = NodeKind::MaxPool;
        n.inputs = {from};
        n.c_out = g.nodes[from].c_out;
        n.pool_k = k;
        n.pool_stride = s;
        n.pool_pad = pad;
        return add(std::move(n));
    }

    int upsample(int from) {
        Node n;
        n.name = "up" + std::to_string(g.nodes.size());
        n.kind = NodeKind::Upsample2x;
        n.inputs = {from};
        n.c_out = g.nodes[from].c_out;
        return add(std::move(n));
    }

    int concat(std::vector<int> from) {
        Node n;
        n.name = "cat" + std::to_string(g.nodes.size());
        n.kind = NodeKind::Concat;
        n.inputs = std::move(from);
        n.c_out = 0;
        for (int i : n.inputs) n.c_out += g.nodes[i].c_out;
        return add(std::move(n));
    }

    int residual(int a, int b) {
        Node n;
        n.name = "add" + std::to_string(g.nodes.size());
        n.kind = NodeKind::Add;
        n.inputs = {a, b};
        n.c_out = g.nodes[a].c_out;
        return add(std::move(n));
    }

    int slice(int from, int begin, int count) {
        Node n;
        n.name = "slice" + std::to_string(g.nodes.size());
        n.kind = NodeKind::Slice;
        n.inputs = {from};
        n.c_out = count;
        n.slice_begin = begin;
        return add(std::move(n));
    }

    int ghost(int from, int c2, int k, int s, const std::string& name, bool with_act = true) {
        if (c2 % 2 != 0) {
            throw ConfigError("ghost conv: odd output width unsupported: " + name);
        }
        const int half = c2 / 2;
        const int p = conv(from, half, k, s, name + ".primary", 1, with_act);
        const int q = conv(p, half, 5, 1, name + ".cheap", half, with_act);
        return concat({p, q});
    }

    int down(int from, int c2, const std::string& name, bool use_ghost) {
        return use_ghost ? ghost(from, c2, 3, 2, name) : conv(from, c2, 3, 2, name);
    }

    int bottleneck(int from, int c2, bool shortcut, int k1, int k2, const std::string& name) {
        const int cin = g.nodes[from].c_out;
        int y = conv(from, c2, k1, 1, name + ".cv1");
        y = conv(y, c2, k2, 1, name + ".cv2");
        if (shortcut && cin == c2) y = residual(y, from);
        return y;
    }

    int ghost_bottleneck(int from, int c2, const std::string& name) {
        const int half = c2 / 2;
        int y = ghost(from, half, 1, 1, name + ".gc1");
        y = ghost(y, c2, 1, 1, name + ".gc2", /*with_act=*/false);
        return residual(y, from);  // stride-1 ghost bottleneck keeps an identity path
    }

    int block_m(int from, int c2, bool shortcut, bool ghost_b, const std::string& name,
                bool c3_kernels) {
        if (ghost_b) return ghost_bottleneck(from, c2, name);
        return bottleneck(from, c2, shortcut, c3_kernels ? 1 : 3, 3, name);
    }

    // C2f: split after cv1, chain of bottlenecks, concat all chunks.
    int c2f(int from, int c2, int n, bool shortcut, bool ghost_b, const std::string& name) {
        const int c = c2 / 2;
        const int y = conv(from, 2 * c, 1, 1, name + ".cv1");
        std::vector<int> chunks{slice(y, 0, c), slice(y, c, c)};
        for (int i = 0; i < n; ++i) {
            chunks.push_back(block_m(chunks.back(), c, shortcut, ghost_b,
                                     name + ".m" + std::to_string(i), false));
        }
        const int cat = concat(chunks);
        return conv(cat, c2, 1, 1, name + ".cv2");
    }

    // C3: two parallel 1x1 stems, bottleneck chain on one, merge.
    int c3(int from, int c2, int n, bool shortcut, bool ghost_b, const std::string& name) {
        const int c = c2 / 2;
        int y = conv(from, c, 1, 1, name + ".cv1");
        for (int i = 0; i < n; ++i) {
            y = block_m(y, c, shortcut, ghost_b, name + ".m" + std::to_string(i), true);
        }
        const int z = conv(from, c, 1, 1, name + ".cv2");
        const int cat = concat({y, z});
        return conv(cat, c2, 1, 1, name + ".cv3");
    }

    int block(int from, int c2, int n, bool shortcut, bool use_c3, bool use_ghost,
              const std::string& name) {
        if (use_c3) return c3(from, c2, n, shortcut, use_ghost, name);
        return c2f(from, c2, n, shortcut, use_ghost, name);
    }

    int sppf(int from, int c2, const std::string& name) {
        const int cin = g.nodes[from].c_out;
        const int hidden = cin / 2;
        const int y = conv(from, hidden, 1, 1, name + ".cv1");
        const int p1 = maxpool(y, 5, 1, 2);
        const int p2 = maxpool(p1, 5, 1, 2);
        const int p3 = maxpool(p2, 5, 1, 2);
        const int cat = concat({y, p1, p2, p3});
        return conv(cat, c2, 1, 1, name + ".cv2");
    }

    void detect_scale(int from, int stride, int reg_max, int nc, int c_box, int c_cls,
                      const std::string& name) {
        int b = conv(from, c_box, 3, 1, name + ".box.0");
        b = conv(b, c_box, 3, 1, name + ".box.1");
        b = head_conv(b, 4 * reg_max, name + ".box.2");
        int c = conv(from, c_cls, 3, 1, name + ".cls.0");
        c = conv(c, c_cls, 3, 1, name + ".cls.1");
        c = head_conv(c, nc, name + ".cls.2");
        g.heads.push_back(HeadBinding{b, c, stride});
    }
};

}  // namespace

ModelGraph build_model(const GraphSpec& spec) {
    if (spec.num_classes != 3) {
        throw ConfigError("GraphSpec: num_classes must be 3");
    }
    if (spec.reg_max < 1) throw ConfigError("GraphSpec: reg_max must be >= 1");

    double d = spec.depth_multiple;
    double w = spec.width_multiple;
    if (d <= 0.0) d = 0.34;
    if (w <= 0.0) w = spec.variant == Variant::N ? 0.25 : 0.50;

    const auto ch = [&](int c) { return make_divisible(std::min(c, 1024) * w); };
    const auto rep = [&](int n) { return std::max(static_cast<int>(std::lround(n * d)), 1); };
    const int C1 = ch(64), C2 = ch(128), C3 = ch(256), C4 = ch(512), C5 = ch(1024);

    Builder b;
    b.g.spec = spec;
    b.act = spec.activation;
    const bool gh = spec.use_ghost;
    const bool c3 = spec.use_c3;

    const int in = b.input(3);
    // backbone: five stride-2 stages, P1..P5
    const int p1 = b.conv(in, C1, 3, 2, "bb.0");
    int x = b.down(p1, C2, "bb.1", gh);
    const int p2 = b.block(x, C2, rep(3), true, c3, gh, "bb.2");
    x = b.down(p2, C3, "bb.3", gh);
    const int p3 = b.block(x, C3, rep(6), true, c3, gh, "bb.4");
    x = b.down(p3, C4, "bb.5", gh);
    const int p4 = b.block(x, C4, rep(6), true, c3, gh, "bb.6");
    x = b.down(p4, C5, "bb.7", gh);
    x = b.block(x, C5, rep(3), true, c3, gh, "bb.8");
    const int p5 = b.sppf(x, C5, "bb.9");

    // PAN-FPN neck: top-down then bottom-up
    int t = b.concat({b.upsample(p5), p4});
    const int n4 = b.block(t, C4, rep(3), false, c3, gh, "neck.td4");
    t = b.concat({b.upsample(n4), p3});
    const int n3 = b.block(t, C3, rep(3), false, c3, gh, "neck.td3");

    const int nc = spec.num_classes;
    const int reg_max = spec.reg_max;

    if (spec.use_p2) {
        t = b.concat({b.upsample(n3), p2});
        const int o2 = b.block(t, C2, rep(3), false, c3, gh, "neck.td2");
        t = b.concat({b.down(o2, C2, "neck.bu2", gh), n3});
        const int o3 = b.block(t, C3, rep(3), false, c3, gh, "neck.bu3");
        t = b.concat({b.down(o3, C3, "neck.bu4", gh), n4});
        const int o4 = b.block(t, C4, rep(3), false, c3, gh, "neck.bu5");
        t = b.concat({b.down(o4, C4, "neck.bu6", gh), p5});
        const int o5 = b.block(t, C5, rep(3), false, c3, gh, "neck.bu7");

        const int c_box = std::max({16, C2 / 4, 4 * reg_max});
        const int c_cls = std::max(C2 + 6, std::min(nc, 100));
        b.detect_scale(o2, 4, reg_max, nc, c_box, c_cls, "head.p2");
        b.detect_scale(o3, 8, reg_max, nc, c_box, c_cls, "head.p3");
        b.detect_scale(o4, 16, reg_max, nc, c_box, c_cls, "head.p4");
        b.detect_scale(o5, 32, reg_max, nc, c_box, c_cls, "head.p5");
    } else {
        t = b.concat({b.down(n3, C3, "neck.bu3", gh), n4});
        const int o4 = b.block(t, C4, rep(3), false, c3, gh, "neck.bu4");
        t = b.concat({b.down(o4, C4, "neck.bu5", gh), p5});
        const int o5 = b.block(t, C5, rep(3), false, c3, gh, "neck.bu6");

        const int c_box = std::max({16, C3 / 4, 4 * reg_max});
        const int c_cls = std::max(C3 + 6, std::min(nc, 100));
        b.detect_scale(n3, 8, reg_max, nc, c_box, c_cls, "head.p3");
        b.detect_scale(o4, 16, reg_max, nc, c_box, c_cls, "head.p4");
        b.detect_scale(o5, 32, reg_max, nc, c_box, c_cls, "head.p5");
    }
    return std::move(b.g);
}

std::vector<std::string> ModelGraph::conv_layer_names() const {
    std::vector<std::string> out;
    for (const Node& n : nodes) {
        if (n.kind == NodeKind::Conv) out.push_back(n.name);
    }
    return out;
}

void validate_weights(const ModelGraph& g, const WeightStore& w) {
    std::size_t used = 0;
    for (const Node& n : g.nodes) {
        if (n.kind != NodeKind::Conv) continue;
        auto it = w.entries.find(n.name);
        if (it == w.entries.end()) {
            throw LookupError("missing weights for layer " + n.name);
        }
        const std::size_t ksz =
            static_cast<std::size_t>(n.c_out) * (n.c_in / n.groups) * n.k * n.k;
        const std::size_t have =
            it->second.quantized ? it->second.qkernel.size() : it->second.kernel.size();
        if (have != ksz) {
            throw LookupError("weight size mismatch for layer " + n.name);
        }
        ++used;
    }
    if (used != w.entries.size()) {
        for (const auto& [name, _] : w.entries) {
            bool found = false;
            for (const Node& n : g.nodes) {
                if (n.kind == NodeKind::Conv && n.name == name) found = true;
            }
            if (!found) throw LookupError("orphan weight entry " + name);
        }
    }
}

WeightStore seeded_weights(const ModelGraph& g, std::uint64_t seed) {
    WeightStore w;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-0.1f, 0.1f);
    for (const Node& n : g.nodes) {
        if (n.kind != NodeKind::Conv) continue;
        ConvWeights cw;
        cw.kernel.resize(static_cast<std::size_t>(n.c_out) * (n.c_in / n.groups) * n.k * n.k);
        cw.bias.resize(static_cast<std::size_t>(n.c_out));
        for (float& v : cw.kernel) v = dist(rng);
        for (float& v : cw.bias) v = dist(rng);
        w.entries.emplace(n.name, std::move(cw));
    }
    return w;
}

namespace {

ConvParams to_conv_params(const Node& n, const ConvWeights& cw) {
    ConvParams p;
    p.kernel = cw.quantized && cw.kernel.empty() ? std::vector<float>() : cw.kernel;
    if (p.kernel.empty()) {
        p.kernel.resize(cw.qkernel.size());
        for (std::size_t i = 0; i < cw.qkernel.size(); ++i) {
            p.kernel[i] = static_cast<float>(std::ldexp(double(cw.qkernel[i]), -cw.f_w));
        }
    }
    p.bias = cw.bias;
    p.c_out = n.c_out;
    p.c_in = n.c_in;
    p.kh = p.kw = n.k;
    p.stride = n.stride;
    p.padding = n.pad;
    p.groups = n.groups;
    return p;
}

Tensor run_conv_quantized(const Node& n, const ConvWeights& cw, const Tensor& x,
                          QuantStats* stats) {
    std::int64_t sat_in = 0, sat_out = 0;
    QTensor xq = quantize(x, QuantParams{cw.f_in}, &sat_in);
    QTensor wq;
    wq.shape = Shape{n.c_out, n.c_in / n.groups, n.k, n.k};
    wq.data = cw.qkernel;
    wq.qp = QuantParams{cw.f_w};
    std::vector<std::int32_t> bias(cw.bias.size());
    for (std::size_t i = 0; i < bias.size(); ++i) {
        bias[i] = static_cast<std::int32_t>(
            round_half_away(std::ldexp(double(cw.bias[i]), cw.f_in + cw.f_w)));
    }
    QConvGeometry geo{n.c_out, n.c_in, n.k, n.k, n.stride, n.pad, n.groups};
    QTensor yq = qconv2d(xq, wq, bias, geo, QuantParams{cw.f_out}, &sat_out);
    if (stats) {
        stats->input_saturated += sat_in;
        stats->output_saturated += sat_out;
        stats->per_layer_saturated[n.name] += sat_in + sat_out;
    }
    return dequantize(yq);
}

}  // namespace

HeadOutput forward_chip(const ModelGraph& g, const WeightStore& w, const Tensor& chip,
                        ExecMode mode, QuantStats* stats, const ConvObserver& observer) {
    const Shape& s = chip.shape();
    if (s.n != 1 || s.c != 3) {
        throw DimensionError("forward_chip: expected (1,3,H,W) input");
    }
    if (s.h % 32 != 0 || s.w % 32 != 0) {
        throw DimensionError("forward_chip: spatial dims must be multiples of 32");
    }
    validate_weights(g, w);

    const bool all_boundaries = g.spec.quant_boundaries.empty();
    const auto is_boundary = [&](const std::string& name) {
        if (all_boundaries) return true;
        return std::find(g.spec.quant_boundaries.begin(), g.spec.quant_boundaries.end(),
                         name) != g.spec.quant_boundaries.end();
    };

    // last use per node, to free intermediates eagerly
    std::vector<int> last_use(g.nodes.size(), -1);
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
        for (int in : g.nodes[i].inputs) last_use[in] = i;
    }
    for (const HeadBinding& h : g.heads) {
        last_use[h.box_node] = static_cast<int>(g.nodes.size());
        last_use[h.cls_node] = static_cast<int>(g.nodes.size());
    }

    std::vector<std::optional<Tensor>> vals(g.nodes.size());
    for (int i = 0; i < static_cast<int>(g.nodes.size()); ++i) {
        const Node& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::Input: {
                Tensor scaled(s);
                for (std::size_t j = 0; j < chip.data().size(); ++j) {
                    scaled.data()[j] = chip.data()[j] / 255.f;
                }
                vals[i] = std::move(scaled);
                break;
            }
            case NodeKind::Conv: {
                const Tensor& x = *vals[n.inputs[0]];
                const ConvWeights& cw = w.entries.at(n.name);
                Tensor y;
                if (mode == ExecMode::Quantized && cw.quantized && is_boundary(n.name)) {
                    y = run_conv_quantized(n, cw, x, stats);
                } else {
                    y = conv2d(x, to_conv_params(n, cw));
                }
                if (observer) observer(n.name, x, y);
                if (n.has_act) y = activate(y, g.spec.activation);
                vals[i] = std::move(y);
                break;
            }
            case NodeKind::MaxPool:
                vals[i] = maxpool2d(*vals[n.inputs[0]], n.pool_k, n.pool_stride, n.pool_pad);
                break;
            case NodeKind::Upsample2x:
                vals[i] = upsample_nearest2x(*vals[n.inputs[0]]);
                break;
            case NodeKind::Concat: {
                std::vector<const Tensor*> xs;
                for (int in : n.inputs) xs.push_back(&*vals[in]);
                vals[i] = concat_channels(xs);
                break;
            }
            case NodeKind::Add: {
                const Tensor& a = *vals[n.inputs[0]];
                const Tensor& bt = *vals[n.inputs[1]];
                if (a.shape() != bt.shape()) {
                    throw DimensionError("residual add: shape mismatch at " + n.name);
                }
                Tensor y(a.shape());
                for (std::size_t j = 0; j < y.data().size(); ++j) {
                    y.data()[j] = a.data()[j] + bt.data()[j];
                }
                vals[i] = std::move(y);
                break;
            }
            case NodeKind::Slice: {
                const Tensor& x = *vals[n.inputs[0]];
                const Shape& xs = x.shape();
                Tensor y(Shape{xs.n, n.c_out, xs.h, xs.w});
                const std::size_t plane = static_cast<std::size_t>(xs.h) * xs.w;
                for (int nb = 0; nb < xs.n; ++nb) {
                    const float* src = x.data().data() +
                                       (static_cast<std::size_t>(nb) * xs.c + n.slice_begin) * plane;
                    float* dst = y.data().data() +
                                 static_cast<std::size_t>(nb) * n.c_out * plane;
                    std::copy(src, src + static_cast<std::size_t>(n.c_out) * plane, dst);
                }
                vals[i] = std::move(y);
                break;
            }
        }
        // free inputs no longer needed
        for (int in : n.inputs) {
            if (last_use[in] == i) vals[in].reset();
        }
    }

    HeadOutput out;
    for (const HeadBinding& h : g.heads) {
        HeadOutput::Scale sc;
        sc.box = *vals[h.box_node];
        sc.cls = *vals[h.cls_node];
        sc.stride = h.stride;
        out.scales.push_back(std::move(sc));
    }
    return out;
}

namespace {

struct MseSweep {
    double se[16] = {};
    std::int64_t count = 0;

    void feed(const Tensor& t) {
        for (float v : t.data()) {
            for (int f = 0; f < 16; ++f) {
                const std::int64_t q = std::clamp<std::int64_t>(
                    round_half_away(std::ldexp(double(v), f)), -128, 127);
                const double d = std::ldexp(double(q), -f) - v;
                se[f] += d * d;
            }
        }
        count += static_cast<std::int64_t>(t.data().size());
    }

    int best() const {
        int best_f = 15;
        double best_mse = -1.0;
        for (int f = 0; f < 16; ++f) {
            const double mse = count > 0 ? se[f] / double(count) : 0.0;
            if (best_mse < 0.0 || mse < best_mse || (mse == best_mse && f > best_f)) {
                best_mse = mse;
                best_f = f;
            }
        }
        return best_f;
    }
};

}  // namespace

WeightStore calibrate_store(const ModelGraph& g, const WeightStore& w,
                            const std::vector<const Tensor*>& chips) {
    if (chips.empty()) throw UsageError("calibrate_store: no calibration chips");
    for (const auto& [name, cw] : w.entries) {
        if (cw.quantized) throw UsageError("calibrate_store: store already quantized");
    }

    std::map<std::string, MseSweep> in_stats, out_stats;
    for (const Tensor* chip : chips) {
        forward_chip(g, w, *chip, ExecMode::Float, nullptr,
                     [&](const std::string& name, const Tensor& x, const Tensor& y) {
                         in_stats[name].feed(x);
                         out_stats[name].feed(y);
                     });
    }

    WeightStore out;
    for (const auto& [name, cw] : w.entries) {
        ConvWeights q = cw;
        const Tensor kt(Shape{1, 1, 1, static_cast<int>(cw.kernel.size())}, cw.kernel);
        q.f_w = calibrate_fraction_bits({&kt}).fraction_bits;
        q.f_in = in_stats.at(name).best();
        q.f_out = std::min(out_stats.at(name).best(), q.f_in + q.f_w);
        QTensor qk = quantize(kt, QuantParams{q.f_w});
        q.qkernel = std::move(qk.data);
        q.kernel.clear();
        q.quantized = true;
        out.entries.emplace(name, std::move(q));
    }
    return out;
}

std::pair<std::int64_t, std::int64_t> count_params_flops(const ModelGraph& g, int img) {
    std::vector<int> sp(g.nodes.size(), 0);
    std::int64_t params = 0, flops = 0;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::Input:
                sp[i] = img;
                break;
            case NodeKind::Conv: {
                const int in_sp = sp[n.inputs[0]];
                const int out_sp = (in_sp + 2 * n.pad - n.k) / n.stride + 1;
                sp[i] = out_sp;
                const std::int64_t kparams =
                    static_cast<std::int64_t>(n.c_out) * (n.c_in / n.groups) * n.k * n.k;
                params += kparams;
                if (n.has_bn) params += 2LL * n.c_out;
                if (n.has_bias) params += n.c_out;
                flops += 2LL * kparams * out_sp * out_sp;
                break;
            }
            case NodeKind::MaxPool:
                sp[i] = (sp[n.inputs[0]] + 2 * n.pool_pad - n.pool_k) / n.pool_stride + 1;
                break;
            case NodeKind::Upsample2x:
                sp[i] = sp[n.inputs[0]] * 2;
                break;
            case NodeKind::Concat:
            case NodeKind::Add:
            case NodeKind::Slice:
                sp[i] = sp[n.inputs[0]];
                break;
        }
    }
    return {params, flops};
}

Tensor ghost_conv(const Tensor& x, const ConvParams& primary, const ConvParams& cheap) {
    if (cheap.groups != primary.c_out || cheap.c_in != primary.c_out ||
        cheap.c_out != primary.c_out) {
        throw ConfigError("ghost_conv: cheap stage must be depthwise over the primary output");
    }
    Tensor p = conv2d(x, primary);
    Tensor q = depthwise_conv2d(p, cheap);
    return concat_channels({&p, &q});
}

std::string variant_name(const GraphSpec& spec) {
    std::string s = spec.variant == Variant::N ? "YOLOv8n" : "YOLOv8s";
    if (spec.use_ghost) s += "-Ghost";
    if (spec.use_p2) s += "-P2";
    return s;
}

}  // namespace darkship
