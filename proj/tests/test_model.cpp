#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "darkship/model.hpp"
#include "helpers.hpp"

using namespace darkship;

namespace {

GraphSpec tiny_spec(bool p2 = false, bool ghost = false, bool c3 = false) {
    GraphSpec s;
    s.width_multiple = 0.05;
    s.use_p2 = p2;
    s.use_ghost = ghost;
    s.use_c3 = c3;
    return s;
}

// Minimal hand-built graph: one 3x3 conv with raw bias, bound to both head slots.
ModelGraph single_conv_graph(int c_out = 8, bool with_act = false) {
    ModelGraph g;
    Node in;
    in.name = "input";
    in.kind = NodeKind::Input;
    in.c_out = 3;
    g.nodes.push_back(in);
    Node c;
    c.name = "conv0";
    c.kind = NodeKind::Conv;
    c.inputs = {0};
    c.c_in = 3;
    c.c_out = c_out;
    c.k = 3;
    c.stride = 1;
    c.pad = 1;
    c.has_bias = true;
    c.has_act = with_act;
    g.nodes.push_back(c);
    g.heads.push_back(HeadBinding{1, 1, 8});
    return g;
}

void check_row(const GraphSpec& spec, double params_m, double flops_g) {
    const auto [p, f] = count_params_flops(build_model(spec));
    CHECK(std::abs(p / 1e6 - params_m) <= 0.05 * params_m);
    CHECK(std::abs(f / 1e9 - flops_g) <= 0.10 * flops_g);
}

}  // namespace

TEST_CASE("published variant sizes") {
    GraphSpec n;
    check_row(n, 3.2, 8.7);

    GraphSpec ng = n;
    ng.use_ghost = true;
    ng.use_c3 = true;
    check_row(ng, 1.7, 5.1);

    GraphSpec ngp2 = ng;
    ngp2.use_p2 = true;
    check_row(ngp2, 1.6, 8.8);

    GraphSpec sgp2 = ngp2;
    sgp2.variant = Variant::S;
    check_row(sgp2, 5.3, 22.3);
}

TEST_CASE("structural counts on a hand-built conv") {
    const ModelGraph g = single_conv_graph();
    const auto [p, f] = count_params_flops(g, 8);
    CHECK(p == 8 * 3 * 9 + 8);          // kernel + raw bias
    CHECK(f == 2LL * 8 * 3 * 9 * 8 * 8);  // 2*MACs at 8x8, stride 1, pad 1
}

TEST_CASE("spec validation") {
    GraphSpec s;
    s.num_classes = 5;
    CHECK_THROWS_AS(build_model(s), ConfigError);
    GraphSpec r;
    r.reg_max = 0;
    CHECK_THROWS_AS(build_model(r), ConfigError);
}

TEST_CASE("head geometry at strides 8/16/32 plus the P2 scale") {
    const ModelGraph g = build_model(tiny_spec());
    const WeightStore w = seeded_weights(g, 1);
    Tensor chip(Shape{1, 3, 320, 320});
    const HeadOutput out = forward_chip(g, w, chip, ExecMode::Float);
    REQUIRE(out.scales.size() == 3);
    const int want[3] = {40, 20, 10};
    for (int i = 0; i < 3; ++i) {
        CHECK(out.scales[i].stride == 8 << i);
        CHECK(out.scales[i].box.shape().h == want[i]);
        CHECK(out.scales[i].box.shape().w == want[i]);
        CHECK(out.scales[i].box.shape().c == 4 * 16);
        CHECK(out.scales[i].cls.shape().c == 3);
    }

    const ModelGraph gp2 = build_model(tiny_spec(true));
    const HeadOutput o2 = forward_chip(gp2, seeded_weights(gp2, 1), chip, ExecMode::Float);
    REQUIRE(o2.scales.size() == 4);
    CHECK(o2.scales[0].stride == 4);
    CHECK(o2.scales[0].box.shape().h == 80);
}

TEST_CASE("ghost substitution keeps output geometry") {
    Tensor chip(Shape{1, 3, 320, 320});
    const ModelGraph base = build_model(tiny_spec());
    const ModelGraph gh = build_model(tiny_spec(false, true, true));
    const HeadOutput a = forward_chip(base, seeded_weights(base, 2), chip, ExecMode::Float);
    const HeadOutput b = forward_chip(gh, seeded_weights(gh, 2), chip, ExecMode::Float);
    REQUIRE(a.scales.size() == b.scales.size());
    for (std::size_t i = 0; i < a.scales.size(); ++i) {
        CHECK(a.scales[i].box.shape() == b.scales[i].box.shape());
        CHECK(a.scales[i].cls.shape() == b.scales[i].cls.shape());
    }
    const auto [pb, fb] = count_params_flops(base);
    const auto [pg, fg] = count_params_flops(gh);
    CHECK(pg < pb);
    (void)fb;
    (void)fg;
}

TEST_CASE("zero kernels reduce head outputs to the final bias") {
    const ModelGraph g = build_model(tiny_spec());
    WeightStore w = seeded_weights(g, 3);
    for (auto& [name, cw] : w.entries) std::fill(cw.kernel.begin(), cw.kernel.end(), 0.f);
    std::mt19937 rng(4);
    const Tensor chip = oracle::random_tensor(rng, Shape{1, 3, 64, 64}, 0.f, 255.f);
    const HeadOutput out = forward_chip(g, w, chip, ExecMode::Float);
    const std::vector<float>& bb = w.entries.at("head.p3.box.2").bias;
    const std::vector<float>& cb = w.entries.at("head.p3.cls.2").bias;
    const Tensor& box = out.scales[0].box;
    const Tensor& cls = out.scales[0].cls;
    for (int c = 0; c < box.shape().c; ++c) {
        CHECK(box.at(0, c, 0, 0) == bb[c]);
        CHECK(box.at(0, c, box.shape().h - 1, box.shape().w - 1) == bb[c]);
    }
    for (int c = 0; c < cls.shape().c; ++c) CHECK(cls.at(0, c, 3, 5) == cb[c]);
}

TEST_CASE("forward is deterministic") {
    const ModelGraph g = build_model(tiny_spec());
    const WeightStore w = seeded_weights(g, 5);
    std::mt19937 rng(6);
    const Tensor chip = oracle::random_tensor(rng, Shape{1, 3, 64, 64}, 0.f, 255.f);
    const HeadOutput a = forward_chip(g, w, chip, ExecMode::Float);
    const HeadOutput b = forward_chip(g, w, chip, ExecMode::Float);
    for (std::size_t i = 0; i < a.scales.size(); ++i) {
        CHECK(a.scales[i].box.data() == b.scales[i].box.data());
        CHECK(a.scales[i].cls.data() == b.scales[i].cls.data());
    }
}

TEST_CASE("activation choice changes outputs but not counts") {
    GraphSpec silu = tiny_spec();
    GraphSpec hsw = tiny_spec();
    hsw.activation = Activation::HardSwish;
    const ModelGraph gs = build_model(silu);
    const ModelGraph gh = build_model(hsw);
    CHECK(count_params_flops(gs) == count_params_flops(gh));
    std::mt19937 rng(7);
    const Tensor chip = oracle::random_tensor(rng, Shape{1, 3, 64, 64}, 0.f, 255.f);
    const WeightStore w = seeded_weights(gs, 8);
    const HeadOutput a = forward_chip(gs, w, chip, ExecMode::Float);
    const HeadOutput b = forward_chip(gh, w, chip, ExecMode::Float);
    CHECK(a.scales[0].box.data() != b.scales[0].box.data());
}

TEST_CASE("seeded backbone weights agree across neck variants") {
    const ModelGraph g1 = build_model(tiny_spec());
    const ModelGraph g2 = build_model(tiny_spec(true));
    const WeightStore w1 = seeded_weights(g1, 42);
    const WeightStore w2 = seeded_weights(g2, 42);
    for (const auto& [name, cw] : w1.entries) {
        if (name.rfind("bb.", 0) != 0) continue;
        REQUIRE(w2.entries.count(name) == 1);
        CHECK(w2.entries.at(name).kernel == cw.kernel);
        CHECK(w2.entries.at(name).bias == cw.bias);
    }
}

TEST_CASE("validate_weights catches missing, orphan, and mis-sized entries") {
    const ModelGraph g = build_model(tiny_spec());
    WeightStore w = seeded_weights(g, 9);
    validate_weights(g, w);

    WeightStore missing = w;
    missing.entries.erase("bb.0");
    CHECK_THROWS_AS(validate_weights(g, missing), LookupError);

    WeightStore orphan = w;
    orphan.entries["nonexistent.layer"] = w.entries.at("bb.0");
    CHECK_THROWS_AS(validate_weights(g, orphan), LookupError);

    WeightStore bad = w;
    bad.entries.at("bb.0").kernel.pop_back();
    CHECK_THROWS_AS(validate_weights(g, bad), LookupError);

    Tensor chip(Shape{1, 3, 64, 64});
    CHECK_THROWS_AS(forward_chip(g, missing, chip, ExecMode::Float), LookupError);
    CHECK_THROWS_AS(forward_chip(g, w, Tensor(Shape{1, 3, 60, 64}), ExecMode::Float),
                    DimensionError);
    CHECK_THROWS_AS(forward_chip(g, w, Tensor(Shape{1, 1, 64, 64}), ExecMode::Float),
                    DimensionError);
}

TEST_CASE("ghost_conv doubles channels and honors an identity cheap stage") {
    std::mt19937 rng(10);
    const Tensor x = oracle::random_tensor(rng, Shape{1, 3, 9, 9});
    ConvParams primary;
    primary.c_in = 3;
    primary.c_out = 4;
    primary.kh = primary.kw = 3;
    primary.padding = 1;
    primary.kernel.resize(4 * 3 * 9);
    primary.bias.resize(4);
    std::uniform_real_distribution<float> d(-0.5f, 0.5f);
    for (float& v : primary.kernel) v = d(rng);
    for (float& v : primary.bias) v = d(rng);

    ConvParams cheap;  // 5x5 depthwise delta kernel
    cheap.c_in = cheap.c_out = cheap.groups = 4;
    cheap.kh = cheap.kw = 5;
    cheap.padding = 2;
    cheap.kernel.assign(4 * 25, 0.f);
    for (int c = 0; c < 4; ++c) cheap.kernel[c * 25 + 12] = 1.f;

    const Tensor y = ghost_conv(x, primary, cheap);
    CHECK(y.shape().c == 8);
    const Tensor p = conv2d(x, primary);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j) {
                CHECK(y.at(0, c, i, j) == p.at(0, c, i, j));
                CHECK(y.at(0, c + 4, i, j) == p.at(0, c, i, j));
            }

    ConvParams wrong = cheap;
    wrong.groups = 2;
    CHECK_THROWS_AS(ghost_conv(x, primary, wrong), ConfigError);
}

TEST_CASE("ghost downsample saves at least 40 percent of stage kernels") {
    // plain 3x3 stride-2 conv 16->32 vs ghost equivalent
    const std::int64_t plain = 32LL * 16 * 9;
    const std::int64_t ghost = 16LL * 16 * 9 + 16LL * 25;
    CHECK(double(ghost) <= 0.6 * double(plain));
}

TEST_CASE("quantized conv stays inside the propagated error bound") {
    std::mt19937 rng(11);
    ModelGraph g = single_conv_graph(8, false);
    const Node& n = g.nodes[1];

    ConvWeights cw;
    cw.quantized = true;
    cw.f_w = 8;
    cw.f_in = 8;
    cw.f_out = 4;
    std::uniform_int_distribution<int> qd(-100, 100);
    cw.qkernel.resize(std::size_t(n.c_out) * n.c_in * 9);
    cw.kernel.resize(cw.qkernel.size());
    for (std::size_t i = 0; i < cw.qkernel.size(); ++i) {
        cw.qkernel[i] = static_cast<std::int8_t>(qd(rng));
        cw.kernel[i] = static_cast<float>(std::ldexp(double(cw.qkernel[i]), -cw.f_w));
    }
    std::uniform_real_distribution<float> bd(-0.05f, 0.05f);
    cw.bias.resize(n.c_out);
    for (float& v : cw.bias) v = bd(rng);
    WeightStore w;
    w.entries.emplace("conv0", cw);

    // inputs capped so neither quantization stage can saturate
    const Tensor chip = oracle::random_tensor(rng, Shape{1, 3, 32, 32}, 0.f, 120.f);
    QuantStats stats;
    const HeadOutput qout = forward_chip(g, w, chip, ExecMode::Quantized, &stats);
    const HeadOutput fout = forward_chip(g, w, chip, ExecMode::Float);
    CHECK(stats.input_saturated == 0);
    CHECK(stats.output_saturated == 0);

    double l1 = 0.0;
    for (int oc = 0; oc < n.c_out; ++oc) {
        double row = 0.0;
        for (int i = 0; i < n.c_in * 9; ++i) {
            row += std::abs(double(cw.qkernel[std::size_t(oc) * n.c_in * 9 + i])) *
                   std::ldexp(1.0, -cw.f_w);
        }
        l1 = std::max(l1, row);
    }
    // input rounding + bias rounding + requantize rounding
    const double bound = l1 * std::ldexp(1.0, -(cw.f_in + 1)) +
                         std::ldexp(1.0, -(cw.f_in + cw.f_w + 1)) +
                         std::ldexp(1.0, -(cw.f_out + 1)) + 1e-6;
    const Tensor& a = qout.scales[0].box;
    const Tensor& b = fout.scales[0].box;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        worst = std::max(worst, std::abs(double(a.data()[i]) - b.data()[i]));
    }
    CHECK(worst <= bound);
}

TEST_CASE("calibrate_store produces a runnable int8 store") {
    const ModelGraph g = build_model(tiny_spec());
    const WeightStore w = seeded_weights(g, 12);
    std::mt19937 rng(13);
    const Tensor chip = oracle::random_tensor(rng, Shape{1, 3, 64, 64}, 0.f, 255.f);
    const WeightStore q = calibrate_store(g, w, {&chip});
    for (const auto& [name, cw] : q.entries) {
        CHECK(cw.quantized);
        CHECK(cw.kernel.empty());
        CHECK(!cw.qkernel.empty());
        CHECK(cw.f_w >= 0);
        CHECK(cw.f_w <= 15);
        CHECK(cw.f_out <= cw.f_in + cw.f_w);
    }
    validate_weights(g, q);
    const HeadOutput out = forward_chip(g, q, chip, ExecMode::Quantized);
    CHECK(out.scales.size() == 3);
    CHECK_THROWS_AS(calibrate_store(g, q, {&chip}), UsageError);
    CHECK_THROWS_AS(calibrate_store(g, w, {}), UsageError);
}

TEST_CASE("variant names") {
    CHECK(variant_name(GraphSpec{}) == "YOLOv8n");
    CHECK(variant_name(tiny_spec(true, true)) == "YOLOv8n-Ghost-P2");
    GraphSpec s;
    s.variant = Variant::S;
    CHECK(variant_name(s) == "YOLOv8s");
}
