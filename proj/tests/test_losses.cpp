#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "darkship/losses.hpp"

using namespace darkship;

namespace {

constexpr double kH = 1e-5;

Box shifted(const Box& b, int coord, double d) {
    Box out = b;
    switch (coord) {
        case 0: out.x1 += d; break;
        case 1: out.y1 += d; break;
        case 2: out.x2 += d; break;
        case 3: out.y2 += d; break;
    }
    return out;
}

// Random overlapping box pair with every coordinate pair well separated so the
// finite-difference probe never crosses a subgradient kink.
std::pair<Box, Box> random_pair(std::mt19937& rng) {
    std::uniform_real_distribution<double> d(0.0, 10.0);
    for (;;) {
        Box p{d(rng), d(rng), 0, 0};
        Box g{d(rng), d(rng), 0, 0};
        p.x2 = p.x1 + 1.0 + d(rng);
        p.y2 = p.y1 + 1.0 + d(rng);
        g.x2 = g.x1 + 1.0 + d(rng);
        g.y2 = g.y1 + 1.0 + d(rng);
        const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
        const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
        if (iw < 0.1 || ih < 0.1) continue;
        if (std::abs(p.x1 - g.x1) < 0.05 || std::abs(p.x2 - g.x2) < 0.05 ||
            std::abs(p.y1 - g.y1) < 0.05 || std::abs(p.y2 - g.y2) < 0.05) {
            continue;
        }
        return {p, g};
    }
}

template <typename F>
void check_grad(F loss_fn, const Box& p, const Box& g) {
    const auto [loss, grad] = loss_fn(p, g);
    for (int i = 0; i < 4; ++i) {
        const double up = loss_fn(shifted(p, i, kH), g).first;
        const double dn = loss_fn(shifted(p, i, -kH), g).first;
        const double fd = (up - dn) / (2.0 * kH);
        CHECK(std::abs(grad[i] - fd) <= std::max(1e-4 * std::abs(fd), 2e-5));
    }
    (void)loss;
}

}  // namespace

TEST_CASE("iou closed values, symmetry, translation invariance") {
    const Box a{0, 0, 2, 2}, b{1, 0, 3, 2};
    CHECK(iou(a, b) == doctest::Approx(2.0 / 6.0));
    CHECK(iou(a, a) == doctest::Approx(1.0));
    CHECK(iou(a, Box{5, 5, 6, 6}) == 0.0);
    std::mt19937 rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto [p, g] = random_pair(rng);
        CHECK(iou(p, g) == doctest::Approx(iou(g, p)));
        const Box p2{p.x1 + 7, p.y1 - 3, p.x2 + 7, p.y2 - 3};
        const Box g2{g.x1 + 7, g.y1 - 3, g.x2 + 7, g.y2 - 3};
        CHECK(iou(p, g) == doctest::Approx(iou(p2, g2)));
    }
    CHECK_THROWS_AS(iou(Box{1, 0, 1, 2}, a), DomainError);
}

TEST_CASE("ciou vanishes with zero gradient at pred == gt") {
    const Box g{2, 3, 7, 11};
    const auto [loss, grad] = ciou_loss(g, g);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-9));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(grad[i]) < 1e-9);
}

TEST_CASE("ciou reduces to 1 - IoU for concentric same-aspect boxes") {
    const Box g{-2, -1, 2, 1};
    const Box p{-4, -2, 4, 2};  // same center, same 2:1 aspect
    const auto [loss, grad] = ciou_loss(p, g);
    CHECK(loss == doctest::Approx(1.0 - iou(p, g)).epsilon(1e-8));
    (void)grad;
}

TEST_CASE("ciou gradient matches finite differences") {
    std::mt19937 rng(7);
    for (int i = 0; i < 100; ++i) {
        const auto [p, g] = random_pair(rng);
        check_grad([](const Box& a, const Box& b) { return ciou_loss(a, b); }, p, g);
    }
}

TEST_CASE("piou2 attains its zero minimum at pred == gt") {
    const Box g{1, 1, 5, 4};
    const auto [loss, grad] = piou2_loss(g, g);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(grad[i]) < 1e-9);
    std::mt19937 rng(11);
    for (int i = 0; i < 50; ++i) {
        const auto [p, g2] = random_pair(rng);
        CHECK(piou2_loss(p, g2).first >= 0.0);
    }
}

TEST_CASE("piou2 penalty is invariant under joint scaling") {
    const Box p{1, 2, 4, 7}, g{2, 1, 5, 6};
    const double base = piou2_loss(p, g).first;
    for (double s : {2.0, 5.0, 0.5}) {
        const Box ps{p.x1 * s, p.y1 * s, p.x2 * s, p.y2 * s};
        const Box gs{g.x1 * s, g.y1 * s, g.x2 * s, g.y2 * s};
        CHECK(piou2_loss(ps, gs).first == doctest::Approx(base).epsilon(1e-9));
    }
    CHECK_THROWS_AS(piou2_loss(p, g, 0.0), DomainError);
}

TEST_CASE("piou2 gradient matches finite differences") {
    std::mt19937 rng(13);
    for (int i = 0; i < 100; ++i) {
        const auto [p, g] = random_pair(rng);
        check_grad([](const Box& a, const Box& b) { return piou2_loss(a, b); }, p, g);
    }
}

TEST_CASE("wiou is zero at gt and monotone under translation") {
    const Box g{0, 0, 2, 2};
    CHECK(wiou_loss(g, g) == doctest::Approx(0.0).epsilon(1e-9));
    double prev = -1.0;
    for (double s = 0.0; s <= 3.0; s += 0.25) {
        const Box p{s, 0, s + 2, 2};
        const double l = wiou_loss(p, g);
        CHECK(l >= prev);
        prev = l;
    }
    // distance factor strictly amplifies 1 - IoU for off-center boxes
    const Box off{1, 0, 3, 2};
    CHECK(wiou_loss(off, g) > 1.0 - iou(off, g));
}

TEST_CASE("mpdiou closed-form corner term") {
    const Box g{0, 0, 2, 2};
    CHECK(mpdiou_loss(g, g) == doctest::Approx(0.0));
    // disjoint translate by dx: IoU 0, both corners displaced by dx
    const double dx = 5.0;
    const Box p{dx, 0, 2 + dx, 2};
    const double norm_sq = 800.0 * 800.0 * 2.0;
    CHECK(mpdiou_loss(p, g) == doctest::Approx(1.0 + 2.0 * dx * dx / norm_sq));
    CHECK(mpdiou_loss(p, g, 100.0) == doctest::Approx(1.0 + 2.0 * dx * dx / 100.0));
    double prev = -1.0;
    for (double s = 0.0; s <= 3.0; s += 0.25) {
        const double l = mpdiou_loss(Box{s, 0, s + 2, 2}, g);
        CHECK(l >= prev);
        prev = l;
    }
}

TEST_CASE("dfl one-hot limit and uniform-logit values") {
    std::vector<double> logits(16, 0.0);
    logits[5] = 50.0;
    const auto [l5, g5] = dfl_loss(logits, 5.0);
    CHECK(l5 == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::abs(g5[5]) < 1e-6);

    const std::vector<double> uniform(16, 1.0);
    const auto [lu, gu] = dfl_loss(uniform, 7.5);
    CHECK(lu == doctest::Approx(std::log(16.0)));
    double gsum = 0.0;
    for (double v : gu) gsum += v;
    CHECK(gsum == doctest::Approx(0.0).epsilon(1e-12));
    // softmax 1/16 everywhere, bins 7 and 8 each pull 0.5
    CHECK(gu[7] == doctest::Approx(1.0 / 16.0 - 0.5));
    CHECK(gu[8] == doctest::Approx(1.0 / 16.0 - 0.5));
    CHECK(gu[0] == doctest::Approx(1.0 / 16.0));
}

TEST_CASE("dfl gradient matches finite differences") {
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (int rep = 0; rep < 40; ++rep) {
        std::vector<double> logits(16);
        for (double& v : logits) v = d(rng);
        const double target = std::uniform_real_distribution<double>(0.0, 15.0)(rng);
        const auto [loss, grad] = dfl_loss(logits, target);
        for (std::size_t i = 0; i < logits.size(); ++i) {
            std::vector<double> up = logits, dn = logits;
            up[i] += kH;
            dn[i] -= kH;
            const double fd = (dfl_loss(up, target).first - dfl_loss(dn, target).first) /
                              (2.0 * kH);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
        }
        (void)loss;
    }
}

TEST_CASE("dfl rejects out-of-range targets") {
    const std::vector<double> logits(16, 0.0);
    CHECK_THROWS_AS(dfl_loss(logits, -0.1), DomainError);
    CHECK_THROWS_AS(dfl_loss(logits, 15.1), DomainError);
    CHECK_THROWS_AS(dfl_loss({}, 0.0), DomainError);
    CHECK_NOTHROW(dfl_loss(logits, 15.0));
    CHECK_NOTHROW(dfl_loss(logits, 0.0));
}
