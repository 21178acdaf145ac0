#include <doctest.h>

#include <cmath>

#include "corpus.hpp"
#include "oracles.hpp"
#include "residprop/flow.hpp"
#include "residprop/motion.hpp"

using namespace residprop;
using namespace residprop::flow;

TEST_CASE("estimate_flow: identical planes give zero flow") {
    const Plane a = corpus::textured_plane(10, 9, 31);
    const FlowField f = estimate_flow(a, a);
    for (double v : f.u.values) CHECK(v == 0.0);
    for (double v : f.v.values) CHECK(v == 0.0);
}

TEST_CASE("estimate_flow: constant planes tie-break to zero") {
    Plane a(8, 8, 1.0);
    const FlowField f = estimate_flow(a, a);
    for (double v : f.u.values) CHECK(v == 0.0);
    for (double v : f.v.values) CHECK(v == 0.0);
}

TEST_CASE("estimate_flow: exact shift recovered on the interior, matching the oracle") {
    const int W = 14, H = 12, radius = 3, patch = 5;
    const Plane a = corpus::textured_plane(W, H, 67);
    Plane b(W, H);
    b.values = oracles::shift2d(a.values, W, H, 2, 0);

    const FlowField f = estimate_flow(a, b, radius, patch);
    const int margin = radius + patch;  // untouched by any border effect
    for (int y = margin; y < H - margin; ++y) {
        for (int x = margin; x < W - margin; ++x) {
            CHECK(f.u.at(x, y) == 2.0);
            CHECK(f.v.at(x, y) == 0.0);
        }
    }
    // full-field agreement with the independent SSD oracle
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const auto mv = oracles::match_pixel(a, b, x, y, radius, patch);
            CHECK(f.u.at(x, y) == mv.dx);
            CHECK(f.v.at(x, y) == mv.dy);
        }
    }
    CHECK_THROWS_AS(estimate_flow(a, Plane(3, 3)), ShapeMismatch);
}

TEST_CASE("flow_histogram: zero flow yields a center impulse at all sizes") {
    FlowField f(6, 6);
    for (int n : {3, 5, 7}) {
        const Kernel k = flow_to_kernel(f, n, 0.0);
        const int h = (n - 1) / 2;
        for (int dy = -h; dy <= h; ++dy) {
            for (int dx = -h; dx <= h; ++dx) {
                CHECK(k.at(dx, dy) == ((dx == 0 && dy == 0) ? 1.0 : 0.0));
            }
        }
    }
}

TEST_CASE("flow_histogram: uniform unit flow concentrates at (+1, 0)") {
    FlowField f(5, 4);
    for (double& v : f.u.values) v = 1.0;
    const Kernel hist = flow_histogram(f, 3);
    CHECK(hist.at(1, 0) == doctest::Approx(20.0));
    double rest = 0.0;
    for (double w : hist.weights) rest += w;
    CHECK(rest == doctest::Approx(20.0));  // nothing lands anywhere else

    // matches the independent oracle
    const auto expect = oracles::flow_histogram(f.u.values, f.v.values, 3);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(hist.weights[i] == expect[i]);
}

TEST_CASE("flow_histogram: magnitude-3 flow hits the outer ring and clamps") {
    FlowField f(4, 4);
    for (double& v : f.u.values) v = 3.0;
    const Kernel k7 = flow_histogram(f, 7);
    CHECK(k7.at(3, 0) == doctest::Approx(48.0));
    const Kernel k5 = flow_histogram(f, 5);
    CHECK(k5.at(2, 0) == doctest::Approx(48.0));
    const Kernel k3 = flow_histogram(f, 3);
    CHECK(k3.at(1, 0) == doctest::Approx(48.0));
}

TEST_CASE("flow_histogram: random fields match the oracle") {
    SplitMix64 rng(88);
    for (int inst = 0; inst < 30; ++inst) {
        FlowField f(6, 5);
        for (std::size_t i = 0; i < f.u.values.size(); ++i) {
            f.u.values[i] = 8.0 * (rng.uniform() - 0.5);
            f.v.values[i] = 8.0 * (rng.uniform() - 0.5);
        }
        for (int n : {3, 5, 7}) {
            const Kernel hist = flow_histogram(f, n);
            const auto expect = oracles::flow_histogram(f.u.values, f.v.values, n);
            for (std::size_t i = 0; i < expect.size(); ++i) {
                CHECK(hist.weights[i] == doctest::Approx(expect[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("flow_histogram: rotating the flow by 90 degrees permutes the cells exactly") {
    SplitMix64 rng(99);
    FlowField f(7, 6);
    for (std::size_t i = 0; i < f.u.values.size(); ++i) {
        f.u.values[i] = 7.0 * (rng.uniform() - 0.5);
        f.v.values[i] = 7.0 * (rng.uniform() - 0.5);
    }
    FlowField rotated(7, 6);
    for (std::size_t i = 0; i < f.u.values.size(); ++i) {
        rotated.u.values[i] = -f.v.values[i];  // counterclockwise quarter turn
        rotated.v.values[i] = f.u.values[i];
    }
    for (int n : {3, 5, 7}) {
        const Kernel base = flow_histogram(f, n);
        const Kernel rot = flow_histogram(rotated, n);
        const int h = (n - 1) / 2;
        for (int dy = -h; dy <= h; ++dy) {
            for (int dx = -h; dx <= h; ++dx) {
                // cell (dx, dy) rotates to (-dy, dx)
                CHECK(rot.at(-dy, dx) == base.at(dx, dy));
            }
        }
    }
}

TEST_CASE("flow_to_kernel: nonnegative, unit norm, smoothing keeps the peak") {
    SplitMix64 rng(111);
    FlowField f(8, 8);
    for (std::size_t i = 0; i < f.u.values.size(); ++i) {
        f.u.values[i] = 1.0 + 0.2 * (rng.uniform() - 0.5);
        f.v.values[i] = 0.1 * (rng.uniform() - 0.5);
    }
    for (int n : {3, 5, 7}) {
        const Kernel k = flow_to_kernel(f, n, 0.5);
        for (double w : k.weights) CHECK(w >= 0.0);
        CHECK(std::fabs(std::sqrt(k.squared_norm()) - 1.0) <= 1e-9);
    }
    CHECK(flow_to_kernel(f, 3, 0.5).argmax_offset() == std::pair<int, int>{1, 0});
}

TEST_CASE("kernel_match: self, orthogonal, symmetric") {
    SplitMix64 rng(123);
    Kernel k(5);
    for (double& w : k.weights) w = rng.uniform() - 0.5;
    const Kernel unit = l2_normalize(k);
    CHECK(std::fabs(kernel_match(unit, unit) - 1.0) <= 1e-9);

    const Kernel a = motion::make_impulse_kernel(3, 1, 0);
    const Kernel b = motion::make_impulse_kernel(3, 0, 1);
    CHECK(kernel_match(a, b) == 0.0);

    Kernel other(5);
    for (double& w : other.weights) w = rng.uniform() - 0.5;
    const Kernel u2 = l2_normalize(other);
    CHECK(kernel_match(unit, u2) == kernel_match(u2, unit));
    CHECK_THROWS_AS(kernel_match(a, u2), SizeMismatch);
}

TEST_CASE("match_statistics") {
    const MatchStats s = match_statistics({1, 2, 3, 4, 5});
    CHECK(s.median == 3.0);

    const MatchStats c = match_statistics({0.4, 0.4, 0.4});
    CHECK(c.median == 0.4);
    CHECK(c.q25 == 0.4);
    CHECK(c.q75 == 0.4);
    CHECK(c.p10 == 0.4);
    CHECK(c.p90 == 0.4);

    SplitMix64 rng(321);
    std::vector<double> scores;
    for (int i = 0; i < 100; ++i) scores.push_back(rng.uniform());
    const MatchStats r = match_statistics(scores);
    CHECK(r.median == oracles::quantile_sorted(scores, 0.5));
    CHECK(r.q25 == oracles::quantile_sorted(scores, 0.25));
    CHECK(r.q75 == oracles::quantile_sorted(scores, 0.75));
    CHECK(r.p10 == oracles::quantile_sorted(scores, 0.10));
    CHECK(r.p90 == oracles::quantile_sorted(scores, 0.90));

    CHECK_THROWS_AS(match_statistics({}), EmptyInput);
}
