#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "residprop/rng.hpp"
#include "residprop/tensor.hpp"

using namespace residprop;

namespace {

FeatureTensor scalar_tensor(double v) {
    FeatureTensor t(1, 1, 1);
    t.values[0] = v;
    return t;
}

Plane random_plane(int W, int H, SplitMix64& rng, double scale = 1.0) {
    Plane p(W, H);
    for (double& v : p.values) v = scale * (2.0 * rng.uniform() - 1.0);
    return p;
}

}  // namespace

TEST_CASE("compute_residuals: direct subtraction") {
    FeatureSequence seq;
    seq.frames = {scalar_tensor(2.0), scalar_tensor(5.0)};
    const ResidualSequence res = compute_residuals(seq);
    REQUIRE(res.size() == 1);
    CHECK(res[0].values[0] == 3.0);
}

TEST_CASE("compute_residuals: constant sequence gives zero residuals") {
    FeatureSequence seq;
    for (int i = 0; i < 6; ++i) seq.frames.push_back(scalar_tensor(1.25));
    for (const auto& r : compute_residuals(seq).residuals) {
        for (double v : r.values) CHECK(v == 0.0);
    }
}

TEST_CASE("compute_residuals: length is one less than the sequence") {
    SplitMix64 rng(1);
    FeatureSequence seq;
    for (int i = 0; i < 5; ++i) {
        FeatureTensor t(2, 3, 4);
        for (double& v : t.values) v = rng.uniform();
        seq.frames.push_back(std::move(t));
    }
    CHECK(compute_residuals(seq).size() == 4);
}

TEST_CASE("compute_residuals: errors") {
    FeatureSequence seq;
    seq.frames = {scalar_tensor(1.0)};
    CHECK_THROWS_AS(compute_residuals(seq), TooShort);
    seq.frames.push_back(FeatureTensor(1, 2, 2));
    CHECK_THROWS_AS(compute_residuals(seq), ShapeMismatch);
}

TEST_CASE("reconstruct: identity, addition, inverse of differencing") {
    CHECK(reconstruct(scalar_tensor(1.0), scalar_tensor(0.0)).values[0] == 1.0);
    CHECK(reconstruct(scalar_tensor(2.0), scalar_tensor(3.0)).values[0] == 5.0);

    SplitMix64 rng(7);
    FeatureSequence seq;
    for (int i = 0; i < 7; ++i) {
        FeatureTensor t(2, 4, 3);
        // dyadic-grid values keep every difference exactly representable
        for (double& v : t.values) {
            v = static_cast<double>(static_cast<int>(rng.next() % 65536) - 32768) / 4096.0;
        }
        seq.frames.push_back(std::move(t));
    }
    const ResidualSequence res = compute_residuals(seq);
    // cumulative reconstruction recovers the sequence bit-exactly
    FeatureTensor cur = seq[0];
    for (std::size_t t = 0; t < res.size(); ++t) {
        cur = reconstruct(cur, res[t]);
        for (std::size_t i = 0; i < cur.values.size(); ++i) {
            CHECK(cur.values[i] == seq[t + 1].values[i]);
        }
    }
    CHECK_THROWS_AS(reconstruct(scalar_tensor(0.0), FeatureTensor(1, 2, 1)), ShapeMismatch);
}

TEST_CASE("convolve: impulse shifts content") {
    Plane map(3, 3);
    map.at(1, 1) = 1.0;
    Kernel k(3);
    k.at(1, 0) = 1.0;  // impulse at centered offset (+1, 0)
    const Plane out = convolve_channel(map, k);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
            CHECK(out.at(x, y) == ((x == 2 && y == 1) ? 1.0 : 0.0));
        }
    }
}

TEST_CASE("convolve: center impulse is the identity") {
    SplitMix64 rng(3);
    Plane map = random_plane(6, 5, rng);
    Kernel k(3);
    k.at(0, 0) = 1.0;
    const Plane out = convolve_channel(map, k);
    for (std::size_t i = 0; i < map.values.size(); ++i) CHECK(out.values[i] == map.values[i]);
}

TEST_CASE("convolve: 4x4 ramp matches the brute-force oracle") {
    Plane map(4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) map.at(x, y) = x + 4 * y;
    }
    Kernel k(3);
    const double w[9] = {1.0, 2.0, -1.0, 0.5, 3.0, -2.0, -1.5, 1.0, 0.25};
    for (int i = 0; i < 9; ++i) k.weights[i] = w[i];

    const Plane out = convolve_channel(map, k);
    const auto expect = oracles::conv2d(map.values, 4, 4, k.weights, 3);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        CHECK(std::fabs(out.values[i] - expect[i]) <= 1e-12);
    }
}

TEST_CASE("convolve: shifted impulses equal exact translation for all offsets") {
    SplitMix64 rng(11);
    for (int n : {3, 5, 7}) {
        const int h = (n - 1) / 2;
        Plane map = random_plane(9, 8, rng);
        for (int dy = -h; dy <= h; ++dy) {
            for (int dx = -h; dx <= h; ++dx) {
                Kernel k(n);
                k.at(dx, dy) = 1.0;
                const Plane out = convolve_channel(map, k);
                const auto expect = oracles::shift2d(map.values, 9, 8, dx, dy);
                for (std::size_t i = 0; i < out.values.size(); ++i) {
                    CHECK(out.values[i] == expect[i]);
                }
            }
        }
    }
}

TEST_CASE("convolve: linearity") {
    SplitMix64 rng(13);
    Plane m1 = random_plane(7, 6, rng);
    Plane m2 = random_plane(7, 6, rng);
    Kernel k(5);
    for (double& w : k.weights) w = 2.0 * rng.uniform() - 1.0;
    const double a = 1.7, b = -0.6;

    Plane combo(7, 6);
    for (std::size_t i = 0; i < combo.values.size(); ++i) {
        combo.values[i] = a * m1.values[i] + b * m2.values[i];
    }
    const Plane lhs = convolve_channel(combo, k);
    const Plane c1 = convolve_channel(m1, k);
    const Plane c2 = convolve_channel(m2, k);
    for (std::size_t i = 0; i < lhs.values.size(); ++i) {
        CHECK(std::fabs(lhs.values[i] - (a * c1.values[i] + b * c2.values[i])) <= 1e-10);
    }
}

TEST_CASE("convolve: kernel validation") {
    Plane map(3, 3, 1.0);
    Kernel even(4);
    CHECK_THROWS_AS(convolve_channel(map, even), BadKernel);
    Kernel huge(7);
    huge.at(0, 0) = 1.0;
    CHECK_THROWS_AS(convolve_channel(map, huge), BadKernel);  // 7 > 2*3-1
}

TEST_CASE("l2_normalize") {
    Kernel ones(3);
    for (double& w : ones.weights) w = 1.0;
    const Kernel n1 = l2_normalize(ones);
    for (double w : n1.weights) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(std::fabs(std::sqrt(n1.squared_norm()) - 1.0) <= 1e-9);

    const Kernel n2 = l2_normalize(n1);  // idempotence
    for (int i = 0; i < 9; ++i) CHECK(std::fabs(n2.weights[i] - n1.weights[i]) <= 1e-12);

    Kernel pyth(3);
    pyth.weights[0] = 3.0;
    pyth.weights[1] = 4.0;
    const Kernel n3 = l2_normalize(pyth);
    CHECK(n3.weights[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(n3.weights[1] == doctest::Approx(0.8).epsilon(1e-12));
    for (int i = 2; i < 9; ++i) CHECK(n3.weights[i] == 0.0);

    CHECK_THROWS_AS(l2_normalize(Kernel(3)), ZeroKernel);
}

TEST_CASE("l2_normalize preserves the argmax cell") {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        Kernel k(5);
        for (double& w : k.weights) w = 2.0 * rng.uniform() - 1.0;
        k.weights[7] = 3.0;  // strictly positive max
        const auto before = k.argmax_offset();
        const auto after = l2_normalize(k).argmax_offset();
        CHECK(before == after);
    }
}

TEST_CASE("spatial_gradients: constant and ramp planes") {
    FeatureTensor constant(1, 4, 4, 2.5);
    auto [gcx, gcy] = spatial_gradients(constant);
    for (double v : gcx.values) CHECK(v == 0.0);
    for (double v : gcy.values) CHECK(v == 0.0);

    FeatureTensor ramp(1, 4, 3);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) ramp.at(0, x, y) = x;
    }
    auto [gx, gy] = spatial_gradients(ramp);
    for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 4; ++x) {
            CHECK(gx.at(0, x, y) == (x == 3 ? 0.0 : 1.0));
            CHECK(gy.at(0, x, y) == 0.0);
        }
    }
}

TEST_CASE("spatial_gradients: random plane matches the loop oracle") {
    SplitMix64 rng(19);
    FeatureTensor t(1, 5, 5);
    for (double& v : t.values) v = 4.0 * rng.uniform() - 2.0;
    auto [gx, gy] = spatial_gradients(t);
    const auto ex = oracles::diff_x(t.values, 5, 5);
    const auto ey = oracles::diff_y(t.values, 5, 5);
    for (std::size_t i = 0; i < ex.size(); ++i) {
        CHECK(gx.values[i] == ex[i]);
        CHECK(gy.values[i] == ey[i]);
    }
    CHECK_THROWS_AS(spatial_gradients(FeatureTensor(1, 1, 5)), TooSmall);
}

TEST_CASE("sparsity") {
    FeatureTensor t(1, 2, 2);
    t.values = {0.0, 0.005, 0.5, -0.02};
    CHECK(sparsity(t, 0.01) == 0.5);

    FeatureTensor zeros(2, 3, 3);
    CHECK(sparsity(zeros) == 1.0);
}

TEST_CASE("sparsity is invariant under sign flip") {
    SplitMix64 rng(23);
    FeatureTensor t(2, 4, 4);
    for (double& v : t.values) v = 0.05 * (rng.uniform() - 0.5);
    FeatureTensor neg = t;
    for (double& v : neg.values) v = -v;
    CHECK(sparsity(t, 0.01) == sparsity(neg, 0.01));
}
