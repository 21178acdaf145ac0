#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "corpus.hpp"
#include "oracles.hpp"
#include "residprop/kalman.hpp"

using namespace residprop;
using namespace residprop::kalman;

namespace {

FeatureTensor random_tensor(int C, int W, int H, SplitMix64& rng, double scale = 1.0) {
    FeatureTensor t(C, W, H);
    for (double& v : t.values) v = scale * (2.0 * rng.uniform() - 1.0);
    return t;
}

}  // namespace

TEST_CASE("gain: zero parameters give a uniform 0.5 map") {
    SplitMix64 rng(1);
    const FeatureTensor z = random_tensor(2, 6, 5, rng);
    const FeatureTensor d = random_tensor(2, 6, 5, rng);
    for (GainVariant v : {GainVariant::KF2, GainVariant::KF}) {
        const Plane g = gain(GainModel::zeros(v), z, d);
        for (double x : g.values) CHECK(x == 0.5);
    }
}

TEST_CASE("gain: zero error yields zero statistics and 0.5 gain") {
    SplitMix64 rng(2);
    const FeatureTensor z = random_tensor(1, 5, 5, rng);
    const GainModel m = GainModel::zeros(GainVariant::KF2);
    const auto stats = gain_statistics(m, z, z);
    for (const Plane& p : stats) {
        for (double v : p.values) CHECK(v == 0.0);
    }
    const Plane g = gain(m, z, z);
    for (double x : g.values) CHECK(x == 0.5);
}

TEST_CASE("gain: positive weight on pooled |e| makes larger errors raise the gain") {
    SplitMix64 rng(3);
    GainModel m = GainModel::zeros(GainVariant::KF2);
    m.params[0] = 1.5;  // weight on the pooled |e| statistic

    const FeatureTensor d = random_tensor(1, 7, 6, rng);
    FeatureTensor z_small = d;
    for (double& v : z_small.values) v += 0.2 + 0.1 * rng.uniform();  // positive error everywhere
    FeatureTensor z_large = d;
    for (std::size_t i = 0; i < z_large.values.size(); ++i) {
        z_large.values[i] += 2.0 * (z_small.values[i] - d.values[i]);
    }
    const Plane g_small = gain(m, z_small, d);
    const Plane g_large = gain(m, z_large, d);
    for (std::size_t i = 0; i < g_small.values.size(); ++i) {
        CHECK(g_large.values[i] > g_small.values[i]);
    }
}

TEST_CASE("gain: entries stay strictly inside (0, 1) even for huge inputs") {
    GainModel m = GainModel::zeros(GainVariant::KF2);
    m.params = {1e9, 1e9, 1e9, 1e9};
    FeatureTensor d(1, 3, 3);
    FeatureTensor z(1, 3, 3, 1e12);
    Plane g = gain(m, z, d);
    for (double x : g.values) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
    m.params = {-1e9, -1e9, -1e9, -1e9};
    g = gain(m, z, d);
    for (double x : g.values) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
    }
}

TEST_CASE("update: limits and convexity") {
    FeatureTensor prior(1, 1, 1);
    FeatureTensor z(1, 1, 1);
    z.values[0] = 10.0;
    Plane gamma(1, 1);

    gamma.values[0] = 0.0;
    CHECK(update(prior, z, gamma).values[0] == 0.0);
    gamma.values[0] = 1.0;
    CHECK(update(prior, z, gamma).values[0] == 10.0);
    gamma.values[0] = 0.25;
    CHECK(update(prior, z, gamma).values[0] == 2.5);

    SplitMix64 rng(5);
    const FeatureTensor p2 = random_tensor(3, 5, 4, rng);
    const FeatureTensor z2 = random_tensor(3, 5, 4, rng);
    Plane g2(5, 4);
    for (double& v : g2.values) v = rng.uniform();
    const FeatureTensor post = update(p2, z2, g2);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 5; ++x) {
                const double lo = std::min(p2.at(c, x, y), z2.at(c, x, y));
                const double hi = std::max(p2.at(c, x, y), z2.at(c, x, y));
                CHECK(post.at(c, x, y) >= lo);
                CHECK(post.at(c, x, y) <= hi);
            }
        }
    }
    CHECK_THROWS_AS(update(p2, z2, Plane(2, 2)), ShapeMismatch);
}

TEST_CASE("filtered_rollout at the init boundary is bit-identical to the open-loop rollout") {
    const FeatureSequence seq = corpus::translating_sequence(1, 10, 9, 12, 1, 0, 606);
    motion::FitConfig cfg;
    cfg.max_iterations = 40;

    const int init = cfg.window + 1;
    const double g = (init + 0.5) / static_cast<double>(seq.size());  // floor(g*T) == init
    const FilteredRollout fr =
        filtered_rollout(seq, g, GainModel::zeros(GainVariant::KF2), cfg);
    CHECK(fr.trace.frames.empty());

    FeatureSequence obs;
    obs.frames.assign(seq.frames.begin(), seq.frames.begin() + init);
    const motion::RolloutResult open = motion::rollout(obs, static_cast<int>(seq.size()) - init, cfg);

    REQUIRE(fr.rollout.features.size() == open.features.size());
    for (std::size_t i = 0; i < open.features.size(); ++i) {
        CHECK(fr.rollout.features[i].values == open.features[i].values);
        CHECK(fr.rollout.residuals[i].values == open.residuals[i].values);
    }
}

TEST_CASE("filtered_rollout: g = 1 corrects every step and records the trace") {
    const FeatureSequence seq = corpus::direction_change_sequence(1, 10, 9, 12, 1, 0, 6, 0, 1, 707);
    motion::FitConfig cfg;
    cfg.max_iterations = 40;
    const FilteredRollout fr = filtered_rollout(seq, 1.0, GainModel::zeros(GainVariant::KF2), cfg);
    const int init = cfg.window + 1;
    CHECK(static_cast<int>(fr.trace.frames.size()) == static_cast<int>(seq.size()) - init);
    for (const Plane& g : fr.trace.gains) {
        for (double v : g.values) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    CHECK_THROWS_AS(filtered_rollout(seq, 0.2, GainModel::zeros(GainVariant::KF2), cfg), TooShort);
}

TEST_CASE("KF2 gain is invariant to a constant offset of both inputs, KF is not") {
    SplitMix64 rng(9);
    GainModel kf2 = GainModel::zeros(GainVariant::KF2);
    kf2.params = {0.7, -0.3, 0.4, 0.1};
    GainModel kf = GainModel::zeros(GainVariant::KF);
    kf.params = {0.7, -0.3, 0.4, 0.2, 0.5, -0.1, 0.1};

    // dyadic-grid values keep z + c and d + c exact, so the error tensor is
    // bit-identical before and after the offset
    auto grid_tensor = [&](int C, int W, int H) {
        FeatureTensor t(C, W, H);
        for (double& v : t.values) {
            v = static_cast<double>(static_cast<int>(rng.next() % 2048) - 1024) / 1024.0;
        }
        return t;
    };
    const FeatureTensor z = grid_tensor(2, 6, 5);
    const FeatureTensor d = grid_tensor(2, 6, 5);
    FeatureTensor zc = z, dc = d;
    for (double& v : zc.values) v += 2.75;
    for (double& v : dc.values) v += 2.75;

    const Plane a = gain(kf2, z, d);
    const Plane b = gain(kf2, zc, dc);
    CHECK(a.values == b.values);  // bit-exact

    const Plane ka = gain(kf, z, d);
    const Plane kb = gain(kf, zc, dc);
    bool any_diff = false;
    for (std::size_t i = 0; i < ka.values.size(); ++i) any_diff |= ka.values[i] != kb.values[i];
    CHECK(any_diff);
}

TEST_CASE("posterior_step_loss: beta = 0 reduces to the posterior squared error") {
    SplitMix64 rng(11);
    GainModel m = GainModel::zeros(GainVariant::KF2);
    m.params = {0.5, 0.1, -0.2, 0.3};
    const FeatureTensor prior = random_tensor(1, 6, 6, rng);
    const FeatureTensor z = random_tensor(1, 6, 6, rng);
    const FeatureTensor z_prev = random_tensor(1, 6, 6, rng);
    const FeatureTensor d_prev = random_tensor(1, 6, 6, rng);

    const auto stats = gain_statistics(m, z_prev, d_prev);
    const Plane gamma = gain(m, z_prev, d_prev);
    const FeatureTensor post = update(prior, z, gamma);

    double l2 = 0.0;
    for (std::size_t i = 0; i < post.values.size(); ++i) {
        const double d = z.values[i] - post.values[i];
        l2 += d * d;
    }
    const PosteriorStepLoss res = posterior_step_loss(m, stats, prior, z, 2.0, 0.0);
    CHECK(res.value == doctest::Approx(2.0 * l2).epsilon(1e-12));
}

TEST_CASE("posterior_step_loss: analytic gradient matches finite differences") {
    SplitMix64 rng(13);
    int failures = 0;
    for (int inst = 0; inst < 8; ++inst) {
        for (GainVariant variant : {GainVariant::KF2, GainVariant::KF}) {
            GainModel m = GainModel::zeros(variant);
            for (double& p : m.params) p = rng.uniform() - 0.5;
            const FeatureTensor prior = random_tensor(1, 8, 8, rng);
            const FeatureTensor z = random_tensor(1, 8, 8, rng);
            const FeatureTensor z_prev = random_tensor(1, 8, 8, rng);
            const FeatureTensor d_prev = random_tensor(1, 8, 8, rng);
            const auto stats = gain_statistics(m, z_prev, d_prev);

            const PosteriorStepLoss res = posterior_step_loss(m, stats, prior, z, 1.0, 5.0);
            auto eval = [&](const std::vector<double>& params) {
                GainModel trial = m;
                trial.params = params;
                return posterior_step_loss(trial, stats, prior, z, 1.0, 5.0).value;
            };
            const auto fd = oracles::fd_gradient(eval, m.params, 1e-6);
            if (oracles::gradient_rel_error(res.grad, fd) >= 1e-4) ++failures;
        }
    }
    CHECK(failures == 0);
}

TEST_CASE("fine_tune never scores worse than the starting model") {
    std::vector<FeatureSequence> corpus;
    for (int i = 0; i < 4; ++i) {
        corpus.push_back(
            corpus::direction_change_sequence(1, 10, 8, 12, 1, 0, 6, -1, 0, 900 + i));
    }
    motion::FitConfig fit;
    fit.max_iterations = 30;
    const GainModel start = GainModel::zeros(GainVariant::KF2);
    const double before = mean_posterior_loss(start, corpus, 1.0, 5.0, fit);

    FineTuneConfig ft;
    ft.max_epochs = 8;
    const GainModel tuned = fine_tune(start, corpus, 1.0, 5.0, fit, ft);
    const double after = mean_posterior_loss(tuned, corpus, 1.0, 5.0, fit);
    CHECK(after <= before);
}

TEST_CASE("gain model JSON round trip and validation") {
    GainModel m = GainModel::zeros(GainVariant::KF2);
    m.params = {0.25, -1.5, 3.0, 0.125};
    const std::string text = gain_model_to_json(m);
    const GainModel back = gain_model_from_json(text);
    CHECK(back.variant == m.variant);
    CHECK(back.params == m.params);
    CHECK(back.stat_window == m.stat_window);

    CHECK_THROWS_AS(gain_model_from_json("{\"variant\":\"kf2\",\"params\":[0,0,0,0],"
                                         "\"window\":3,\"extra\":1}"),
                    ConfigError);
    CHECK_THROWS_AS(gain_model_from_json("{\"variant\":\"kf2\",\"params\":[0,0],\"window\":3}"),
                    ConfigError);
    CHECK_THROWS_AS(gain_model_from_json("{\"variant\":\"nope\",\"params\":[0,0,0,0],"
                                         "\"window\":3}"),
                    ConfigError);

    const auto dir = std::filesystem::temp_directory_path() / "residprop_gain_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "model.json").string();
    save_gain_model(path, m);
    const GainModel loaded = load_gain_model(path);
    CHECK(loaded.params == m.params);
    std::filesystem::remove_all(dir);
}
