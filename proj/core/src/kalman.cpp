#include "residprop/kalman.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "residprop/parallel.hpp"

namespace residprop::kalman {

namespace {

double sigmoid_clamped(double a) {
    // Clamp keeps the output strictly inside (0, 1) in double precision.
    a = std::clamp(a, -36.0, 36.0);
    return 1.0 / (1.0 + std::exp(-a));
}

// (pooled mean |x|, channel-mean x, channel-max |x|) per pixel. The pooled
// mean averages over the channels and the stat_window neighborhood clipped
// at the borders.
std::vector<Plane> input_statistics(const FeatureTensor& x, int stat_window) {
    const int W = x.width;
    const int H = x.height;
    const int C = x.channels;
    const int half = (stat_window - 1) / 2;

    Plane mean_abs(W, H), mean_val(W, H), max_abs(W, H);
    for (int y = 0; y < H; ++y) {
        for (int xk = 0; xk < W; ++xk) {
            double sum = 0.0;
            double amax = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = x.at(c, xk, y);
                sum += v;
                amax = std::max(amax, std::fabs(v));
            }
            mean_val.at(xk, y) = sum / C;
            max_abs.at(xk, y) = amax;
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int xk = 0; xk < W; ++xk) {
            double acc = 0.0;
            int count = 0;
            for (int dy = -half; dy <= half; ++dy) {
                const int sy = y + dy;
                if (sy < 0 || sy >= H) continue;
                for (int dx = -half; dx <= half; ++dx) {
                    const int sx = xk + dx;
                    if (sx < 0 || sx >= W) continue;
                    for (int c = 0; c < C; ++c) acc += std::fabs(x.at(c, sx, sy));
                    count += C;
                }
            }
            mean_abs.at(xk, y) = acc / count;
        }
    }
    return {std::move(mean_abs), std::move(mean_val), std::move(max_abs)};
}

Plane affine_sigmoid(const std::vector<Plane>& stats, const std::vector<double>& params) {
    const int W = stats.front().width;
    const int H = stats.front().height;
    Plane out(W, H);
    const double bias = params.back();
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        double a = bias;
        for (std::size_t j = 0; j < stats.size(); ++j) a += params[j] * stats[j].values[i];
        out.values[i] = sigmoid_clamped(a);
    }
    return out;
}

struct PassResult {
    double loss_sum = 0.0;
    std::size_t steps = 0;
    std::vector<double> grad_sum;
};

// Full-pipeline pass over one sequence with corrections at every step,
// accumulating the posterior loss (and optionally its truncated gradient).
PassResult posterior_pass(const GainModel& m, const FeatureSequence& seq,
                          const motion::FitConfig& fit_cfg, double alpha, double beta,
                          bool want_grad) {
    const int T = static_cast<int>(seq.size());
    const int init = fit_cfg.window + 1;
    if (T < init + 1) throw TooShort("fine_tune: sequence shorter than window+2");

    PassResult out;
    out.grad_sum.assign(m.params.size(), 0.0);

    std::vector<FeatureTensor> feats(seq.frames.begin(), seq.frames.begin() + init);
    FeatureSequence init_seq;
    init_seq.frames = feats;
    std::vector<FeatureTensor> resids = compute_residuals(init_seq).residuals;

    for (int t = init; t < T; ++t) {
        motion::MotionKernelSet ks = motion::fit_at_anchor(feats, resids, fit_cfg);
        FeatureTensor r_hat = motion::propagate_residual(resids.back(), ks);
        FeatureTensor prior = reconstruct(feats.back(), r_hat);

        std::vector<Plane> stats = gain_statistics(m, seq[t - 1], feats.back());
        Plane gamma = affine_sigmoid(stats, m.params);
        FeatureTensor post = update(prior, seq[t], gamma);

        PosteriorStepLoss step = posterior_step_loss(m, stats, prior, seq[t], alpha, beta);
        if (!std::isfinite(step.value)) throw NonFinite("fine_tune: non-finite loss");
        out.loss_sum += step.value;
        ++out.steps;
        if (want_grad) {
            for (std::size_t j = 0; j < step.grad.size(); ++j) {
                if (!std::isfinite(step.grad[j])) throw NonFinite("fine_tune: non-finite gradient");
                out.grad_sum[j] += step.grad[j];
            }
        }

        FeatureTensor delta = post;
        for (std::size_t i = 0; i < delta.values.size(); ++i) {
            delta.values[i] -= feats.back().values[i];
        }
        resids.push_back(std::move(delta));
        feats.push_back(std::move(post));
    }
    return out;
}

PassResult corpus_pass(const GainModel& m, const std::vector<FeatureSequence>& sequences,
                       double alpha, double beta, const motion::FitConfig& fit_cfg,
                       bool want_grad) {
    std::vector<PassResult> per_seq(sequences.size());
    parallel_for(sequences.size(), [&](std::size_t i) {
        per_seq[i] = posterior_pass(m, sequences[i], fit_cfg, alpha, beta, want_grad);
    });
    PassResult total;
    total.grad_sum.assign(m.params.size(), 0.0);
    for (const auto& p : per_seq) {
        total.loss_sum += p.loss_sum;
        total.steps += p.steps;
        for (std::size_t j = 0; j < total.grad_sum.size(); ++j) total.grad_sum[j] += p.grad_sum[j];
    }
    return total;
}

}  // namespace

int GainModel::param_count(GainVariant v) { return v == GainVariant::KF2 ? 4 : 7; }

GainModel GainModel::zeros(GainVariant v, int stat_window) {
    GainModel m;
    m.variant = v;
    m.params.assign(param_count(v), 0.0);
    m.stat_window = stat_window;
    return m;
}

std::string variant_name(GainVariant v) { return v == GainVariant::KF2 ? "kf2" : "kf"; }

GainVariant variant_from_name(const std::string& name) {
    if (name == "kf2") return GainVariant::KF2;
    if (name == "kf") return GainVariant::KF;
    throw ConfigError("unknown gain variant: " + name);
}

std::string gain_model_to_json(const GainModel& m) {
    nlohmann::ordered_json j;
    j["variant"] = variant_name(m.variant);
    j["params"] = m.params;
    j["window"] = m.stat_window;
    return j.dump(2);
}

GainModel gain_model_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("gain model: ") + e.what());
    }
    for (const auto& item : j.items()) {
        if (item.key() != "variant" && item.key() != "params" && item.key() != "window") {
            throw ConfigError("gain model: unknown key '" + item.key() + "'");
        }
    }
    if (!j.contains("variant") || !j.contains("params") || !j.contains("window")) {
        throw ConfigError("gain model: missing variant/params/window");
    }
    GainModel m;
    m.variant = variant_from_name(j["variant"].get<std::string>());
    m.params = j["params"].get<std::vector<double>>();
    m.stat_window = j["window"].get<int>();
    if (static_cast<int>(m.params.size()) != GainModel::param_count(m.variant)) {
        throw ConfigError("gain model: wrong parameter count");
    }
    if (m.stat_window < 1 || m.stat_window % 2 == 0) {
        throw ConfigError("gain model: window must be odd and >= 1");
    }
    for (double p : m.params) {
        if (!std::isfinite(p)) throw ConfigError("gain model: non-finite parameter");
    }
    return m;
}

void save_gain_model(const std::string& path, const GainModel& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    f << gain_model_to_json(m) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

GainModel load_gain_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return gain_model_from_json(buf.str());
}

std::vector<Plane> gain_statistics(const GainModel& m, const FeatureTensor& z_prev,
                                   const FeatureTensor& dhat_prev) {
    if (!z_prev.same_shape(dhat_prev)) throw ShapeMismatch("gain: input shapes differ");
    if (m.variant == GainVariant::KF2) {
        FeatureTensor err = z_prev;
        for (std::size_t i = 0; i < err.values.size(); ++i) err.values[i] -= dhat_prev.values[i];
        return input_statistics(err, m.stat_window);
    }
    std::vector<Plane> stats = input_statistics(z_prev, m.stat_window);
    std::vector<Plane> d_stats = input_statistics(dhat_prev, m.stat_window);
    for (auto& p : d_stats) stats.push_back(std::move(p));
    return stats;
}

Plane gain(const GainModel& m, const FeatureTensor& z_prev, const FeatureTensor& dhat_prev) {
    if (static_cast<int>(m.params.size()) != GainModel::param_count(m.variant)) {
        throw ConfigError("gain: wrong parameter count for variant");
    }
    return affine_sigmoid(gain_statistics(m, z_prev, dhat_prev), m.params);
}

FeatureTensor update(const FeatureTensor& dhat_minus, const FeatureTensor& z, const Plane& gamma) {
    if (!dhat_minus.same_shape(z)) throw ShapeMismatch("update: tensor shapes differ");
    if (gamma.width != dhat_minus.width || gamma.height != dhat_minus.height) {
        throw ShapeMismatch("update: gain map shape differs");
    }
    FeatureTensor out = dhat_minus;
    const std::size_t plane = dhat_minus.plane_size();
    for (int c = 0; c < out.channels; ++c) {
        double* oc = out.values.data() + c * plane;
        const double* zc = z.values.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            oc[i] += gamma.values[i] * (zc[i] - oc[i]);
        }
    }
    return out;
}

FilteredRollout filtered_rollout(const FeatureSequence& seq, double g, const GainModel& model,
                                 const motion::FitConfig& fit_cfg, int horizon) {
    const int T = static_cast<int>(seq.size());
    if (g <= 0.0 || g > 1.0) throw ConfigError("filtered_rollout: g must be in (0, 1]");
    const int n_obs = static_cast<int>(std::floor(g * T));
    const int init = fit_cfg.window + 1;
    if (n_obs < init) throw TooShort("filtered_rollout: observed span shorter than window+1");
    for (const auto& f : seq.frames) ensure_finite(f, "filtered_rollout input");

    FilteredRollout out;
    out.init_frames = init;
    out.observed_frames = n_obs;
    const int steps = horizon < 0 ? T - init : horizon;
    if (steps <= 0) return out;

    std::vector<FeatureTensor> feats(seq.frames.begin(), seq.frames.begin() + init);
    FeatureSequence init_seq;
    init_seq.frames = feats;
    std::vector<FeatureTensor> resids = compute_residuals(init_seq).residuals;

    for (int s = 0; s < steps; ++s) {
        const int t = init + s;  // frame index being predicted
        motion::MotionKernelSet ks = motion::fit_at_anchor(feats, resids, fit_cfg);
        FeatureTensor r_hat = motion::propagate_residual(resids.back(), ks);
        ensure_finite(r_hat, "filtered_rollout residual");
        FeatureTensor prior = reconstruct(feats.back(), r_hat);
        ensure_finite(prior, "filtered_rollout feature");

        if (t < n_obs && t < T) {
            Plane gamma = gain(model, seq[t - 1], feats.back());
            FeatureTensor post = update(prior, seq[t], gamma);

            double mean = 0.0;
            for (double v : gamma.values) mean += v;
            mean /= static_cast<double>(gamma.values.size());
            double norm_sq = 0.0;
            const std::size_t plane = prior.plane_size();
            for (int c = 0; c < prior.channels; ++c) {
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = gamma.values[i] *
                                     (seq[t].values[c * plane + i] - prior.values[c * plane + i]);
                    norm_sq += d * d;
                }
            }
            out.trace.frames.push_back(t);
            out.trace.gains.push_back(gamma);
            out.trace.mean_gain.push_back(mean);
            out.trace.update_norm.push_back(std::sqrt(norm_sq));

            FeatureTensor delta = post;
            for (std::size_t i = 0; i < delta.values.size(); ++i) {
                delta.values[i] -= feats.back().values[i];
            }
            resids.push_back(std::move(delta));
            feats.push_back(std::move(post));
        } else {
            // Open-loop step; identical arithmetic to motion::rollout.
            resids.push_back(std::move(r_hat));
            feats.push_back(std::move(prior));
        }

        out.rollout.residuals.push_back(resids.back());
        out.rollout.features.push_back(feats.back());
        out.rollout.kernels.push_back(std::move(ks));
    }
    return out;
}

PosteriorStepLoss posterior_step_loss(const GainModel& m, const std::vector<Plane>& stats,
                                      const FeatureTensor& dhat_minus, const FeatureTensor& z,
                                      double alpha, double beta) {
    if (!dhat_minus.same_shape(z)) throw ShapeMismatch("posterior_step_loss: shapes differ");
    const int W = z.width;
    const int H = z.height;
    const std::size_t plane = z.plane_size();

    Plane gamma = affine_sigmoid(stats, m.params);

    PosteriorStepLoss out;
    out.grad.assign(m.params.size(), 0.0);

    // dL/dGamma accumulated across channels.
    Plane dl_dgamma(W, H);
    Plane f(W, H), gx(W, H), gy(W, H), adj(W, H);
    for (int c = 0; c < z.channels; ++c) {
        const double* zc = z.values.data() + c * plane;
        const double* pc = dhat_minus.values.data() + c * plane;
        // F = z - posterior = (1 - gamma) * (z - prior)
        for (std::size_t i = 0; i < plane; ++i) {
            f.values[i] = (1.0 - gamma.values[i]) * (zc[i] - pc[i]);
        }
        forward_diff_x(f.values, W, H, gx.values);
        forward_diff_y(f.values, W, H, gy.values);
        double l2 = 0.0, gdl = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
            l2 += f.values[i] * f.values[i];
            gdl += gx.values[i] * gx.values[i] + gy.values[i] * gy.values[i];
        }
        out.value += alpha * l2 + beta * gdl;

        std::fill(adj.values.begin(), adj.values.end(), 0.0);
        forward_diff_x_adjoint(gx.values, W, H, adj.values);
        forward_diff_y_adjoint(gy.values, W, H, adj.values);
        for (std::size_t i = 0; i < plane; ++i) {
            const double dl_df = 2.0 * alpha * f.values[i] + 2.0 * beta * adj.values[i];
            dl_dgamma.values[i] += dl_df * (-(zc[i] - pc[i]));
        }
    }

    for (std::size_t i = 0; i < dl_dgamma.values.size(); ++i) {
        const double dsig = gamma.values[i] * (1.0 - gamma.values[i]);
        const double base = dl_dgamma.values[i] * dsig;
        for (std::size_t j = 0; j < stats.size(); ++j) out.grad[j] += base * stats[j].values[i];
        out.grad.back() += base;  // bias input is 1
    }
    return out;
}

double mean_posterior_loss(const GainModel& m, const std::vector<FeatureSequence>& sequences,
                           double alpha, double beta, const motion::FitConfig& fit_cfg) {
    if (sequences.empty()) throw EmptyInput("mean_posterior_loss: no sequences");
    PassResult p = corpus_pass(m, sequences, alpha, beta, fit_cfg, false);
    return p.loss_sum / static_cast<double>(p.steps);
}

GainModel fine_tune(const GainModel& model, const std::vector<FeatureSequence>& sequences,
                    double alpha, double beta, const motion::FitConfig& fit_cfg,
                    const FineTuneConfig& ft) {
    if (sequences.empty()) throw EmptyInput("fine_tune: no sequences");
    if (alpha < 0.0 || beta < 0.0 || (alpha == 0.0 && beta == 0.0)) {
        throw ConfigError("fine_tune: alpha/beta must be nonnegative, not both zero");
    }

    GainModel cur = model;
    PassResult eval = corpus_pass(cur, sequences, alpha, beta, fit_cfg, true);
    double cur_loss = eval.loss_sum / static_cast<double>(eval.steps);

    double step = ft.step_size;
    for (int epoch = 0; epoch < ft.max_epochs; ++epoch) {
        double grad_sq = 0.0;
        std::vector<double> grad(eval.grad_sum.size());
        for (std::size_t j = 0; j < grad.size(); ++j) {
            grad[j] = eval.grad_sum[j] / static_cast<double>(eval.steps);
            grad_sq += grad[j] * grad[j];
        }
        if (!ft.train_bias) {
            grad_sq -= grad.back() * grad.back();
            grad.back() = 0.0;
        }
        if (grad_sq == 0.0) break;

        bool accepted = false;
        GainModel trial = cur;
        double trial_loss = cur_loss;
        for (int bt = 0; bt < 40; ++bt) {
            for (std::size_t j = 0; j < grad.size(); ++j) {
                trial.params[j] = cur.params[j] - step * grad[j];
            }
            PassResult t_eval = corpus_pass(trial, sequences, alpha, beta, fit_cfg, true);
            trial_loss = t_eval.loss_sum / static_cast<double>(t_eval.steps);
            if (trial_loss < cur_loss) {
                accepted = true;
                eval = std::move(t_eval);
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const double improvement = cur_loss - trial_loss;
        cur = trial;
        cur_loss = trial_loss;
        if (improvement <= ft.tolerance * (1.0 + cur_loss)) break;
        step *= 2.0;
    }
    return cur;
}

}  // namespace residprop::kalman
