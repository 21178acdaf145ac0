#include "residprop/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "residprop/parallel.hpp"

namespace residprop::motion {

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// Per-channel loss terms and kernel gradients for the single-step objective.
struct ChannelLoss {
    LossBreakdown terms;
    std::array<Kernel, kNumScales> grads;
};

// r: kernel input plane, target/prev: feature planes at the step being
// scored. All planes share (W, H).
ChannelLoss channel_loss_grad(const Plane& r, const Plane& target, const Plane& prev,
                              const std::array<Kernel, kNumScales>& ks,
                              const std::array<double, 4>& lambdas, bool want_grad) {
    const int W = r.width;
    const int H = r.height;
    const std::size_t n_cells = r.values.size();

    // prediction = (1/N) sum_n K_n (*) r
    Plane pred(W, H);
    Plane tmp(W, H);
    for (const Kernel& k : ks) {
        convolve_plane(r.values, W, H, k, tmp.values);
        for (std::size_t i = 0; i < n_cells; ++i) pred.values[i] += tmp.values[i];
    }
    const double inv_n = 1.0 / static_cast<double>(kNumScales);
    for (double& v : pred.values) v *= inv_n;

    // residual error: (target - prev) - pred; feature error: target - (prev + pred)
    Plane e_res(W, H);
    Plane e_feat(W, H);
    for (std::size_t i = 0; i < n_cells; ++i) {
        e_res.values[i] = (target.values[i] - prev.values[i]) - pred.values[i];
        e_feat.values[i] = target.values[i] - (prev.values[i] + pred.values[i]);
    }

    auto sum_sq = [](const Plane& p) {
        double s = 0.0;
        for (double v : p.values) s += v * v;
        return s;
    };

    Plane gx_res(W, H), gy_res(W, H), gx_feat(W, H), gy_feat(W, H);
    forward_diff_x(e_res.values, W, H, gx_res.values);
    forward_diff_y(e_res.values, W, H, gy_res.values);
    forward_diff_x(e_feat.values, W, H, gx_feat.values);
    forward_diff_y(e_feat.values, W, H, gy_feat.values);

    ChannelLoss out;
    out.terms.l2_res = sum_sq(e_res);
    out.terms.l2_feat = sum_sq(e_feat);
    out.terms.gdl_res = sum_sq(gx_res) + sum_sq(gy_res);
    out.terms.gdl_feat = sum_sq(gx_feat) + sum_sq(gy_feat);
    out.terms.total = lambdas[0] * out.terms.l2_res + lambdas[1] * out.terms.l2_feat +
                      lambdas[2] * out.terms.gdl_res + lambdas[3] * out.terms.gdl_feat;

    if (!want_grad) return out;

    // Adjoint map U = dL/d(pred). With E = (residual or feature error),
    // dE/d(pred) = -1, so each term contributes -2 * lambda * (its adjoint).
    Plane adj(W, H);
    for (std::size_t i = 0; i < n_cells; ++i) {
        adj.values[i] = lambdas[0] * e_res.values[i] + lambdas[1] * e_feat.values[i];
    }
    Plane gdl_adj(W, H);
    if (lambdas[2] != 0.0) {
        Plane a(W, H);
        forward_diff_x_adjoint(gx_res.values, W, H, a.values);
        forward_diff_y_adjoint(gy_res.values, W, H, a.values);
        for (std::size_t i = 0; i < n_cells; ++i) gdl_adj.values[i] += lambdas[2] * a.values[i];
    }
    if (lambdas[3] != 0.0) {
        Plane a(W, H);
        forward_diff_x_adjoint(gx_feat.values, W, H, a.values);
        forward_diff_y_adjoint(gy_feat.values, W, H, a.values);
        for (std::size_t i = 0; i < n_cells; ++i) gdl_adj.values[i] += lambdas[3] * a.values[i];
    }
    Plane u(W, H);
    for (std::size_t i = 0; i < n_cells; ++i) {
        u.values[i] = -2.0 * (adj.values[i] + gdl_adj.values[i]);
    }

    // dL/dK_n(i,j) = (1/N) * sum_{x,y} U(x,y) * r(x-i, y-j)
    for (int s = 0; s < kNumScales; ++s) {
        const int n = ks[s].size;
        const int h = (n - 1) / 2;
        Kernel g(n);
        for (int dj = -h; dj <= h; ++dj) {
            for (int di = -h; di <= h; ++di) {
                double acc = 0.0;
                for (int y = 0; y < H; ++y) {
                    const int sy = y - dj;
                    if (sy < 0 || sy >= H) continue;
                    for (int x = 0; x < W; ++x) {
                        const int sx = x - di;
                        if (sx < 0 || sx >= W) continue;
                        acc += u.at(x, y) * r.at(sx, sy);
                    }
                }
                g.at(di, dj) = acc * inv_n;
            }
        }
        out.grads[s] = std::move(g);
    }
    return out;
}

// The objective is quadratic in the kernel weights. Descent alone crawls
// along a nearly flat valley (stray mass that cancels across kernel scales
// only enters the loss at fourth order), so after descent we solve the
// unconstrained normal equations by conjugate gradients from zero. That
// yields the minimum-norm least-squares kernels, which for exactly
// representable motion are the unit impulses themselves. The polished
// kernels are re-normalized and kept only when they strictly lower the loss.
struct QuadOps {
    const Plane& r;
    const std::array<double, 4>& lambdas;
    int W, H;

    // p = (1/N) sum_n conv(r, k_n)
    void apply_a(const std::array<Kernel, kNumScales>& ks, Plane& p, Plane& tmp) const {
        std::fill(p.values.begin(), p.values.end(), 0.0);
        for (const Kernel& k : ks) {
            convolve_plane(r.values, W, H, k, tmp.values);
            for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] += tmp.values[i];
        }
        const double inv_n = 1.0 / static_cast<double>(kNumScales);
        for (double& v : p.values) v *= inv_n;
    }

    // m = (l1+l2) u + (l3+l4) (Dx^T Dx + Dy^T Dy) u
    void apply_m(const Plane& u, Plane& m, Plane& g) const {
        const double w0 = lambdas[0] + lambdas[1];
        const double w1 = lambdas[2] + lambdas[3];
        for (std::size_t i = 0; i < u.values.size(); ++i) m.values[i] = w0 * u.values[i];
        if (w1 != 0.0) {
            Plane acc(W, H);
            forward_diff_x(u.values, W, H, g.values);
            forward_diff_x_adjoint(g.values, W, H, acc.values);
            forward_diff_y(u.values, W, H, g.values);
            forward_diff_y_adjoint(g.values, W, H, acc.values);
            for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] += w1 * acc.values[i];
        }
    }

    // (A^T v)_n(i,j) = (1/N) sum_xy v(x,y) r(x-i, y-j)
    void apply_at(const Plane& v, std::array<Kernel, kNumScales>& out) const {
        const double inv_n = 1.0 / static_cast<double>(kNumScales);
        for (int s = 0; s < kNumScales; ++s) {
            const int n = kKernelSizes[s];
            const int h = (n - 1) / 2;
            Kernel g(n);
            for (int dj = -h; dj <= h; ++dj) {
                for (int di = -h; di <= h; ++di) {
                    double acc = 0.0;
                    for (int y = 0; y < H; ++y) {
                        const int sy = y - dj;
                        if (sy < 0 || sy >= H) continue;
                        for (int x = 0; x < W; ++x) {
                            const int sx = x - di;
                            if (sx < 0 || sx >= W) continue;
                            acc += v.at(x, y) * r.at(sx, sy);
                        }
                    }
                    g.at(di, dj) = acc * inv_n;
                }
            }
            out[s] = std::move(g);
        }
    }
};

double dot_kernels(const std::array<Kernel, kNumScales>& a,
                   const std::array<Kernel, kNumScales>& b) {
    double s = 0.0;
    for (int k = 0; k < kNumScales; ++k) {
        for (std::size_t i = 0; i < a[k].weights.size(); ++i) {
            s += a[k].weights[i] * b[k].weights[i];
        }
    }
    return s;
}

bool polish_channel(const Plane& r, const Plane& target, const Plane& prev,
                    std::array<Kernel, kNumScales>& ks, const std::array<double, 4>& lambdas,
                    double current_loss, double* polished_loss) {
    const int W = r.width;
    const int H = r.height;
    const QuadOps ops{r, lambdas, W, H};

    Plane rho(W, H);
    for (std::size_t i = 0; i < rho.values.size(); ++i) {
        rho.values[i] = target.values[i] - prev.values[i];
    }

    auto hessian_apply = [&](const std::array<Kernel, kNumScales>& x,
                             std::array<Kernel, kNumScales>& out) {
        Plane p(W, H), tmp(W, H), m(W, H);
        ops.apply_a(x, p, tmp);
        ops.apply_m(p, m, tmp);
        ops.apply_at(m, out);
    };

    // right-hand side g = A^T M rho
    std::array<Kernel, kNumScales> rhs;
    {
        Plane m(W, H), tmp(W, H);
        ops.apply_m(rho, m, tmp);
        ops.apply_at(m, rhs);
    }
    if (dot_kernels(rhs, rhs) == 0.0) return false;

    // conjugate gradients from zero converge to the minimum-norm solution
    std::array<Kernel, kNumScales> x;
    std::array<Kernel, kNumScales> residual = rhs;
    std::array<Kernel, kNumScales> direction = rhs;
    std::array<Kernel, kNumScales> hd;
    for (int s = 0; s < kNumScales; ++s) x[s] = Kernel(kKernelSizes[s]);

    double rr = dot_kernels(residual, residual);
    const double stop = rr * 1e-28;
    for (int iter = 0; iter < 300 && rr > stop; ++iter) {
        hessian_apply(direction, hd);
        const double dhd = dot_kernels(direction, hd);
        if (!(dhd > 0.0) || !std::isfinite(dhd)) break;
        const double alpha = rr / dhd;
        for (int s = 0; s < kNumScales; ++s) {
            for (std::size_t i = 0; i < x[s].weights.size(); ++i) {
                x[s].weights[i] += alpha * direction[s].weights[i];
                residual[s].weights[i] -= alpha * hd[s].weights[i];
            }
        }
        const double rr_next = dot_kernels(residual, residual);
        if (!std::isfinite(rr_next)) break;
        const double beta = rr_next / rr;
        rr = rr_next;
        for (int s = 0; s < kNumScales; ++s) {
            for (std::size_t i = 0; i < direction[s].weights.size(); ++i) {
                direction[s].weights[i] =
                    residual[s].weights[i] + beta * direction[s].weights[i];
            }
        }
    }

    std::array<Kernel, kNumScales> candidate;
    for (int s = 0; s < kNumScales; ++s) {
        if (x[s].squared_norm() <= 0.0) return false;
        candidate[s] = l2_normalize(x[s]);
    }
    const ChannelLoss cand = channel_loss_grad(r, target, prev, candidate, lambdas, false);
    if (!std::isfinite(cand.terms.total) || cand.terms.total >= current_loss) return false;
    ks = candidate;
    *polished_loss = cand.terms.total;
    return true;
}

void validate_fit_inputs(const std::vector<FeatureTensor>& window,
                         const FeatureTensor& target, const FeatureTensor& prev_feature) {
    if (window.empty()) throw TooShort("fit: empty window");
    for (const auto& w : window) {
        if (!w.same_shape(target)) throw ShapeMismatch("fit: window/target shapes differ");
    }
    if (!prev_feature.same_shape(target)) throw ShapeMismatch("fit: prev/target shapes differ");
}

// Projected gradient descent for one channel. The trial step for each
// iteration starts at the Barzilai-Borwein spectral value and is halved
// until the projected iterate descends, so the recorded losses are strictly
// non-increasing.
std::vector<double> fit_channel(const Plane& r, const Plane& target, const Plane& prev,
                                std::array<Kernel, kNumScales>& ks, const FitConfig& cfg) {
    std::vector<double> history;
    ChannelLoss cur = channel_loss_grad(r, target, prev, ks, cfg.lambdas, true);
    if (!std::isfinite(cur.terms.total)) throw NonFinite("fit: non-finite loss");
    history.push_back(cur.terms.total);

    std::array<Kernel, kNumScales> prev_ks = ks;
    std::array<Kernel, kNumScales> prev_grads = cur.grads;
    bool have_prev = false;

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        double grad_sq = 0.0;
        for (const Kernel& g : cur.grads) {
            for (double v : g.weights) {
                if (!std::isfinite(v)) throw NonFinite("fit: non-finite gradient");
                grad_sq += v * v;
            }
        }
        if (grad_sq == 0.0) break;

        double step = cfg.step_size;
        if (have_prev) {
            // spectral step from the last displacement/gradient change
            double sy = 0.0, yy = 0.0;
            for (int s = 0; s < kNumScales; ++s) {
                for (std::size_t i = 0; i < ks[s].weights.size(); ++i) {
                    const double sx = ks[s].weights[i] - prev_ks[s].weights[i];
                    const double gy = cur.grads[s].weights[i] - prev_grads[s].weights[i];
                    sy += sx * gy;
                    yy += gy * gy;
                }
            }
            if (std::isfinite(sy) && std::isfinite(yy) && sy > 0.0 && yy > 0.0) {
                step = sy / yy;
            }
        }

        bool accepted = false;
        std::array<Kernel, kNumScales> trial;
        ChannelLoss trial_loss;
        for (int bt = 0; bt < 60; ++bt) {
            for (int s = 0; s < kNumScales; ++s) {
                Kernel k = ks[s];
                for (std::size_t i = 0; i < k.weights.size(); ++i) {
                    k.weights[i] -= step * cur.grads[s].weights[i];
                }
                if (k.squared_norm() <= 0.0) throw ZeroKernel("fit: zero iterate");
                trial[s] = l2_normalize(k);
            }
            trial_loss = channel_loss_grad(r, target, prev, trial, cfg.lambdas, true);
            if (!std::isfinite(trial_loss.terms.total)) throw NonFinite("fit: non-finite loss");
            if (trial_loss.terms.total < cur.terms.total) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        prev_ks = ks;
        prev_grads = cur.grads;
        have_prev = true;

        const double improvement = cur.terms.total - trial_loss.terms.total;
        ks = trial;
        cur = std::move(trial_loss);
        history.push_back(cur.terms.total);
        if (improvement <= cfg.tolerance * (1.0 + cur.terms.total)) break;
    }

    double polished = 0.0;
    if (polish_channel(r, target, prev, ks, cfg.lambdas, history.back(), &polished)) {
        history.push_back(polished);
    }
    return history;
}

}  // namespace

MotionKernelSet MotionKernelSet::identity(int channels) {
    MotionKernelSet ks;
    ks.channels = channels;
    ks.per_channel.resize(channels);
    for (int c = 0; c < channels; ++c) {
        for (int s = 0; s < kNumScales; ++s) {
            ks.per_channel[c][s] = make_impulse_kernel(kKernelSizes[s], 0, 0);
        }
    }
    return ks;
}

Kernel make_impulse_kernel(int n, int dx, int dy) {
    const int h = (n - 1) / 2;
    if (std::abs(dx) > h || std::abs(dy) > h) {
        throw OutOfRing("make_impulse_kernel: offset exceeds kernel extent");
    }
    Kernel k(n);
    k.at(dx, dy) = 1.0;
    return k;
}

FeatureTensor propagate_residual(const FeatureTensor& r_t, const MotionKernelSet& ks) {
    if (ks.channels != r_t.channels) {
        throw ShapeMismatch("propagate_residual: channel counts differ");
    }
    FeatureTensor out(r_t.channels, r_t.width, r_t.height);
    Plane tmp(r_t.width, r_t.height);
    for (int c = 0; c < r_t.channels; ++c) {
        auto dst = out.channel(c);
        for (const Kernel& k : ks.per_channel[c]) {
            convolve_plane(r_t.channel(c), r_t.width, r_t.height, k, tmp.values);
            for (std::size_t i = 0; i < tmp.values.size(); ++i) dst[i] += tmp.values[i];
        }
        const double inv_n = 1.0 / static_cast<double>(kNumScales);
        for (auto& v : dst) v *= inv_n;
    }
    return out;
}

LossResult loss_total(const std::vector<FeatureTensor>& window,
                      const FeatureTensor& target,
                      const FeatureTensor& prev_feature,
                      const MotionKernelSet& ks,
                      const std::array<double, 4>& lambdas) {
    validate_fit_inputs(window, target, prev_feature);
    if (ks.channels != target.channels) throw ShapeMismatch("loss_total: channel counts differ");

    LossResult out;
    out.grads.resize(ks.channels);
    const FeatureTensor& r = window.back();
    for (int c = 0; c < ks.channels; ++c) {
        ChannelLoss cl = channel_loss_grad(r.plane(c), target.plane(c), prev_feature.plane(c),
                                           ks.per_channel[c], lambdas, true);
        out.value.l2_res += cl.terms.l2_res;
        out.value.l2_feat += cl.terms.l2_feat;
        out.value.gdl_res += cl.terms.gdl_res;
        out.value.gdl_feat += cl.terms.gdl_feat;
        out.value.total += cl.terms.total;
        out.grads[c] = std::move(cl.grads);
    }
    return out;
}

FitResult fit_kernels_traced(const std::vector<FeatureTensor>& window,
                             const FeatureTensor& target,
                             const FeatureTensor& prev_feature,
                             const FitConfig& cfg) {
    validate_fit_inputs(window, target, prev_feature);
    if (cfg.window < 1) throw ConfigError("fit: window must be >= 1");
    bool any_lambda = false;
    for (double l : cfg.lambdas) {
        if (l < 0.0) throw ConfigError("fit: negative lambda");
        if (l > 0.0) any_lambda = true;
    }
    if (!any_lambda) throw ConfigError("fit: all lambdas zero");

    const int C = target.channels;
    FitResult result;
    result.kernels = MotionKernelSet::identity(C);
    result.loss_history.resize(C);

    const FeatureTensor& r = window.back();
    parallel_for(static_cast<std::size_t>(C), [&](std::size_t c) {
        const Plane rp = r.plane(static_cast<int>(c));
        const Plane tp = target.plane(static_cast<int>(c));
        const Plane pp = prev_feature.plane(static_cast<int>(c));
        result.loss_history[c] = fit_channel(rp, tp, pp, result.kernels.per_channel[c], cfg);
    });
    return result;
}

MotionKernelSet fit_kernels(const std::vector<FeatureTensor>& window,
                            const FeatureTensor& target,
                            const FeatureTensor& prev_feature,
                            const FitConfig& cfg) {
    return fit_kernels_traced(window, target, prev_feature, cfg).kernels;
}

MotionKernelSet fit_at_anchor(const std::vector<FeatureTensor>& feats,
                              const std::vector<FeatureTensor>& resids,
                              const FitConfig& cfg) {
    // Newest transition: resids.back() spans feats[a-1] -> feats[a]. The
    // fitting window holds up to cfg.window residuals strictly before it;
    // with a minimal history the lone residual doubles as its own window,
    // which fits identity kernels.
    const std::size_t a = feats.size() - 1;
    std::vector<FeatureTensor> window;
    if (resids.size() >= 2) {
        const std::size_t end = resids.size() - 1;  // exclude the newest residual
        const std::size_t begin = end > static_cast<std::size_t>(cfg.window)
                                      ? end - static_cast<std::size_t>(cfg.window)
                                      : 0;
        window.assign(resids.begin() + begin, resids.begin() + end);
    } else {
        window.assign(resids.begin(), resids.end());
    }
    return fit_kernels(window, feats[a], feats[a - 1], cfg);
}

RolloutResult rollout(const FeatureSequence& observed, int horizon, const FitConfig& cfg) {
    if (static_cast<int>(observed.size()) < cfg.window + 1) {
        throw TooShort("rollout: need at least window+1 observed frames");
    }
    for (const auto& f : observed.frames) ensure_finite(f, "rollout input");

    RolloutResult out;
    if (horizon <= 0) return out;

    std::vector<FeatureTensor> feats = observed.frames;
    std::vector<FeatureTensor> resids = compute_residuals(observed).residuals;

    out.residuals.reserve(horizon);
    out.features.reserve(horizon);
    out.kernels.reserve(horizon);
    for (int step = 0; step < horizon; ++step) {
        MotionKernelSet ks = fit_at_anchor(feats, resids, cfg);
        FeatureTensor r_hat = propagate_residual(resids.back(), ks);
        ensure_finite(r_hat, "rollout residual");
        FeatureTensor next = reconstruct(feats.back(), r_hat);
        ensure_finite(next, "rollout feature");

        resids.push_back(r_hat);
        feats.push_back(next);
        out.residuals.push_back(std::move(r_hat));
        out.features.push_back(feats.back());
        out.kernels.push_back(std::move(ks));
    }
    return out;
}

}  // namespace residprop::motion
