#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "residprop/tensor.hpp"

namespace residprop::motion {

// Kernel scales used for every channel.
inline constexpr std::array<int, 3> kKernelSizes{3, 5, 7};
inline constexpr int kNumScales = 3;

// One l2-normalized kernel per (channel, scale) pair.
struct MotionKernelSet {
    int channels = 0;
    std::vector<std::array<Kernel, kNumScales>> per_channel;

    static MotionKernelSet identity(int channels);
};

struct FitConfig {
    int window = 3;                                   // residuals per fitting window
    std::array<double, 4> lambdas{1.0, 1.0, 5.0, 5.0};  // l2_res : l2_feat : gdl_res : gdl_feat
    double step_size = 0.5;                           // initial descent step
    int max_iterations = 200;
    double tolerance = 1e-12;                         // relative loss improvement cutoff
    std::uint64_t seed = 0;
};

struct RolloutResult {
    std::vector<FeatureTensor> residuals;   // predicted residuals, one per step
    std::vector<FeatureTensor> features;    // predicted features, one per step
    std::vector<MotionKernelSet> kernels;   // kernels fitted at each step
};

// Unit impulse at centered offset (dx, dy). Throws OutOfRing when the offset
// exceeds the kernel extent.
Kernel make_impulse_kernel(int n, int dx, int dy);

// Per channel: average of the channel's kernels convolved with the residual.
FeatureTensor propagate_residual(const FeatureTensor& r_t, const MotionKernelSet& ks);

struct LossBreakdown {
    double total = 0.0;
    double l2_res = 0.0;
    double l2_feat = 0.0;
    double gdl_res = 0.0;
    double gdl_feat = 0.0;
};

struct LossResult {
    LossBreakdown value;
    // Same layout as MotionKernelSet::per_channel; Kernel reused as a plain
    // weight grid holding d(total)/d(weight).
    std::vector<std::array<Kernel, kNumScales>> grads;
};

// Weighted single-step objective. The prediction is propagate_residual
// applied to window.back(); the predicted feature is prev_feature plus that
// prediction, scored against target.
LossResult loss_total(const std::vector<FeatureTensor>& window,
                      const FeatureTensor& target,
                      const FeatureTensor& prev_feature,
                      const MotionKernelSet& ks,
                      const std::array<double, 4>& lambdas);

struct FitResult {
    MotionKernelSet kernels;
    // Accepted loss values per descent iteration, one history per channel
    // (index 0 is the loss at the center-impulse initialization).
    std::vector<std::vector<double>> loss_history;
};

// Gradient descent from a center-impulse initialization with backtracking
// line search; every iterate is re-normalized to unit l2 norm. Channels are
// fitted independently (and possibly in parallel) with identical results at
// any thread count.
FitResult fit_kernels_traced(const std::vector<FeatureTensor>& window,
                             const FeatureTensor& target,
                             const FeatureTensor& prev_feature,
                             const FitConfig& cfg);

MotionKernelSet fit_kernels(const std::vector<FeatureTensor>& window,
                            const FeatureTensor& target,
                            const FeatureTensor& prev_feature,
                            const FitConfig& cfg);

// Recursive forecast: at each step kernels are refitted on the most recent
// transition in the running history, the newest residual is propagated one
// step, and the feature is reconstructed. Once observations are exhausted
// the history (and so the fitting window) slides over predicted values.
RolloutResult rollout(const FeatureSequence& observed, int horizon, const FitConfig& cfg);

// Internal step shared with the filtered rollout: fits kernels against the
// newest transition of (feats, resids). resids[i] spans feats[i] -> feats[i+1].
MotionKernelSet fit_at_anchor(const std::vector<FeatureTensor>& feats,
                              const std::vector<FeatureTensor>& resids,
                              const FitConfig& cfg);

}  // namespace residprop::motion
