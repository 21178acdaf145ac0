#pragma once

#include <string>
#include <utility>
#include <vector>

#include "residprop/motion.hpp"
#include "residprop/tensor.hpp"

namespace residprop::kalman {

enum class GainVariant { KF, KF2 };

// Gain map parameters: a sigmoid over an affine combination of per-pixel
// local statistics. KF2 consumes statistics of the prediction error
// z_prev - dhat_prev (4 params: 3 weights + bias); KF consumes statistics of
// z_prev and dhat_prev separately (7 params: 6 weights + bias).
struct GainModel {
    GainVariant variant = GainVariant::KF2;
    std::vector<double> params;  // affine weights, bias last
    int stat_window = 3;         // side of the pooled-|.| neighborhood

    static int param_count(GainVariant v);
    static GainModel zeros(GainVariant v, int stat_window = 3);
};

std::string variant_name(GainVariant v);
GainVariant variant_from_name(const std::string& name);

// JSON document {"variant": "kf"|"kf2", "params": [...], "window": n}.
std::string gain_model_to_json(const GainModel& m);
GainModel gain_model_from_json(const std::string& text);
void save_gain_model(const std::string& path, const GainModel& m);
GainModel load_gain_model(const std::string& path);

// Per-pixel statistics feeding the affine map: for an input tensor X these
// are (mean of |X| over channels and the stat_window neighborhood,
// channel-mean of X, channel-max of |X|). KF2 computes them on the error
// z_prev - dhat_prev; KF on z_prev and dhat_prev separately.
std::vector<Plane> gain_statistics(const GainModel& m, const FeatureTensor& z_prev,
                                   const FeatureTensor& dhat_prev);

// Gain map with every entry strictly inside (0, 1).
Plane gain(const GainModel& m, const FeatureTensor& z_prev, const FeatureTensor& dhat_prev);

// Posterior = prior + gamma (.) (z - prior), the same gamma applied to every
// channel.
FeatureTensor update(const FeatureTensor& dhat_minus, const FeatureTensor& z, const Plane& gamma);

// Gains and update magnitudes recorded at each corrected step.
struct FilterTrace {
    std::vector<int> frames;         // 0-based frame index of each corrected step
    std::vector<Plane> gains;
    std::vector<double> mean_gain;
    std::vector<double> update_norm;  // l2 norm of gamma (.) (z - prior)
};

struct FilteredRollout {
    motion::RolloutResult rollout;  // estimates from the first predicted frame on
    FilterTrace trace;
    int init_frames = 0;      // history the forecast starts from (window + 1)
    int observed_frames = 0;  // floor(g * T): corrections run through this frame
};

// Starts from the first window+1 frames and propagates every later step;
// while the frame is within the observed span the prediction is corrected
// against the true measurement, afterwards only prediction runs. horizon < 0
// propagates through the end of the sequence; larger horizons keep
// predicting past it.
FilteredRollout filtered_rollout(const FeatureSequence& seq, double g, const GainModel& model,
                                 const motion::FitConfig& fit_cfg, int horizon = -1);

// Single corrected step: posterior loss value and its gradient with respect
// to the gain parameters, holding the prior fixed. stats must come from
// gain_statistics on the same inputs that produced gamma.
struct PosteriorStepLoss {
    double value = 0.0;
    std::vector<double> grad;
};
PosteriorStepLoss posterior_step_loss(const GainModel& m, const std::vector<Plane>& stats,
                                      const FeatureTensor& dhat_minus, const FeatureTensor& z,
                                      double alpha, double beta);

struct FineTuneConfig {
    int max_epochs = 30;
    double step_size = 0.1;
    double tolerance = 1e-10;
    // The posterior objective alone is minimized by a uniform gain of 1, and
    // the bias is its fastest route there. Freezing the bias at the midpoint
    // keeps the gain responsive to the error statistics; set true to train it.
    bool train_bias = false;
};

// Mean posterior loss over every corrected step of every sequence, running
// the full pipeline (kernels refitted from the corrected history) with
// corrections at all steps.
double mean_posterior_loss(const GainModel& m, const std::vector<FeatureSequence>& sequences,
                           double alpha, double beta, const motion::FitConfig& fit_cfg);

// Gradient descent on the gain parameters against the mean posterior loss;
// per-step gradients hold priors fixed while the line search re-evaluates
// the full pipeline, so the returned model never scores worse than the
// input.
GainModel fine_tune(const GainModel& model, const std::vector<FeatureSequence>& sequences,
                    double alpha, double beta, const motion::FitConfig& fit_cfg,
                    const FineTuneConfig& ft = {});

}  // namespace residprop::kalman
