#pragma once

#include <string>
#include <vector>

#include "residprop/flow.hpp"
#include "residprop/kalman.hpp"
#include "residprop/motion.hpp"
#include "residprop/synth.hpp"
#include "residprop/tensor.hpp"

namespace residprop::recognize {

enum class Mode { Baseline, Rollout, KF, KF2 };

std::string mode_name(Mode m);
Mode mode_from_name(const std::string& name);

// Sequence descriptor: the frames are divided into kChunks equal temporal
// chunks; each chunk contributes, per channel, the mean feature value and
// the mean |residual| over the chunk.
inline constexpr int kDescriptorChunks = 5;
std::vector<double> descriptor(const FeatureSequence& seq);

// Nearest-centroid classifier over sequence descriptors.
struct ClassifierModel {
    std::vector<std::string> labels;                 // one per class, by class index
    std::vector<std::vector<double>> centroids;      // parallel to labels
};

// Centroids are mean descriptors over the train split. Throws EmptyClass
// when a class has no training sequence.
ClassifierModel train_classifier(const synth::LoadedDataset& data);

// Nearest centroid by Euclidean distance; ties go to the lowest class index.
int classify(const ClassifierModel& model, const FeatureSequence& seq);

struct EvalConfig {
    motion::FitConfig fit;
    kalman::GainModel kf_model = kalman::GainModel::zeros(kalman::GainVariant::KF);
    kalman::GainModel kf2_model = kalman::GainModel::zeros(kalman::GainVariant::KF2);
    flow::FlowConfig flow;
    double match_g = 0.2;  // observation ratio for the kernel-match report
};

// Frames fed to the classifier at observation ratio g: the observed prefix
// alone for Baseline, and observed frames followed by predicted features up
// to the full length for the propagating modes.
FeatureSequence sequence_for_classification(const FeatureSequence& seq, double g, Mode mode,
                                            const EvalConfig& cfg);

struct AccuracyRow {
    Mode mode;
    double g = 0.0;
    double accuracy = 0.0;
};

std::vector<AccuracyRow> early_accuracy_curve(const synth::LoadedDataset& data,
                                              const std::vector<double>& g_list, Mode mode,
                                              const EvalConfig& cfg);

struct ClassMse {
    std::string label;
    double mse = 0.0;
};

// Mean squared error between propagated and true features over the frames
// past the observed span, averaged per class.
std::vector<ClassMse> propagation_mse_by_class(const synth::LoadedDataset& data, Mode mode,
                                               const EvalConfig& cfg, double g);

struct MseRow {
    Mode mode;
    double g = 0.0;
    std::string label;
    double mse = 0.0;
};

struct GainRow {
    Mode mode;
    double g = 0.0;
    int sequence = 0;  // index within the test split
    int frame = 0;     // 0-based corrected frame
    double mean_gain = 0.0;
    double update_norm = 0.0;
};

struct MatchRow {
    int size = 0;     // kernel side
    int horizon = 0;  // 1-based prediction step
    int count = 0;    // scores aggregated (sequences x channels)
    flow::MatchStats stats;
};

struct EvalReport {
    std::vector<AccuracyRow> accuracy;
    std::vector<MseRow> mse;
    std::vector<GainRow> gain_trace;
    std::vector<MatchRow> kernel_match;
};

// One pass over the test split: accuracy and per-class MSE for every
// (mode, g), gain traces for the filtering modes, and fitted-vs-flow kernel
// match statistics at cfg.match_g.
EvalReport run_evaluation(const synth::LoadedDataset& data, const std::vector<Mode>& modes,
                          const std::vector<double>& g_list, const EvalConfig& cfg);

// Kernel-match statistics per (size, horizon) on the test split at
// observation ratio g, aggregated over sequences and channels.
std::vector<MatchRow> kernel_match_report(const synth::LoadedDataset& data, double g,
                                          const EvalConfig& cfg);

void write_accuracy_csv(const std::string& path, const std::vector<AccuracyRow>& rows);
void write_mse_csv(const std::string& path, const std::vector<MseRow>& rows);
void write_gain_csv(const std::string& path, const std::vector<GainRow>& rows);
void write_match_csv(const std::string& path, const std::vector<MatchRow>& rows);
void write_accuracy_svg(const std::string& path, const std::vector<AccuracyRow>& rows);

}  // namespace residprop::recognize
