#include "residprop/recognize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "residprop/parallel.hpp"

namespace residprop::recognize {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

int observed_frames(double g, int total) {
    return static_cast<int>(std::floor(g * static_cast<double>(total)));
}

const kalman::GainModel& model_for(Mode mode, const EvalConfig& cfg) {
    return mode == Mode::KF ? cfg.kf_model : cfg.kf2_model;
}

struct ItemEval {
    bool correct = false;
    double mse = 0.0;
    kalman::FilterTrace trace;
};

// Squared-error mean between predicted frames starting at first_frame and
// the truth.
double prediction_mse(const FeatureSequence& truth, const std::vector<FeatureTensor>& predicted,
                      int first_frame) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const std::size_t t = first_frame + i;
        if (t >= truth.size()) break;
        const auto& p = predicted[i].values;
        const auto& z = truth[t].values;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double d = p[j] - z[j];
            sum += d * d;
        }
        count += p.size();
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

ItemEval evaluate_item(const ClassifierModel& model, const FeatureSequence& seq, int true_class,
                       double g, Mode mode, const EvalConfig& cfg) {
    ItemEval out;
    const int T = static_cast<int>(seq.size());
    const int k = observed_frames(g, T);

    if (mode == Mode::Baseline) {
        FeatureSequence obs;
        obs.frames.assign(seq.frames.begin(), seq.frames.begin() + k);
        out.correct = classify(model, obs) == true_class;
        return out;
    }

    FeatureSequence full;
    full.frames.assign(seq.frames.begin(), seq.frames.begin() + k);
    if (mode == Mode::Rollout) {
        motion::RolloutResult roll = motion::rollout(full, T - k, cfg.fit);
        out.mse = prediction_mse(seq, roll.features, k);
        for (auto& f : roll.features) full.frames.push_back(std::move(f));
    } else {
        kalman::FilteredRollout fr = kalman::filtered_rollout(seq, g, model_for(mode, cfg), cfg.fit);
        const int init = fr.init_frames;
        // filtered modes propagate from the init frames, so their error is
        // scored over that whole trajectory
        out.mse = prediction_mse(seq, fr.rollout.features, init);
        for (std::size_t i = k - init; i < fr.rollout.features.size(); ++i) {
            full.frames.push_back(std::move(fr.rollout.features[i]));
        }
        out.trace = std::move(fr.trace);
    }
    out.correct = classify(model, full) == true_class;
    return out;
}

std::vector<std::size_t> test_indices(const synth::LoadedDataset& data) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
        if (!data.entries[i].train) idx.push_back(i);
    }
    return idx;
}

}  // namespace

std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Baseline:
            return "baseline";
        case Mode::Rollout:
            return "rollout";
        case Mode::KF:
            return "kf";
        case Mode::KF2:
            return "kf2";
    }
    return "baseline";
}

Mode mode_from_name(const std::string& name) {
    if (name == "baseline") return Mode::Baseline;
    if (name == "rollout") return Mode::Rollout;
    if (name == "kf") return Mode::KF;
    if (name == "kf2") return Mode::KF2;
    throw ConfigError("unknown mode: " + name);
}

std::vector<double> descriptor(const FeatureSequence& seq) {
    const int T = static_cast<int>(seq.size());
    if (T < 2) throw TooShort("descriptor: need at least 2 frames");
    const FeatureTensor& first = seq.frames.front();
    for (const auto& f : seq.frames) {
        if (!f.same_shape(first)) throw ShapeMismatch("descriptor: frame shapes differ");
    }
    const int C = first.channels;
    const std::size_t plane = first.plane_size();

    // Mean feature value per (chunk, channel).
    std::vector<double> feat_sum(kDescriptorChunks * C, 0.0);
    std::vector<int> feat_count(kDescriptorChunks, 0);
    for (int t = 0; t < T; ++t) {
        const int chunk = (kDescriptorChunks * t) / T;
        ++feat_count[chunk];
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (double v : seq.frames[t].channel(c)) s += v;
            feat_sum[chunk * C + c] += s / static_cast<double>(plane);
        }
    }

    // Mean |residual| per (chunk, channel), chunked over the residual index.
    ResidualSequence res = compute_residuals(seq);
    const int R = static_cast<int>(res.size());
    std::vector<double> res_sum(kDescriptorChunks * C, 0.0);
    std::vector<int> res_count(kDescriptorChunks, 0);
    for (int i = 0; i < R; ++i) {
        const int chunk = (kDescriptorChunks * i) / R;
        ++res_count[chunk];
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (double v : res[i].channel(c)) s += std::fabs(v);
            res_sum[chunk * C + c] += s / static_cast<double>(plane);
        }
    }

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(kDescriptorChunks) * C * 2);
    for (int chunk = 0; chunk < kDescriptorChunks; ++chunk) {
        for (int c = 0; c < C; ++c) {
            out.push_back(feat_count[chunk] ? feat_sum[chunk * C + c] / feat_count[chunk] : 0.0);
            out.push_back(res_count[chunk] ? res_sum[chunk * C + c] / res_count[chunk] : 0.0);
        }
    }
    return out;
}

ClassifierModel train_classifier(const synth::LoadedDataset& data) {
    ClassifierModel model;
    model.labels.reserve(data.manifest.classes.size());
    for (const auto& c : data.manifest.classes) model.labels.push_back(c.label);

    std::vector<std::vector<double>> sums(model.labels.size());
    std::vector<int> counts(model.labels.size(), 0);
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
        if (!data.entries[i].train) continue;
        const std::vector<double> d = descriptor(data.sequences[i]);
        auto& s = sums[data.entries[i].class_index];
        if (s.empty()) s.assign(d.size(), 0.0);
        if (s.size() != d.size()) throw ShapeMismatch("train_classifier: descriptor sizes differ");
        for (std::size_t j = 0; j < d.size(); ++j) s[j] += d[j];
        ++counts[data.entries[i].class_index];
    }
    for (std::size_t c = 0; c < sums.size(); ++c) {
        if (counts[c] == 0) throw EmptyClass("train_classifier: no train sequence for " + model.labels[c]);
        for (double& v : sums[c]) v /= counts[c];
        model.centroids.push_back(std::move(sums[c]));
    }
    return model;
}

int classify(const ClassifierModel& model, const FeatureSequence& seq) {
    const std::vector<double> d = descriptor(seq);
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < model.centroids.size(); ++c) {
        const auto& ctr = model.centroids[c];
        if (ctr.size() != d.size()) throw ShapeMismatch("classify: descriptor size differs");
        double dist = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            const double delta = d[j] - ctr[j];
            dist += delta * delta;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = static_cast<int>(c);
        }
    }
    return best;
}

FeatureSequence sequence_for_classification(const FeatureSequence& seq, double g, Mode mode,
                                            const EvalConfig& cfg) {
    const int T = static_cast<int>(seq.size());
    const int k = observed_frames(g, T);
    FeatureSequence out;
    out.frames.assign(seq.frames.begin(), seq.frames.begin() + k);
    if (mode == Mode::Baseline || k >= T) return out;
    if (mode == Mode::Rollout) {
        motion::RolloutResult roll = motion::rollout(out, T - k, cfg.fit);
        for (auto& f : roll.features) out.frames.push_back(std::move(f));
        return out;
    }
    kalman::FilteredRollout fr = kalman::filtered_rollout(seq, g, model_for(mode, cfg), cfg.fit);
    for (std::size_t i = k - fr.init_frames; i < fr.rollout.features.size(); ++i) {
        out.frames.push_back(fr.rollout.features[i]);
    }
    return out;
}

std::vector<AccuracyRow> early_accuracy_curve(const synth::LoadedDataset& data,
                                              const std::vector<double>& g_list, Mode mode,
                                              const EvalConfig& cfg) {
    EvalReport report = run_evaluation(data, {mode}, g_list, cfg);
    return report.accuracy;
}

std::vector<ClassMse> propagation_mse_by_class(const synth::LoadedDataset& data, Mode mode,
                                               const EvalConfig& cfg, double g) {
    if (mode == Mode::Baseline) throw ConfigError("propagation_mse_by_class: baseline has no propagation");
    EvalReport report = run_evaluation(data, {mode}, {g}, cfg);
    std::vector<ClassMse> out;
    out.reserve(report.mse.size());
    for (const auto& row : report.mse) out.push_back({row.label, row.mse});
    return out;
}

std::vector<MatchRow> kernel_match_report(const synth::LoadedDataset& data, double g,
                                          const EvalConfig& cfg) {
    const std::vector<std::size_t> tests = test_indices(data);
    // scores[size_index][horizon-1] over sequences x channels
    std::vector<std::vector<std::vector<double>>> per_item(tests.size());

    parallel_for(tests.size(), [&](std::size_t ti) {
        const FeatureSequence& seq = data.sequences[tests[ti]];
        const int T = static_cast<int>(seq.size());
        const int k = observed_frames(g, T);
        FeatureSequence obs;
        obs.frames.assign(seq.frames.begin(), seq.frames.begin() + k);
        motion::RolloutResult roll = motion::rollout(obs, T - k, cfg.fit);

        auto& scores = per_item[ti];
        scores.assign(static_cast<std::size_t>(motion::kNumScales) * (T - k), {});
        for (int h = 1; h <= T - k; ++h) {
            const FeatureTensor& a = seq[k + h - 2];
            const FeatureTensor& b = seq[k + h - 1];
            for (int c = 0; c < a.channels; ++c) {
                flow::FlowField field =
                    flow::estimate_flow(a.plane(c), b.plane(c), cfg.flow.radius, cfg.flow.patch);
                const std::array<Kernel, 3> ofk = flow::flow_to_kernels(field, cfg.flow.sigma);
                for (int s = 0; s < motion::kNumScales; ++s) {
                    const double m = flow::kernel_match(roll.kernels[h - 1].per_channel[c][s], ofk[s]);
                    scores[static_cast<std::size_t>(s) * (T - k) + (h - 1)].push_back(m);
                }
            }
        }
    });

    // Merge per-item scores in deterministic order.
    std::map<std::pair<int, int>, std::vector<double>> merged;  // (size, horizon) -> scores
    for (std::size_t ti = 0; ti < tests.size(); ++ti) {
        const auto& scores = per_item[ti];
        if (scores.empty()) continue;
        const std::size_t horizons = scores.size() / motion::kNumScales;
        for (int s = 0; s < motion::kNumScales; ++s) {
            for (std::size_t h = 0; h < horizons; ++h) {
                auto& dst = merged[{motion::kKernelSizes[s], static_cast<int>(h) + 1}];
                const auto& src = scores[static_cast<std::size_t>(s) * horizons + h];
                dst.insert(dst.end(), src.begin(), src.end());
            }
        }
    }

    std::vector<MatchRow> rows;
    for (const auto& [key, scores] : merged) {
        if (scores.empty()) continue;
        MatchRow row;
        row.size = key.first;
        row.horizon = key.second;
        row.count = static_cast<int>(scores.size());
        row.stats = flow::match_statistics(scores);
        rows.push_back(std::move(row));
    }
    return rows;
}

EvalReport run_evaluation(const synth::LoadedDataset& data, const std::vector<Mode>& modes,
                          const std::vector<double>& g_list, const EvalConfig& cfg) {
    const ClassifierModel model = train_classifier(data);
    const std::vector<std::size_t> tests = test_indices(data);
    if (tests.empty()) throw EmptyInput("run_evaluation: empty test split");

    std::vector<double> gs = g_list;
    std::sort(gs.begin(), gs.end());

    EvalReport report;
    for (Mode mode : modes) {
        for (double g : gs) {
            std::vector<ItemEval> evals(tests.size());
            parallel_for(tests.size(), [&](std::size_t i) {
                evals[i] = evaluate_item(model, data.sequences[tests[i]],
                                         data.entries[tests[i]].class_index, g, mode, cfg);
            });

            int correct = 0;
            for (const auto& e : evals) correct += e.correct ? 1 : 0;
            report.accuracy.push_back(
                {mode, g, static_cast<double>(correct) / static_cast<double>(tests.size())});

            if (mode != Mode::Baseline) {
                std::vector<double> mse_sum(model.labels.size(), 0.0);
                std::vector<int> mse_count(model.labels.size(), 0);
                for (std::size_t i = 0; i < tests.size(); ++i) {
                    const int c = data.entries[tests[i]].class_index;
                    mse_sum[c] += evals[i].mse;
                    ++mse_count[c];
                }
                for (std::size_t c = 0; c < model.labels.size(); ++c) {
                    if (mse_count[c] == 0) continue;
                    report.mse.push_back({mode, g, model.labels[c], mse_sum[c] / mse_count[c]});
                }
            }
            if (mode == Mode::KF || mode == Mode::KF2) {
                for (std::size_t i = 0; i < tests.size(); ++i) {
                    const auto& trace = evals[i].trace;
                    for (std::size_t s = 0; s < trace.frames.size(); ++s) {
                        report.gain_trace.push_back({mode, g, static_cast<int>(i), trace.frames[s],
                                                     trace.mean_gain[s], trace.update_norm[s]});
                    }
                }
            }
        }
    }
    report.kernel_match = kernel_match_report(data, cfg.match_g, cfg);
    return report;
}

void write_accuracy_csv(const std::string& path, const std::vector<AccuracyRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "mode,g,accuracy\n";
    for (const auto& r : rows) {
        f << mode_name(r.mode) << ',' << fmt(r.g) << ',' << fmt(r.accuracy) << '\n';
    }
}

void write_mse_csv(const std::string& path, const std::vector<MseRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "mode,g,class,mse\n";
    for (const auto& r : rows) {
        f << mode_name(r.mode) << ',' << fmt(r.g) << ',' << r.label << ',' << fmt(r.mse) << '\n';
    }
}

void write_gain_csv(const std::string& path, const std::vector<GainRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "mode,g,sequence,frame,mean_gain,update_norm\n";
    for (const auto& r : rows) {
        f << mode_name(r.mode) << ',' << fmt(r.g) << ',' << r.sequence << ',' << r.frame << ','
          << fmt(r.mean_gain) << ',' << fmt(r.update_norm) << '\n';
    }
}

void write_match_csv(const std::string& path, const std::vector<MatchRow>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "size,horizon,count,median,q25,q75,p10,p90\n";
    for (const auto& r : rows) {
        f << r.size << ',' << r.horizon << ',' << r.count << ',' << fmt(r.stats.median) << ','
          << fmt(r.stats.q25) << ',' << fmt(r.stats.q75) << ',' << fmt(r.stats.p10) << ','
          << fmt(r.stats.p90) << '\n';
    }
}

void write_accuracy_svg(const std::string& path, const std::vector<AccuracyRow>& rows) {
    // Fixed-size line chart: accuracy over g, one polyline per mode.
    const double W = 640, H = 420, ml = 60, mr = 20, mt = 20, mb = 50;
    double gmin = 1e9, gmax = -1e9;
    for (const auto& r : rows) {
        gmin = std::min(gmin, r.g);
        gmax = std::max(gmax, r.g);
    }
    if (rows.empty() || gmax <= gmin) {
        gmin = 0.0;
        gmax = 1.0;
    }
    auto sx = [&](double g) { return ml + (g - gmin) / (gmax - gmin) * (W - ml - mr); };
    auto sy = [&](double a) { return H - mb - a * (H - mt - mb); };

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    for (int i = 0; i <= 10; ++i) {
        const double y = sy(i / 10.0);
        f << "<line x1=\"" << ml << "\" y1=\"" << fmt(y) << "\" x2=\"" << W - mr << "\" y2=\""
          << fmt(y) << "\" stroke=\"#dddddd\"/>\n";
        f << "<text x=\"" << ml - 8 << "\" y=\"" << fmt(y + 4)
          << "\" text-anchor=\"end\" font-size=\"12\">" << fmt(i / 10.0) << "</text>\n";
    }
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    const Mode order[] = {Mode::Baseline, Mode::Rollout, Mode::KF, Mode::KF2};
    int li = 0;
    for (Mode mode : order) {
        std::vector<const AccuracyRow*> pts;
        for (const auto& r : rows) {
            if (r.mode == mode) pts.push_back(&r);
        }
        if (pts.empty()) continue;
        f << "<polyline fill=\"none\" stroke=\"" << colors[li % 4] << "\" stroke-width=\"2\" points=\"";
        for (const auto* p : pts) f << fmt(sx(p->g)) << ',' << fmt(sy(p->accuracy)) << ' ';
        f << "\"/>\n";
        f << "<text x=\"" << ml + 10 << "\" y=\"" << mt + 16 * (li + 1) << "\" fill=\""
          << colors[li % 4] << "\" font-size=\"12\">" << mode_name(mode) << "</text>\n";
        ++li;
    }
    f << "<text x=\"" << (W / 2) << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"13\">observation ratio g</text>\n";
    f << "</svg>\n";
}

}  // namespace residprop::recognize
