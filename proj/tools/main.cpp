// residprop command-line driver: dataset generation, evaluation runs,
// per-step inspection, kernel-match reports, and flow exports.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "residprop/errors.hpp"
#include "residprop/flow.hpp"
#include "residprop/kalman.hpp"
#include "residprop/motion.hpp"
#include "residprop/recognize.hpp"
#include "residprop/synth.hpp"

namespace rp = residprop;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

struct GainSettings {
    int stat_window = 3;
    std::string kf_model_path;
    std::string kf2_model_path;
    bool fine_tune = true;
    double alpha = 1.0;
    double beta = 5.0;
    int epochs = 30;
    double step_size = 0.1;
};

struct RunConfig {
    std::string dataset;
    std::string output;
    std::vector<rp::recognize::Mode> modes = {rp::recognize::Mode::Baseline,
                                              rp::recognize::Mode::Rollout,
                                              rp::recognize::Mode::KF2};
    std::vector<double> g_grid = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    rp::motion::FitConfig fit;
    GainSettings gain;
    rp::flow::FlowConfig flow;
    bool svg = true;
    double match_g = 0.2;
    std::uint64_t seed = 0;
};

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* context) {
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* key : allowed) {
            if (item.key() == key) {
                ok = true;
                break;
            }
        }
        if (!ok) throw rp::ConfigError(std::string(context) + ": unknown key '" + item.key() + "'");
    }
}

void validate_run_config(const RunConfig& c) {
    if (c.fit.window < 1) throw rp::ConfigError("fit.window must be >= 1");
    if (c.fit.max_iterations < 1) throw rp::ConfigError("fit.max_iterations must be >= 1");
    if (c.fit.step_size <= 0.0) throw rp::ConfigError("fit.step_size must be > 0");
    if (c.fit.tolerance < 0.0) throw rp::ConfigError("fit.tolerance must be >= 0");
    bool any = false;
    for (double l : c.fit.lambdas) {
        if (l < 0.0) throw rp::ConfigError("fit.lambdas must be nonnegative");
        if (l > 0.0) any = true;
    }
    if (!any) throw rp::ConfigError("fit.lambdas must not be all zero");
    for (double g : c.g_grid) {
        if (g <= 0.0 || g > 1.0) throw rp::ConfigError("g values must be in (0, 1]");
    }
    if (c.g_grid.empty()) throw rp::ConfigError("g grid must not be empty");
    if (c.match_g <= 0.0 || c.match_g > 1.0) throw rp::ConfigError("match_g must be in (0, 1]");
    if (c.flow.radius < 1) throw rp::ConfigError("flow.radius must be >= 1");
    if (c.flow.patch < 1 || c.flow.patch % 2 == 0) throw rp::ConfigError("flow.patch must be odd");
    if (c.flow.sigma < 0.0) throw rp::ConfigError("flow.sigma must be >= 0");
    if (c.gain.stat_window < 1 || c.gain.stat_window % 2 == 0) {
        throw rp::ConfigError("gain.window must be odd and >= 1");
    }
    if (c.gain.alpha < 0.0 || c.gain.beta < 0.0 || (c.gain.alpha == 0.0 && c.gain.beta == 0.0)) {
        throw rp::ConfigError("gain.fine_tune alpha/beta must be nonnegative, not both zero");
    }
    if (c.gain.epochs < 0) throw rp::ConfigError("gain.fine_tune.epochs must be >= 0");
    if (c.gain.step_size <= 0.0) throw rp::ConfigError("gain.fine_tune.step_size must be > 0");
}

void load_run_config_file(const std::string& path, RunConfig& c) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw rp::IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw rp::ConfigError(std::string("config: ") + e.what());
    }
    check_keys(j, {"dataset", "output", "modes", "g_grid", "seed", "fit", "gain", "flow", "reports"},
               "config");
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("modes")) {
        c.modes.clear();
        for (const auto& m : j["modes"]) {
            c.modes.push_back(rp::recognize::mode_from_name(m.get<std::string>()));
        }
    }
    if (j.contains("g_grid")) c.g_grid = j["g_grid"].get<std::vector<double>>();
    if (j.contains("fit")) {
        const auto& jf = j["fit"];
        check_keys(jf, {"window", "lambdas", "step_size", "max_iterations", "tolerance"}, "fit");
        if (jf.contains("window")) c.fit.window = jf["window"].get<int>();
        if (jf.contains("lambdas")) {
            const auto l = jf["lambdas"].get<std::vector<double>>();
            if (l.size() != 4) throw rp::ConfigError("fit.lambdas needs exactly 4 entries");
            std::copy(l.begin(), l.end(), c.fit.lambdas.begin());
        }
        if (jf.contains("step_size")) c.fit.step_size = jf["step_size"].get<double>();
        if (jf.contains("max_iterations")) c.fit.max_iterations = jf["max_iterations"].get<int>();
        if (jf.contains("tolerance")) c.fit.tolerance = jf["tolerance"].get<double>();
    }
    if (j.contains("gain")) {
        const auto& jg = j["gain"];
        check_keys(jg, {"window", "kf_model", "kf2_model", "fine_tune"}, "gain");
        if (jg.contains("window")) c.gain.stat_window = jg["window"].get<int>();
        if (jg.contains("kf_model")) c.gain.kf_model_path = jg["kf_model"].get<std::string>();
        if (jg.contains("kf2_model")) c.gain.kf2_model_path = jg["kf2_model"].get<std::string>();
        if (jg.contains("fine_tune")) {
            const auto& jt = jg["fine_tune"];
            check_keys(jt, {"enabled", "alpha", "beta", "epochs", "step_size"}, "gain.fine_tune");
            if (jt.contains("enabled")) c.gain.fine_tune = jt["enabled"].get<bool>();
            if (jt.contains("alpha")) c.gain.alpha = jt["alpha"].get<double>();
            if (jt.contains("beta")) c.gain.beta = jt["beta"].get<double>();
            if (jt.contains("epochs")) c.gain.epochs = jt["epochs"].get<int>();
            if (jt.contains("step_size")) c.gain.step_size = jt["step_size"].get<double>();
        }
    }
    if (j.contains("flow")) {
        const auto& jl = j["flow"];
        check_keys(jl, {"radius", "patch", "sigma"}, "flow");
        if (jl.contains("radius")) c.flow.radius = jl["radius"].get<int>();
        if (jl.contains("patch")) c.flow.patch = jl["patch"].get<int>();
        if (jl.contains("sigma")) c.flow.sigma = jl["sigma"].get<double>();
    }
    if (j.contains("reports")) {
        const auto& jr = j["reports"];
        check_keys(jr, {"svg", "match_g"}, "reports");
        if (jr.contains("svg")) c.svg = jr["svg"].get<bool>();
        if (jr.contains("match_g")) c.match_g = jr["match_g"].get<double>();
    }
}

std::vector<rp::recognize::Mode> parse_modes(const std::string& csv) {
    std::vector<rp::recognize::Mode> modes;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) modes.push_back(rp::recognize::mode_from_name(item));
    }
    if (modes.empty()) throw rp::ConfigError("empty mode list");
    return modes;
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

void write_kernel_csv(const std::string& path, const rp::Kernel& k) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw rp::IoError("cannot write " + path);
    for (int row = 0; row < k.size; ++row) {
        for (int col = 0; col < k.size; ++col) {
            if (col) f << ',';
            f << fmt(k.weights[static_cast<std::size_t>(row) * k.size + col]);
        }
        f << '\n';
    }
}

void write_plane_csv(const std::string& path, const rp::Plane& p) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw rp::IoError("cannot write " + path);
    for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
            if (x) f << ',';
            f << fmt(p.at(x, y));
        }
        f << '\n';
    }
}

void write_flow_csv(const std::string& path, const rp::flow::FlowField& field) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw rp::IoError("cannot write " + path);
    f << "x,y,u,v\n";
    for (int y = 0; y < field.height; ++y) {
        for (int x = 0; x < field.width; ++x) {
            f << x << ',' << y << ',' << fmt(field.u.at(x, y)) << ',' << fmt(field.v.at(x, y))
              << '\n';
        }
    }
}

rp::kalman::GainModel resolve_model(rp::kalman::GainVariant variant, const GainSettings& gain) {
    const std::string& path =
        variant == rp::kalman::GainVariant::KF ? gain.kf_model_path : gain.kf2_model_path;
    if (!path.empty()) return rp::kalman::load_gain_model(path);
    return rp::kalman::GainModel::zeros(variant, gain.stat_window);
}

int cmd_gen(const std::string& manifest_path, const std::string& out_dir, bool has_seed,
            std::uint64_t seed) {
    rp::synth::DatasetManifest manifest = rp::synth::load_manifest(manifest_path);
    if (has_seed) manifest.master_seed = seed;
    const auto entries = rp::synth::generate_dataset(manifest, out_dir);
    int train = 0;
    for (const auto& e : entries) train += e.train ? 1 : 0;
    std::cout << "wrote " << entries.size() << " sequences (" << train << " train, "
              << entries.size() - train << " test) to " << out_dir << "\n";
    return 0;
}

int cmd_run(const RunConfig& cfg) {
    validate_run_config(cfg);
    if (cfg.dataset.empty() || cfg.output.empty()) {
        throw rp::ConfigError("run: dataset and output directories are required");
    }
    rp::synth::LoadedDataset data = rp::synth::load_dataset(cfg.dataset);
    std::error_code ec;
    fs::create_directories(cfg.output, ec);
    if (ec) throw rp::IoError("cannot create " + cfg.output);

    rp::recognize::EvalConfig eval;
    eval.fit = cfg.fit;
    eval.fit.seed = cfg.seed;
    eval.flow = cfg.flow;
    eval.match_g = cfg.match_g;

    bool wants_kf = false, wants_kf2 = false;
    for (auto m : cfg.modes) {
        wants_kf |= m == rp::recognize::Mode::KF;
        wants_kf2 |= m == rp::recognize::Mode::KF2;
    }
    std::vector<rp::FeatureSequence> train_seqs;
    if ((wants_kf || wants_kf2) && cfg.gain.fine_tune) {
        for (std::size_t i = 0; i < data.entries.size(); ++i) {
            if (data.entries[i].train) train_seqs.push_back(data.sequences[i]);
        }
    }
    auto prepare = [&](rp::kalman::GainVariant variant) {
        rp::kalman::GainModel model = resolve_model(variant, cfg.gain);
        if (cfg.gain.fine_tune && cfg.gain.epochs > 0 && !train_seqs.empty()) {
            rp::kalman::FineTuneConfig ft;
            ft.max_epochs = cfg.gain.epochs;
            ft.step_size = cfg.gain.step_size;
            model = rp::kalman::fine_tune(model, train_seqs, cfg.gain.alpha, cfg.gain.beta,
                                          eval.fit, ft);
        }
        rp::kalman::save_gain_model(
            (fs::path(cfg.output) / ("gain_" + rp::kalman::variant_name(variant) + ".json"))
                .string(),
            model);
        return model;
    };
    if (wants_kf) eval.kf_model = prepare(rp::kalman::GainVariant::KF);
    if (wants_kf2) eval.kf2_model = prepare(rp::kalman::GainVariant::KF2);

    rp::recognize::EvalReport report =
        rp::recognize::run_evaluation(data, cfg.modes, cfg.g_grid, eval);

    rp::recognize::write_accuracy_csv((fs::path(cfg.output) / "accuracy.csv").string(),
                                      report.accuracy);
    rp::recognize::write_mse_csv((fs::path(cfg.output) / "mse_by_class.csv").string(), report.mse);
    rp::recognize::write_gain_csv((fs::path(cfg.output) / "gain_trace.csv").string(),
                                  report.gain_trace);
    rp::recognize::write_match_csv((fs::path(cfg.output) / "kernel_match.csv").string(),
                                   report.kernel_match);
    if (cfg.svg) {
        rp::recognize::write_accuracy_svg((fs::path(cfg.output) / "accuracy.svg").string(),
                                          report.accuracy);
    }
    std::cout << "evaluated " << cfg.modes.size() << " mode(s) over " << cfg.g_grid.size()
              << " observation ratio(s); reports in " << cfg.output << "\n";
    return 0;
}

int cmd_inspect(const std::string& seq_path, int step, double g, const std::string& variant,
                const std::string& model_path, const std::string& out_dir,
                const rp::motion::FitConfig& fit, const rp::flow::FlowConfig& flow_cfg) {
    rp::FeatureSequence seq = rp::synth::load_sequence(seq_path);
    rp::kalman::GainModel model;
    if (!model_path.empty()) {
        model = rp::kalman::load_gain_model(model_path);
    } else {
        model = rp::kalman::GainModel::zeros(rp::kalman::variant_from_name(variant));
    }
    rp::kalman::FilteredRollout fr = rp::kalman::filtered_rollout(seq, g, model, fit);

    const int total_steps = static_cast<int>(fr.rollout.features.size());
    if (step < 1 || step > total_steps) {
        throw rp::OutOfRange("inspect: step " + std::to_string(step) + " outside [1, " +
                             std::to_string(total_steps) + "]");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw rp::IoError("cannot create " + out_dir);

    const rp::motion::MotionKernelSet& ks = fr.rollout.kernels[step - 1];
    const int frame = fr.init_frames + step - 1;  // 0-based frame this step predicted

    std::ofstream mf(fs::path(out_dir) / "match.csv", std::ios::binary);
    if (!mf) throw rp::IoError("cannot write match.csv");
    mf << "channel,size,score\n";
    for (int c = 0; c < ks.channels; ++c) {
        rp::flow::FlowField field = rp::flow::estimate_flow(
            seq[frame - 1].plane(c), seq[frame].plane(c), flow_cfg.radius, flow_cfg.patch);
        const std::array<rp::Kernel, 3> ofk = rp::flow::flow_to_kernels(field, flow_cfg.sigma);
        for (int s = 0; s < rp::motion::kNumScales; ++s) {
            const int n = rp::motion::kKernelSizes[s];
            write_kernel_csv((fs::path(out_dir) / ("kernel_fit_c" + std::to_string(c) + "_n" +
                                                   std::to_string(n) + ".csv"))
                                 .string(),
                             ks.per_channel[c][s]);
            write_kernel_csv((fs::path(out_dir) / ("kernel_flow_c" + std::to_string(c) + "_n" +
                                                   std::to_string(n) + ".csv"))
                                 .string(),
                             ofk[s]);
            mf << c << ',' << n << ','
               << fmt(rp::flow::kernel_match(ks.per_channel[c][s], ofk[s])) << '\n';
        }
    }

    for (std::size_t i = 0; i < fr.trace.frames.size(); ++i) {
        if (fr.trace.frames[i] == frame) {
            write_plane_csv(
                (fs::path(out_dir) / ("gain_step" + std::to_string(step) + ".csv")).string(),
                fr.trace.gains[i]);
            break;
        }
    }
    std::cout << "inspect: step " << step << " (frame " << frame + 1 << ") written to " << out_dir
              << "\n";
    return 0;
}

int cmd_match(const std::string& data_dir, const std::string& seq_path, double g,
              const std::string& out_path, const rp::motion::FitConfig& fit,
              const rp::flow::FlowConfig& flow_cfg) {
    rp::recognize::EvalConfig eval;
    eval.fit = fit;
    eval.flow = flow_cfg;

    rp::synth::LoadedDataset data;
    if (!data_dir.empty()) {
        data = rp::synth::load_dataset(data_dir);
    } else if (!seq_path.empty()) {
        rp::synth::DatasetEntry e;
        e.file = seq_path;
        e.label = "seq";
        e.train = false;
        data.entries.push_back(e);
        data.sequences.push_back(rp::synth::load_sequence(seq_path));
    } else {
        throw rp::ConfigError("match: provide --data or --seq");
    }
    const auto rows = rp::recognize::kernel_match_report(data, g, eval);
    rp::recognize::write_match_csv(out_path, rows);
    std::cout << "match: " << rows.size() << " (size, horizon) rows written to " << out_path
              << "\n";
    return 0;
}

int cmd_flow(const std::string& seq_path, int frame, int channel, const std::string& out_dir,
             const rp::flow::FlowConfig& flow_cfg) {
    rp::FeatureSequence seq = rp::synth::load_sequence(seq_path);
    const int T = static_cast<int>(seq.size());
    if (frame < 1 || frame >= T) {
        throw rp::OutOfRange("flow: frame must be in [1, " + std::to_string(T - 1) + "]");
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw rp::IoError("cannot create " + out_dir);

    const int C = seq.frames.front().channels;
    if (channel >= C) throw rp::OutOfRange("flow: channel out of range");
    const int c0 = channel < 0 ? 0 : channel;
    const int c1 = channel < 0 ? C - 1 : channel;
    for (int c = c0; c <= c1; ++c) {
        rp::flow::FlowField field = rp::flow::estimate_flow(
            seq[frame - 1].plane(c), seq[frame].plane(c), flow_cfg.radius, flow_cfg.patch);
        write_flow_csv((fs::path(out_dir) / ("flow_c" + std::to_string(c) + ".csv")).string(),
                       field);
        const std::array<rp::Kernel, 3> ofk = rp::flow::flow_to_kernels(field, flow_cfg.sigma);
        for (int s = 0; s < 3; ++s) {
            write_kernel_csv((fs::path(out_dir) / ("kernel_flow_c" + std::to_string(c) + "_n" +
                                                   std::to_string(ofk[s].size) + ".csv"))
                                 .string(),
                             ofk[s]);
        }
    }
    std::cout << "flow: transition " << frame << "->" << frame + 1 << " written to " << out_dir
              << "\n";
    return 0;
}

void add_fit_flags(CLI::App* app, rp::motion::FitConfig& fit, std::string& lambdas_csv) {
    app->add_option("--window", fit.window, "fitting window (residual count)");
    app->add_option("--max-iter", fit.max_iterations, "max descent iterations per fit");
    app->add_option("--step-size", fit.step_size, "initial descent step");
    app->add_option("--tol", fit.tolerance, "relative improvement cutoff");
    app->add_option("--lambdas", lambdas_csv, "loss weights w1,w2,w3,w4");
}

void apply_lambdas(const std::string& csv, rp::motion::FitConfig& fit) {
    if (csv.empty()) return;
    const auto l = parse_doubles(csv);
    if (l.size() != 4) throw rp::ConfigError("--lambdas needs exactly 4 values");
    std::copy(l.begin(), l.end(), fit.lambdas.begin());
}

void add_flow_flags(CLI::App* app, rp::flow::FlowConfig& cfg) {
    app->add_option("--radius", cfg.radius, "block-matching search radius");
    app->add_option("--patch", cfg.patch, "block-matching patch side (odd)");
    app->add_option("--sigma", cfg.sigma, "Gaussian smoothing of flow kernels");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"residual propagation forecasting toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset from a manifest");
    std::string gen_manifest, gen_out;
    std::uint64_t gen_seed = 0;
    gen->add_option("--manifest", gen_manifest, "dataset manifest (JSON)")->required();
    gen->add_option("--out", gen_out, "output directory")->required();
    auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "override the manifest master seed");

    // run
    auto* run = app.add_subcommand("run", "evaluate modes over the observation-ratio grid");
    RunConfig run_cfg;
    std::string run_config_path, run_modes_csv, run_g_csv, run_lambdas_csv;
    bool run_no_svg = false, run_no_fine_tune = false;
    run->add_option("--config", run_config_path, "run configuration (JSON)");
    run->add_option("--data", run_cfg.dataset, "dataset directory");
    run->add_option("--out", run_cfg.output, "report output directory");
    run->add_option("--modes", run_modes_csv, "comma list: baseline,rollout,kf,kf2");
    run->add_option("--g", run_g_csv, "comma list of observation ratios");
    run->add_option("--match-g", run_cfg.match_g, "observation ratio for the kernel-match report");
    run->add_option("--seed", run_cfg.seed, "master seed");
    run->add_option("--fine-tune-epochs", run_cfg.gain.epochs, "gain fine-tune epochs");
    run->add_flag("--no-svg", run_no_svg, "skip SVG emission");
    run->add_flag("--no-fine-tune", run_no_fine_tune, "keep gain parameters as loaded/zero");
    add_fit_flags(run, run_cfg.fit, run_lambdas_csv);

    // inspect
    auto* inspect = app.add_subcommand("inspect", "dump kernels, gain and match scores at a step");
    std::string ins_seq, ins_out, ins_variant = "kf2", ins_model, ins_lambdas_csv;
    int ins_step = 1;
    double ins_g = 1.0;
    rp::motion::FitConfig ins_fit;
    rp::flow::FlowConfig ins_flow;
    inspect->add_option("--seq", ins_seq, "sequence file (FSQ1)")->required();
    inspect->add_option("--step", ins_step, "1-based prediction step")->required();
    inspect->add_option("--out", ins_out, "output directory")->required();
    inspect->add_option("--g", ins_g, "observation ratio for filtering");
    inspect->add_option("--variant", ins_variant, "gain variant when no model file is given");
    inspect->add_option("--gain-model", ins_model, "gain model file (JSON)");
    add_fit_flags(inspect, ins_fit, ins_lambdas_csv);
    add_flow_flags(inspect, ins_flow);

    // match
    auto* match = app.add_subcommand("match", "kernel-match statistics per (size, horizon)");
    std::string match_data, match_seq, match_out = "kernel_match.csv", match_lambdas_csv;
    double match_g = 0.2;
    rp::motion::FitConfig match_fit;
    rp::flow::FlowConfig match_flow;
    match->add_option("--data", match_data, "dataset directory (uses the test split)");
    match->add_option("--seq", match_seq, "single sequence file instead of a dataset");
    match->add_option("--g", match_g, "observation ratio");
    match->add_option("--out", match_out, "output CSV path");
    add_fit_flags(match, match_fit, match_lambdas_csv);
    add_flow_flags(match, match_flow);

    // flow
    auto* flowc = app.add_subcommand("flow", "export a flow field and its kernels as CSV");
    std::string flow_seq, flow_out;
    int flow_frame = 1, flow_channel = -1;
    rp::flow::FlowConfig flow_cfg;
    flowc->add_option("--seq", flow_seq, "sequence file (FSQ1)")->required();
    flowc->add_option("--frame", flow_frame, "1-based frame t of the transition t -> t+1")
        ->required();
    flowc->add_option("--channel", flow_channel, "channel (default: all)");
    flowc->add_option("--out", flow_out, "output directory")->required();
    add_flow_flags(flowc, flow_cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(gen_manifest, gen_out, gen_seed_opt->count() > 0, gen_seed);
        }
        if (run->parsed()) {
            if (!run_config_path.empty()) {
                RunConfig from_file;
                load_run_config_file(run_config_path, from_file);
                // flags given on the command line override file values
                if (run->count("--data") == 0) run_cfg.dataset = from_file.dataset;
                if (run->count("--out") == 0) run_cfg.output = from_file.output;
                if (run->count("--modes") == 0) run_cfg.modes = from_file.modes;
                if (run->count("--g") == 0) run_cfg.g_grid = from_file.g_grid;
                if (run->count("--match-g") == 0) run_cfg.match_g = from_file.match_g;
                if (run->count("--seed") == 0) run_cfg.seed = from_file.seed;
                if (run->count("--window") == 0) run_cfg.fit.window = from_file.fit.window;
                if (run->count("--max-iter") == 0) {
                    run_cfg.fit.max_iterations = from_file.fit.max_iterations;
                }
                if (run->count("--step-size") == 0) run_cfg.fit.step_size = from_file.fit.step_size;
                if (run->count("--tol") == 0) run_cfg.fit.tolerance = from_file.fit.tolerance;
                if (run->count("--lambdas") == 0) run_cfg.fit.lambdas = from_file.fit.lambdas;
                if (run->count("--fine-tune-epochs") == 0) {
                    run_cfg.gain.epochs = from_file.gain.epochs;
                }
                run_cfg.gain.stat_window = from_file.gain.stat_window;
                run_cfg.gain.kf_model_path = from_file.gain.kf_model_path;
                run_cfg.gain.kf2_model_path = from_file.gain.kf2_model_path;
                run_cfg.gain.fine_tune = from_file.gain.fine_tune;
                run_cfg.gain.alpha = from_file.gain.alpha;
                run_cfg.gain.beta = from_file.gain.beta;
                run_cfg.gain.step_size = from_file.gain.step_size;
                run_cfg.flow = from_file.flow;
                run_cfg.svg = from_file.svg;
            }
            if (!run_modes_csv.empty()) run_cfg.modes = parse_modes(run_modes_csv);
            if (!run_g_csv.empty()) run_cfg.g_grid = parse_doubles(run_g_csv);
            apply_lambdas(run_lambdas_csv, run_cfg.fit);
            if (run_no_svg) run_cfg.svg = false;
            if (run_no_fine_tune) run_cfg.gain.fine_tune = false;
            return cmd_run(run_cfg);
        }
        if (inspect->parsed()) {
            apply_lambdas(ins_lambdas_csv, ins_fit);
            return cmd_inspect(ins_seq, ins_step, ins_g, ins_variant, ins_model, ins_out, ins_fit,
                               ins_flow);
        }
        if (match->parsed()) {
            apply_lambdas(match_lambdas_csv, match_fit);
            return cmd_match(match_data, match_seq, match_g, match_out, match_fit, match_flow);
        }
        if (flowc->parsed()) {
            return cmd_flow(flow_seq, flow_frame, flow_channel, flow_out, flow_cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
