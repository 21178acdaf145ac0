#include "residprop/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "residprop/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "FSQ1 serialization assumes a little-endian host");

namespace residprop::synth {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'Q', '1'};
constexpr std::uint32_t kFormatVersion = 1;

// Shape sample at integer offset (dx, dy) from the anchor.
double shape_value(const Shape& s, int dx, int dy) {
    switch (s.kind) {
        case ShapeKind::Rect: {
            const double half = s.size / 2.0;
            return (std::abs(dx) <= half && std::abs(dy) <= half) ? s.intensity : 0.0;
        }
        case ShapeKind::Triangle:
            return (dx >= 0 && dy >= 0 && dx + dy <= s.size) ? s.intensity : 0.0;
        case ShapeKind::Blob: {
            const double sigma = s.size / 2.0;
            const double r2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
            return s.intensity * std::exp(-0.5 * r2 / (sigma * sigma));
        }
    }
    return 0.0;
}

int shape_reach(const Shape& s) {
    switch (s.kind) {
        case ShapeKind::Rect:
            return static_cast<int>(std::ceil(s.size / 2.0));
        case ShapeKind::Triangle:
            return static_cast<int>(std::ceil(s.size));
        case ShapeKind::Blob:
            return static_cast<int>(std::ceil(3.0 * s.size / 2.0));
    }
    return 0;
}

void splat(FeatureTensor& frame, const Shape& s, double px, double py, bool bilinear) {
    const int reach = shape_reach(s);
    const double bx = std::floor(px);
    const double by = std::floor(py);
    const double fx = px - bx;
    const double fy = py - by;

    struct Tap {
        int ox, oy;
        double w;
    };
    Tap taps[4];
    int n_taps = 0;
    if (!bilinear || (fx == 0.0 && fy == 0.0)) {
        taps[n_taps++] = {static_cast<int>(std::llround(px)), static_cast<int>(std::llround(py)), 1.0};
    } else {
        const int ix = static_cast<int>(bx);
        const int iy = static_cast<int>(by);
        taps[n_taps++] = {ix, iy, (1.0 - fx) * (1.0 - fy)};
        taps[n_taps++] = {ix + 1, iy, fx * (1.0 - fy)};
        taps[n_taps++] = {ix, iy + 1, (1.0 - fx) * fy};
        taps[n_taps++] = {ix + 1, iy + 1, fx * fy};
    }

    for (int c = 0; c < frame.channels; ++c) {
        if (!s.channels.empty() &&
            std::find(s.channels.begin(), s.channels.end(), c) == s.channels.end()) {
            continue;
        }
        for (int t = 0; t < n_taps; ++t) {
            if (taps[t].w == 0.0) continue;
            for (int dy = -reach; dy <= reach; ++dy) {
                const int y = taps[t].oy + dy;
                if (y < 0 || y >= frame.height) continue;
                for (int dx = -reach; dx <= reach; ++dx) {
                    const int x = taps[t].ox + dx;
                    if (x < 0 || x >= frame.width) continue;
                    const double v = shape_value(s, dx, dy);
                    if (v != 0.0) frame.at(c, x, y) += taps[t].w * v;
                }
            }
        }
    }
}

void validate_scene(const SceneSpec& spec) {
    if (spec.width < 1 || spec.height < 1 || spec.channels < 1) {
        throw BadSpec("scene: canvas and channel counts must be >= 1");
    }
    if (spec.noise_sigma < 0.0) throw BadSpec("scene: noise sigma must be >= 0");
    for (const Shape& s : spec.shapes) {
        if (s.size <= 0.0) throw BadSpec("scene: shape size must be > 0");
        if (s.x < 0.0 || s.x >= spec.width || s.y < 0.0 || s.y >= spec.height) {
            throw BadSpec("scene: shape anchor must start inside the canvas");
        }
        for (int c : s.channels) {
            if (c < 0 || c >= spec.channels) throw BadSpec("scene: channel mask out of range");
        }
    }
    for (const VelocityEvent& e : spec.events) {
        if (e.frame < 1) throw BadSpec("scene: event frame must be >= 1");
    }
}

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
        if (!ok) {
            throw ManifestError(std::string(context) + ": unknown key '" + item.key() + "'");
        }
    }
}

nlohmann::ordered_json scene_to_json(const SceneSpec& s) {
    nlohmann::ordered_json j;
    j["width"] = s.width;
    j["height"] = s.height;
    j["channels"] = s.channels;
    j["noise_sigma"] = s.noise_sigma;
    j["bilinear"] = s.bilinear;
    j["seed"] = s.seed;
    j["shapes"] = nlohmann::ordered_json::array();
    for (const Shape& sh : s.shapes) {
        nlohmann::ordered_json js;
        js["kind"] = shape_kind_name(sh.kind);
        js["size"] = sh.size;
        js["intensity"] = sh.intensity;
        js["position"] = {sh.x, sh.y};
        js["velocity"] = {sh.vx, sh.vy};
        if (!sh.channels.empty()) js["channels"] = sh.channels;
        j["shapes"].push_back(js);
    }
    j["events"] = nlohmann::ordered_json::array();
    for (const VelocityEvent& e : s.events) {
        nlohmann::ordered_json je;
        je["frame"] = e.frame;
        je["velocity"] = {e.vx, e.vy};
        j["events"].push_back(je);
    }
    return j;
}

SceneSpec scene_from_json(const nlohmann::json& j) {
    check_keys(j, {"width", "height", "channels", "noise_sigma", "bilinear", "seed", "shapes",
                   "events"},
               "scene");
    SceneSpec s;
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.channels = j.value("channels", 1);
    s.noise_sigma = j.value("noise_sigma", 0.0);
    s.bilinear = j.value("bilinear", false);
    s.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("shapes")) {
        for (const auto& js : j.at("shapes")) {
            check_keys(js, {"kind", "size", "intensity", "position", "velocity", "channels"},
                       "shape");
            Shape sh;
            sh.kind = shape_kind_from_name(js.at("kind").get<std::string>());
            sh.size = js.at("size").get<double>();
            sh.intensity = js.value("intensity", 1.0);
            const auto pos = js.at("position").get<std::vector<double>>();
            const auto vel = js.value("velocity", std::vector<double>{0.0, 0.0});
            if (pos.size() != 2 || vel.size() != 2) {
                throw ManifestError("shape: position/velocity need exactly 2 entries");
            }
            sh.x = pos[0];
            sh.y = pos[1];
            sh.vx = vel[0];
            sh.vy = vel[1];
            if (js.contains("channels")) sh.channels = js.at("channels").get<std::vector<int>>();
            s.shapes.push_back(std::move(sh));
        }
    }
    if (j.contains("events")) {
        for (const auto& je : j.at("events")) {
            check_keys(je, {"frame", "velocity"}, "event");
            VelocityEvent e;
            e.frame = je.at("frame").get<int>();
            const auto vel = je.at("velocity").get<std::vector<double>>();
            if (vel.size() != 2) throw ManifestError("event: velocity needs exactly 2 entries");
            e.vx = vel[0];
            e.vy = vel[1];
            s.events.push_back(e);
        }
    }
    return s;
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& f, const char* what) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) throw IoError(std::string("truncated header: ") + what);
    return v;
}

}  // namespace

ShapeKind shape_kind_from_name(const std::string& name) {
    if (name == "triangle") return ShapeKind::Triangle;
    if (name == "rect") return ShapeKind::Rect;
    if (name == "blob") return ShapeKind::Blob;
    throw ManifestError("unknown shape kind: " + name);
}

std::string shape_kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Triangle:
            return "triangle";
        case ShapeKind::Rect:
            return "rect";
        case ShapeKind::Blob:
            return "blob";
    }
    return "rect";
}

FeatureSequence generate_sequence(const SceneSpec& spec, int frames) {
    if (frames < 2) throw BadSpec("generate_sequence: need at least 2 frames");
    validate_scene(spec);

    std::vector<VelocityEvent> events = spec.events;
    std::stable_sort(events.begin(), events.end(),
                     [](const VelocityEvent& a, const VelocityEvent& b) { return a.frame < b.frame; });

    SplitMix64 rng(spec.seed);
    FeatureSequence seq;
    seq.frames.reserve(frames);

    std::vector<double> px(spec.shapes.size()), py(spec.shapes.size());
    std::vector<double> vx(spec.shapes.size()), vy(spec.shapes.size());
    for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
        px[i] = spec.shapes[i].x;
        py[i] = spec.shapes[i].y;
        vx[i] = spec.shapes[i].vx;
        vy[i] = spec.shapes[i].vy;
    }

    std::size_t next_event = 0;
    for (int t = 1; t <= frames; ++t) {
        if (t > 1) {
            while (next_event < events.size() && events[next_event].frame <= t) {
                for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
                    vx[i] = events[next_event].vx;
                    vy[i] = events[next_event].vy;
                }
                ++next_event;
            }
            for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
                px[i] += vx[i];
                py[i] += vy[i];
            }
        }
        FeatureTensor frame(spec.channels, spec.width, spec.height);
        for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
            splat(frame, spec.shapes[i], px[i], py[i], spec.bilinear);
        }
        if (spec.noise_sigma > 0.0) {
            for (double& v : frame.values) v += spec.noise_sigma * rng.gaussian();
        }
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

void save_sequence(const std::string& path, const FeatureSequence& seq) {
    if (seq.frames.empty()) throw IoError("save_sequence: empty sequence");
    const FeatureTensor& first = seq.frames.front();
    for (const auto& f : seq.frames) {
        if (!f.same_shape(first)) throw ShapeMismatch("save_sequence: frame shapes differ");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f.write(kMagic, sizeof(kMagic));
    write_u32(f, kFormatVersion);
    write_u32(f, static_cast<std::uint32_t>(first.channels));
    write_u32(f, static_cast<std::uint32_t>(first.width));
    write_u32(f, static_cast<std::uint32_t>(first.height));
    write_u32(f, static_cast<std::uint32_t>(seq.frames.size()));
    for (const auto& frame : seq.frames) {
        f.write(reinterpret_cast<const char*>(frame.values.data()),
                static_cast<std::streamsize>(frame.values.size() * sizeof(double)));
    }
    if (!f) throw IoError("write failed: " + path);
}

FeatureSequence load_sequence(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4] = {};
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw BadMagic("not an FSQ1 file: " + path);
    }
    const std::uint32_t version = read_u32(f, "version");
    if (version != kFormatVersion) {
        throw VersionMismatch("unsupported FSQ version " + std::to_string(version));
    }
    const std::uint32_t C = read_u32(f, "channels");
    const std::uint32_t W = read_u32(f, "width");
    const std::uint32_t H = read_u32(f, "height");
    const std::uint32_t T = read_u32(f, "frames");
    if (C < 1 || W < 1 || H < 1 || T < 1) throw IoError("FSQ header: zero dimension");
    constexpr std::uint64_t kMaxCells = 1ull << 32;
    if (static_cast<std::uint64_t>(C) * W * H * T > kMaxCells) {
        throw IoError("FSQ header: implausible dimensions");
    }

    FeatureSequence seq;
    seq.frames.reserve(T);
    for (std::uint32_t t = 0; t < T; ++t) {
        FeatureTensor frame(static_cast<int>(C), static_cast<int>(W), static_cast<int>(H));
        f.read(reinterpret_cast<char*>(frame.values.data()),
               static_cast<std::streamsize>(frame.values.size() * sizeof(double)));
        if (!f) throw IoError("truncated FSQ payload: " + path);
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

std::vector<int> train_counts(const DatasetManifest& manifest) {
    const std::size_t n = manifest.classes.size();
    int total = 0;
    for (const auto& c : manifest.classes) total += c.count;
    const int global_train =
        static_cast<int>(std::floor(manifest.train_fraction * static_cast<double>(total)));

    std::vector<int> base(n);
    std::vector<double> frac(n);
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double exact = manifest.train_fraction * manifest.classes[i].count;
        base[i] = static_cast<int>(std::floor(exact));
        frac[i] = exact - base[i];
        assigned += base[i];
    }
    int remainder = global_train - assigned;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; i < n && remainder > 0; ++i) {
        const std::size_t c = order[i];
        if (base[c] < manifest.classes[c].count) {
            ++base[c];
            --remainder;
        }
    }
    return base;
}

static void validate_manifest(const DatasetManifest& manifest) {
    if (manifest.classes.empty()) throw ManifestError("manifest: no classes");
    if (manifest.frames < 2) throw ManifestError("manifest: frames must be >= 2");
    if (manifest.train_fraction <= 0.0 || manifest.train_fraction > 1.0) {
        throw ManifestError("manifest: train_fraction must be in (0, 1]");
    }
    for (std::size_t i = 0; i < manifest.classes.size(); ++i) {
        if (manifest.classes[i].count < 1) throw ManifestError("manifest: class count must be >= 1");
        if (manifest.classes[i].label.empty()) throw ManifestError("manifest: empty class label");
        for (std::size_t j = i + 1; j < manifest.classes.size(); ++j) {
            if (manifest.classes[i].label == manifest.classes[j].label) {
                throw ManifestError("manifest: duplicate label " + manifest.classes[i].label);
            }
        }
    }
}

std::vector<DatasetEntry> generate_dataset(const DatasetManifest& manifest,
                                           const std::string& out_dir) {
    validate_manifest(manifest);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    const std::vector<int> trains = train_counts(manifest);
    std::vector<DatasetEntry> entries;
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        const ClassSpec& cls = manifest.classes[c];
        for (int i = 0; i < cls.count; ++i) {
            DatasetEntry e;
            e.class_index = static_cast<int>(c);
            e.label = cls.label;
            e.index = i;
            e.train = i < trains[c];
            e.seed = derive_seed(manifest.master_seed, c, static_cast<std::uint64_t>(i));
            e.file = "seq_" + std::to_string(c) + "_" + std::to_string(i) + ".fsq";

            SceneSpec spec = cls.scene;
            spec.seed = e.seed;
            FeatureSequence seq = generate_sequence(spec, manifest.frames);
            save_sequence((std::filesystem::path(out_dir) / e.file).string(), seq);
            entries.push_back(std::move(e));
        }
    }

    std::ofstream mf(std::filesystem::path(out_dir) / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("cannot write manifest.json");
    mf << manifest_to_json(manifest) << "\n";

    nlohmann::ordered_json labels;
    labels["version"] = 1;
    labels["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json je;
        je["file"] = e.file;
        je["class_index"] = e.class_index;
        je["label"] = e.label;
        je["index"] = e.index;
        je["split"] = e.train ? "train" : "test";
        je["seed"] = e.seed;
        labels["entries"].push_back(je);
    }
    std::ofstream lf(std::filesystem::path(out_dir) / "labels.json", std::ios::binary);
    if (!lf) throw IoError("cannot write labels.json");
    lf << labels.dump(2) << "\n";
    if (!lf) throw IoError("write failed: labels.json");
    return entries;
}

DatasetManifest manifest_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("manifest: ") + e.what());
    }
    check_keys(j, {"version", "frames", "train_fraction", "master_seed", "classes"}, "manifest");
    DatasetManifest m;
    m.version = j.value("version", 1);
    if (m.version != 1) throw VersionMismatch("manifest version must be 1");
    if (!j.contains("frames") || !j.contains("classes")) {
        throw ManifestError("manifest: missing frames/classes");
    }
    m.frames = j.at("frames").get<int>();
    m.train_fraction = j.value("train_fraction", 0.85);
    m.master_seed = j.value("master_seed", std::uint64_t{0});
    for (const auto& jc : j.at("classes")) {
        check_keys(jc, {"label", "count", "scene"}, "class");
        ClassSpec c;
        c.label = jc.at("label").get<std::string>();
        c.count = jc.at("count").get<int>();
        c.scene = scene_from_json(jc.at("scene"));
        m.classes.push_back(std::move(c));
    }
    validate_manifest(m);
    return m;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::ordered_json j;
    j["version"] = manifest.version;
    j["frames"] = manifest.frames;
    j["train_fraction"] = manifest.train_fraction;
    j["master_seed"] = manifest.master_seed;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& c : manifest.classes) {
        nlohmann::ordered_json jc;
        jc["label"] = c.label;
        jc["count"] = c.count;
        jc["scene"] = scene_to_json(c.scene);
        j["classes"].push_back(jc);
    }
    return j.dump(2);
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return manifest_from_json(buf.str());
}

LoadedDataset load_dataset(const std::string& dir) {
    LoadedDataset data;
    data.manifest = load_manifest((std::filesystem::path(dir) / "manifest.json").string());

    std::ifstream lf(std::filesystem::path(dir) / "labels.json", std::ios::binary);
    if (!lf) throw IoError("cannot open labels.json in " + dir);
    nlohmann::json j;
    try {
        lf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(std::string("labels.json: ") + e.what());
    }
    for (const auto& je : j.at("entries")) {
        DatasetEntry e;
        e.file = je.at("file").get<std::string>();
        e.class_index = je.at("class_index").get<int>();
        e.label = je.at("label").get<std::string>();
        e.index = je.at("index").get<int>();
        e.train = je.at("split").get<std::string>() == "train";
        e.seed = je.at("seed").get<std::uint64_t>();
        data.sequences.push_back(
            load_sequence((std::filesystem::path(dir) / e.file).string()));
        data.entries.push_back(std::move(e));
    }
    return data;
}

}  // namespace residprop::synth
