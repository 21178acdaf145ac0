#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "residprop/tensor.hpp"

namespace residprop::synth {

enum class ShapeKind { Triangle, Rect, Blob };

ShapeKind shape_kind_from_name(const std::string& name);
std::string shape_kind_name(ShapeKind k);

struct Shape {
    ShapeKind kind = ShapeKind::Rect;
    double size = 3.0;
    double intensity = 1.0;
    double x = 0.0, y = 0.0;    // initial position (shape anchor)
    double vx = 0.0, vy = 0.0;  // pixels per frame
    std::vector<int> channels;  // channel mask; empty selects every channel
};

// Velocity switch applied to every shape: the new velocity drives the
// transition into the stated (1-based) frame and stays until replaced.
struct VelocityEvent {
    int frame = 0;
    double vx = 0.0, vy = 0.0;
};

struct SceneSpec {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<Shape> shapes;
    double noise_sigma = 0.0;
    std::vector<VelocityEvent> events;
    std::uint64_t seed = 0;
    bool bilinear = false;  // sub-integer placement via bilinear splatting
};

struct ClassSpec {
    std::string label;
    SceneSpec scene;
    int count = 0;
};

struct DatasetManifest {
    int version = 1;
    int frames = 0;
    double train_fraction = 0.85;
    std::uint64_t master_seed = 0;
    std::vector<ClassSpec> classes;
};

// Deterministic for a fixed (spec, T); shapes advance by their velocity each
// frame with zero fill at the canvas borders, then i.i.d. Gaussian noise is
// added per pixel.
FeatureSequence generate_sequence(const SceneSpec& spec, int frames);

// FSQ1 container: magic "FSQ1", little-endian u32 version/C/W/H/T header,
// then T*C*W*H float64 values, channel planes row-major.
void save_sequence(const std::string& path, const FeatureSequence& seq);
FeatureSequence load_sequence(const std::string& path);

// First-n-per-class split sized by the largest-remainder rule so that the
// total train count equals floor(train_fraction * total).
std::vector<int> train_counts(const DatasetManifest& manifest);

struct DatasetEntry {
    std::string file;
    int class_index = 0;
    std::string label;
    int index = 0;  // position within the class
    bool train = false;
    std::uint64_t seed = 0;
};

// Writes manifest.json (echo), labels.json and seq_<class>_<idx>.fsq files.
// Per-sequence seeds derive from (master seed, class, index) so any sequence
// regenerates independently of the rest.
std::vector<DatasetEntry> generate_dataset(const DatasetManifest& manifest,
                                           const std::string& out_dir);

DatasetManifest manifest_from_json(const std::string& text);
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::string& path);

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<DatasetEntry> entries;
    std::vector<FeatureSequence> sequences;  // parallel to entries
};

LoadedDataset load_dataset(const std::string& dir);

}  // namespace residprop::synth
