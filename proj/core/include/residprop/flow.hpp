#pragma once

#include <array>
#include <utility>
#include <vector>

#include "residprop/tensor.hpp"

namespace residprop::flow {

// Dense displacement field in pixels/frame: content at (x, y) in the first
// plane appears at (x + u, y + v) in the second.
struct FlowField {
    int width = 0;
    int height = 0;
    Plane u;
    Plane v;

    FlowField() = default;
    FlowField(int w, int h) : width(w), height(h), u(w, h), v(w, h) {}
};

struct FlowConfig {
    int radius = 3;    // search extent per axis
    int patch = 5;     // odd patch side for the SSD window
    double sigma = 0.5;  // Gaussian smoothing of the kernel histogram
};

// Exhaustive integer block matching minimizing the sum of squared
// differences over a zero-padded patch. Ties are broken by the smallest
// displacement norm, then lexicographically by (dy, dx).
FlowField estimate_flow(const Plane& a, const Plane& b_plane, int radius = 3, int patch = 5);

// Kernel-shaped flow histogram before smoothing/normalization: each vector
// lands on the ring matching its magnitude (clamped to the kernel), in the
// direction bin aligned with the ring's cells, weighted by its magnitude
// (exactly-zero vectors add weight 1 to the center).
Kernel flow_histogram(const FlowField& f, int size);

// Histogram smoothed with a truncated Gaussian and l2-normalized.
Kernel flow_to_kernel(const FlowField& f, int size, double sigma = 0.5);
std::array<Kernel, 3> flow_to_kernels(const FlowField& f, double sigma = 0.5);

// Cells at Chebyshev distance `ring` from the center, ordered
// counterclockwise starting at east; ring 0 is the center cell alone.
std::vector<std::pair<int, int>> ring_cells(int ring);

// Inner product of the vectorized kernels; equals cosine similarity for
// unit-norm inputs.
double kernel_match(const Kernel& k, const Kernel& kof);

struct MatchStats {
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    double p10 = 0.0;
    double p90 = 0.0;
};

// Order statistics with linear interpolation between closest ranks.
MatchStats match_statistics(const std::vector<double>& scores);
double quantile(std::vector<double> values, double p);

}  // namespace residprop::flow
