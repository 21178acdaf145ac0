#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "residprop/errors.hpp"

namespace residprop {

// Single-channel W x H grid of doubles, row-major (rows along y, cells along x).
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    Plane() = default;
    Plane(int w, int h, double fill = 0.0)
        : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

    // Zero outside the grid.
    double at_or_zero(int x, int y) const {
        if (x < 0 || y < 0 || x >= width || y >= height) return 0.0;
        return at(x, y);
    }

    bool same_shape(const Plane& o) const { return width == o.width && height == o.height; }
};

// Odd-sized square convolution kernel with centered indexing.
// Weight for centered offset (dx, dy) lives at weights[(dy+h)*size + (dx+h)],
// h = (size-1)/2. An impulse at (dx, dy) shifts content by (+dx, +dy).
struct Kernel {
    int size = 0;
    std::vector<double> weights;

    Kernel() = default;
    explicit Kernel(int n) : size(n), weights(static_cast<std::size_t>(n) * n, 0.0) {}

    int half() const { return (size - 1) / 2; }

    double& at(int dx, int dy) {
        const int h = half();
        return weights[static_cast<std::size_t>(dy + h) * size + (dx + h)];
    }
    double at(int dx, int dy) const {
        const int h = half();
        return weights[static_cast<std::size_t>(dy + h) * size + (dx + h)];
    }

    double squared_norm() const;
    // Centered offset of the largest weight; ties resolved toward the
    // first cell in row-major order.
    std::pair<int, int> argmax_offset() const;
};

// Dense C x W x H feature map at one timestep. Channel planes are stored
// back to back, each row-major.
struct FeatureTensor {
    int channels = 0;
    int width = 0;
    int height = 0;
    std::vector<double> values;

    FeatureTensor() = default;
    FeatureTensor(int c, int w, int h, double fill = 0.0)
        : channels(c), width(w), height(h),
          values(static_cast<std::size_t>(c) * w * h, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }

    double& at(int c, int x, int y) {
        return values[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }
    double at(int c, int x, int y) const {
        return values[static_cast<std::size_t>(c) * plane_size() + static_cast<std::size_t>(y) * width + x];
    }

    std::span<double> channel(int c) {
        return {values.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
    }
    std::span<const double> channel(int c) const {
        return {values.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
    }

    Plane plane(int c) const;

    bool same_shape(const FeatureTensor& o) const {
        return channels == o.channels && width == o.width && height == o.height;
    }
    bool all_finite() const;
};

// Ordered frames sharing one (C, W, H) shape.
struct FeatureSequence {
    std::vector<FeatureTensor> frames;

    std::size_t size() const { return frames.size(); }
    const FeatureTensor& operator[](std::size_t i) const { return frames[i]; }
    FeatureTensor& operator[](std::size_t i) { return frames[i]; }
};

// Temporal differences of a FeatureSequence; residuals[i] covers the
// transition frames[i] -> frames[i+1], so there is one fewer entry.
struct ResidualSequence {
    std::vector<FeatureTensor> residuals;

    std::size_t size() const { return residuals.size(); }
    const FeatureTensor& operator[](std::size_t i) const { return residuals[i]; }
};

// Throws ShapeMismatch unless every frame shares one shape; TooShort unless
// there are at least two frames.
ResidualSequence compute_residuals(const FeatureSequence& seq);

// Pointwise d_t + r_next.
FeatureTensor reconstruct(const FeatureTensor& d_t, const FeatureTensor& r_next);

// 2D convolution with zero padding and same-size output:
//   out(x, y) = sum_{i,j} k(i, j) * in(x - i, y - j)
// with (i, j) centered offsets. An impulse kernel at (dx, dy) therefore
// translates content by (+dx, +dy) with zero fill.
void convolve_plane(std::span<const double> in, int width, int height,
                    const Kernel& k, std::span<double> out);
Plane convolve_channel(const Plane& map, const Kernel& k);

// Scales weights to unit l2 norm. Throws ZeroKernel on an all-zero kernel.
Kernel l2_normalize(const Kernel& k);

// Forward differences with zero last column (gx) / last row (gy).
std::pair<FeatureTensor, FeatureTensor> spatial_gradients(const FeatureTensor& t);

// In-place single-plane variants used by the loss kernels.
void forward_diff_x(std::span<const double> in, int width, int height, std::span<double> out);
void forward_diff_y(std::span<const double> in, int width, int height, std::span<double> out);
// Transpose of the forward-difference operators (for adjoint accumulation):
// out(x,y) += g(x-1,y) - g(x,y), honoring the zeroed last column/row.
void forward_diff_x_adjoint(std::span<const double> g, int width, int height, std::span<double> out);
void forward_diff_y_adjoint(std::span<const double> g, int width, int height, std::span<double> out);

// Fraction of entries with |v| < tau. Precondition: tau > 0.
double sparsity(const FeatureTensor& t, double tau = 0.01);

// Throws NonFinite when the tensor holds a NaN or infinity.
void ensure_finite(const FeatureTensor& t, const char* what);

}  // namespace residprop
