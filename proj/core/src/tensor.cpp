#include "residprop/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace residprop {

double Kernel::squared_norm() const {
    double s = 0.0;
    for (double w : weights) s += w * w;
    return s;
}

std::pair<int, int> Kernel::argmax_offset() const {
    const int h = half();
    std::size_t best = 0;
    for (std::size_t i = 1; i < weights.size(); ++i) {
        if (weights[i] > weights[best]) best = i;
    }
    const int dy = static_cast<int>(best) / size - h;
    const int dx = static_cast<int>(best) % size - h;
    return {dx, dy};
}

Plane FeatureTensor::plane(int c) const {
    Plane p(width, height);
    auto ch = channel(c);
    std::copy(ch.begin(), ch.end(), p.values.begin());
    return p;
}

bool FeatureTensor::all_finite() const {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void ensure_finite(const FeatureTensor& t, const char* what) {
    if (!t.all_finite()) throw NonFinite(std::string(what) + ": non-finite value");
}

ResidualSequence compute_residuals(const FeatureSequence& seq) {
    if (seq.size() < 2) throw TooShort("compute_residuals: need at least 2 frames");
    const FeatureTensor& first = seq.frames.front();
    for (const auto& f : seq.frames) {
        if (!f.same_shape(first)) throw ShapeMismatch("compute_residuals: frame shapes differ");
    }
    ResidualSequence out;
    out.residuals.reserve(seq.size() - 1);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        FeatureTensor r(first.channels, first.width, first.height);
        const auto& cur = seq.frames[t].values;
        const auto& prev = seq.frames[t - 1].values;
        for (std::size_t i = 0; i < r.values.size(); ++i) r.values[i] = cur[i] - prev[i];
        out.residuals.push_back(std::move(r));
    }
    return out;
}

FeatureTensor reconstruct(const FeatureTensor& d_t, const FeatureTensor& r_next) {
    if (!d_t.same_shape(r_next)) throw ShapeMismatch("reconstruct: shapes differ");
    FeatureTensor out = d_t;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += r_next.values[i];
    return out;
}

void convolve_plane(std::span<const double> in, int width, int height,
                    const Kernel& k, std::span<double> out) {
    if (k.size % 2 == 0 || k.size > std::min(2 * width - 1, 2 * height - 1)) {
        throw BadKernel("convolve: kernel size must be odd and fit the plane");
    }
    const int h = k.half();
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int j = -h; j <= h; ++j) {
                const int sy = y - j;
                if (sy < 0 || sy >= height) continue;
                const double* row = in.data() + static_cast<std::size_t>(sy) * width;
                const double* krow = k.weights.data() + static_cast<std::size_t>(j + h) * k.size;
                for (int i = -h; i <= h; ++i) {
                    const int sx = x - i;
                    if (sx < 0 || sx >= width) continue;
                    acc += krow[i + h] * row[sx];
                }
            }
            out[static_cast<std::size_t>(y) * width + x] = acc;
        }
    }
}

Plane convolve_channel(const Plane& map, const Kernel& k) {
    Plane out(map.width, map.height);
    convolve_plane(map.values, map.width, map.height, k, out.values);
    return out;
}

Kernel l2_normalize(const Kernel& k) {
    const double sq = k.squared_norm();
    if (sq <= 0.0) throw ZeroKernel("l2_normalize: all-zero kernel");
    Kernel out = k;
    const double inv = 1.0 / std::sqrt(sq);
    for (double& w : out.weights) w *= inv;
    return out;
}

void forward_diff_x(std::span<const double> in, int width, int height, std::span<double> out) {
    for (int y = 0; y < height; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width - 1; ++x) out[row + x] = in[row + x + 1] - in[row + x];
        out[row + width - 1] = 0.0;
    }
}

void forward_diff_y(std::span<const double> in, int width, int height, std::span<double> out) {
    for (int y = 0; y < height - 1; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) out[row + x] = in[row + width + x] - in[row + x];
    }
    const std::size_t last = static_cast<std::size_t>(height - 1) * width;
    for (int x = 0; x < width; ++x) out[last + x] = 0.0;
}

void forward_diff_x_adjoint(std::span<const double> g, int width, int height, std::span<double> out) {
    for (int y = 0; y < height; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            double v = 0.0;
            if (x >= 1 && x - 1 < width - 1) v += g[row + x - 1];
            if (x < width - 1) v -= g[row + x];
            out[row + x] += v;
        }
    }
}

void forward_diff_y_adjoint(std::span<const double> g, int width, int height, std::span<double> out) {
    for (int y = 0; y < height; ++y) {
        const std::size_t row = static_cast<std::size_t>(y) * width;
        for (int x = 0; x < width; ++x) {
            double v = 0.0;
            if (y >= 1 && y - 1 < height - 1) v += g[row - width + x];
            if (y < height - 1) v -= g[row + x];
            out[row + x] += v;
        }
    }
}

std::pair<FeatureTensor, FeatureTensor> spatial_gradients(const FeatureTensor& t) {
    if (t.width < 2 || t.height < 2) throw TooSmall("spatial_gradients: need W,H >= 2");
    FeatureTensor gx(t.channels, t.width, t.height);
    FeatureTensor gy(t.channels, t.width, t.height);
    for (int c = 0; c < t.channels; ++c) {
        forward_diff_x(t.channel(c), t.width, t.height, gx.channel(c));
        forward_diff_y(t.channel(c), t.width, t.height, gy.channel(c));
    }
    return {std::move(gx), std::move(gy)};
}

double sparsity(const FeatureTensor& t, double tau) {
    if (t.values.empty()) return 1.0;
    std::size_t near_zero = 0;
    for (double v : t.values) {
        if (std::fabs(v) < tau) ++near_zero;
    }
    return static_cast<double>(near_zero) / static_cast<double>(t.values.size());
}

}  // namespace residprop
