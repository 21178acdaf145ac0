// Independent brute-force reference implementations used only by tests.
// These deliberately avoid the library's code paths: plain loops, separate
// conventions derivations, and sort-based statistics.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "residprop/tensor.hpp"

namespace oracles {

// Direct-definition convolution: out(x,y) = sum_k w(i,j) * in(x-i, y-j),
// kernel offsets centered, zero padding. Iterates output-major over raw
// arrays rather than reusing the library loops.
inline std::vector<double> conv2d(const std::vector<double>& in, int W, int H,
                                  const std::vector<double>& w, int n) {
    const int h = (n - 1) / 2;
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int j = -h; j <= h; ++j) {
                for (int i = -h; i <= h; ++i) {
                    const int sx = x - i;
                    const int sy = y - j;
                    if (sx < 0 || sx >= W || sy < 0 || sy >= H) continue;
                    acc += w[(j + h) * n + (i + h)] * in[sy * W + sx];
                }
            }
            out[y * W + x] = acc;
        }
    }
    return out;
}

// Plane translation by (+dx, +dy) with zero fill.
inline std::vector<double> shift2d(const std::vector<double>& in, int W, int H, int dx, int dy) {
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const int sx = x - dx;
            const int sy = y - dy;
            if (sx < 0 || sx >= W || sy < 0 || sy >= H) continue;
            out[y * W + x] = in[sy * W + sx];
        }
    }
    return out;
}

// Forward differences with zeroed last column/row.
inline std::vector<double> diff_x(const std::vector<double>& in, int W, int H) {
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x + 1 < W; ++x) out[y * W + x] = in[y * W + x + 1] - in[y * W + x];
    }
    return out;
}

inline std::vector<double> diff_y(const std::vector<double>& in, int W, int H) {
    std::vector<double> out(in.size(), 0.0);
    for (int y = 0; y + 1 < H; ++y) {
        for (int x = 0; x < W; ++x) out[y * W + x] = in[(y + 1) * W + x] - in[y * W + x];
    }
    return out;
}

// Central finite differences of a scalar function over a parameter vector.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> params, double h = 1e-6) {
    std::vector<double> grad(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double fp = f(params);
        params[i] = saved - h;
        const double fm = f(params);
        params[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// Vector-level relative error between two gradients.
inline double gradient_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(a[i] - b[i]));
        max_mag = std::max({max_mag, std::fabs(a[i]), std::fabs(b[i])});
    }
    return max_diff / std::max(max_mag, 1e-8);
}

// Exhaustive per-pixel SSD block matching, written independently of the
// library (accumulates over absolute coordinates, explicit tie rules).
struct FlowVec {
    int dx = 0, dy = 0;
};
inline FlowVec match_pixel(const residprop::Plane& a, const residprop::Plane& b, int x, int y,
                           int radius, int patch) {
    const int half = (patch - 1) / 2;
    double best = 1e300;
    FlowVec bestv;
    long best_norm = 1L << 60;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            double ssd = 0.0;
            for (int py = -half; py <= half; ++py) {
                for (int px = -half; px <= half; ++px) {
                    const double va = a.at_or_zero(x + px, y + py);
                    const double vb = b.at_or_zero(x + dx + px, y + dy + py);
                    ssd += (va - vb) * (va - vb);
                }
            }
            const long norm = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
            const bool tie_break =
                ssd == best && (norm < best_norm ||
                                (norm == best_norm &&
                                 (dy < bestv.dy || (dy == bestv.dy && dx < bestv.dx))));
            if (ssd < best || tie_break) {
                best = ssd;
                bestv = {dx, dy};
                best_norm = norm;
            }
        }
    }
    return bestv;
}

// Histogram oracle: ring from magnitude thresholds, direction bin from the
// wrapped angle (floor instead of the library's quadrant reduction), cells
// enumerated counterclockwise from east by explicit angle sort.
inline std::vector<double> flow_histogram(const std::vector<double>& u,
                                          const std::vector<double>& v, int size) {
    const int max_ring = (size - 1) / 2;
    std::vector<double> hist(size * size, 0.0);
    const double two_pi = 8.0 * std::atan(1.0);
    auto cells_of_ring = [&](int ring) {
        std::vector<std::pair<double, std::pair<int, int>>> cells;
        for (int dy = -ring; dy <= ring; ++dy) {
            for (int dx = -ring; dx <= ring; ++dx) {
                if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
                double ang = std::atan2((double)dy, (double)dx);
                if (ang < 0) ang += two_pi;
                cells.push_back({ang, {dx, dy}});
            }
        }
        std::sort(cells.begin(), cells.end());
        return cells;
    };
    const int h = max_ring;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double mag = std::hypot(u[i], v[i]);
        if (mag == 0.0) {
            hist[h * size + h] += 1.0;
            continue;
        }
        int ring = mag < 0.5 ? 0 : mag < 1.5 ? 1 : mag < 2.5 ? 2 : 3;
        if (ring > max_ring) ring = max_ring;
        if (ring == 0) {
            hist[h * size + h] += mag;
            continue;
        }
        const int B = 8 * ring;
        double ang = std::atan2(v[i], u[i]);
        if (ang < 0) ang += two_pi;
        int bin = static_cast<int>(std::floor(ang / (two_pi / B) + 0.5)) % B;
        const auto cells = cells_of_ring(ring);
        const auto [dx, dy] = cells[bin].second;
        hist[(dy + h) * size + (dx + h)] += mag;
    }
    return hist;
}

// Quantile with linear interpolation, from scratch.
inline double quantile_sorted(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double pos = p * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - lo;
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace oracles
