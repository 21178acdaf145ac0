#include "residprop/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

namespace residprop::flow {

namespace {

constexpr double kPi = 3.14159265358979323846;

double patch_ssd(const Plane& a, const Plane& b, int ax, int ay, int bx, int by, int half) {
    double ssd = 0.0;
    for (int dy = -half; dy <= half; ++dy) {
        for (int dx = -half; dx <= half; ++dx) {
            const double va = a.at_or_zero(ax + dx, ay + dy);
            const double vb = b.at_or_zero(bx + dx, by + dy);
            const double d = va - vb;
            ssd += d * d;
        }
    }
    return ssd;
}

// Quadrant-reduced direction bin. Rotating the vector by 90 degrees maps the
// result to (bin + B/4) mod B exactly, which keeps the histogram equivariant
// under flow rotation.
int direction_bin(double u, double v, int bins) {
    int quadrant = 0;
    double ru = u, rv = v;
    while (!(ru > 0.0 && rv >= 0.0)) {
        // rotate clockwise by 90 degrees: (u, v) -> (v, -u)
        const double t = ru;
        ru = rv;
        rv = -t;
        ++quadrant;
        if (quadrant == 4) return 0;  // only reachable for the zero vector
    }
    const double theta = std::atan2(rv, ru);  // in [0, pi/2)
    const double width = 2.0 * kPi / bins;
    int local = static_cast<int>(std::lround(theta / width));
    const int quarter = bins / 4;
    if (local > quarter) local = quarter;
    // quadrant counts clockwise reductions, so the original angle is
    // quadrant * 90 degrees above the reduced one.
    return (quadrant * quarter + local) % bins;
}

Kernel gaussian_smooth(const Kernel& hist, double sigma) {
    if (sigma <= 0.0) return hist;
    const int reach = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> g(2 * reach + 1);
    for (int d = -reach; d <= reach; ++d) {
        g[d + reach] = std::exp(-0.5 * (d * d) / (sigma * sigma));
    }
    const int n = hist.size;
    const int h = hist.half();
    Kernel out(n);
    for (int cy = -h; cy <= h; ++cy) {
        for (int cx = -h; cx <= h; ++cx) {
            double acc = 0.0;
            double wsum = 0.0;
            for (int dy = -reach; dy <= reach; ++dy) {
                const int sy = cy + dy;
                if (sy < -h || sy > h) continue;
                for (int dx = -reach; dx <= reach; ++dx) {
                    const int sx = cx + dx;
                    if (sx < -h || sx > h) continue;
                    const double w = g[dx + reach] * g[dy + reach];
                    acc += w * hist.at(sx, sy);
                    wsum += w;
                }
            }
            out.at(cx, cy) = acc / wsum;
        }
    }
    return out;
}

}  // namespace

FlowField estimate_flow(const Plane& a, const Plane& b_plane, int radius, int patch) {
    if (!a.same_shape(b_plane)) throw ShapeMismatch("estimate_flow: plane shapes differ");
    if (radius < 1) throw ConfigError("estimate_flow: radius must be >= 1");
    if (patch < 1 || patch % 2 == 0) throw ConfigError("estimate_flow: patch must be odd");

    const int half = (patch - 1) / 2;
    FlowField f(a.width, a.height);
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            double best = std::numeric_limits<double>::infinity();
            int best_dx = 0, best_dy = 0;
            long best_norm = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    const double ssd = patch_ssd(a, b_plane, x, y, x + dx, y + dy, half);
                    const long norm = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
                    bool take = false;
                    if (ssd < best) {
                        take = true;
                    } else if (ssd == best) {
                        if (norm < best_norm) {
                            take = true;
                        } else if (norm == best_norm &&
                                   (dy < best_dy || (dy == best_dy && dx < best_dx))) {
                            take = true;
                        }
                    }
                    if (take) {
                        best = ssd;
                        best_dx = dx;
                        best_dy = dy;
                        best_norm = norm;
                    }
                }
            }
            f.u.at(x, y) = best_dx;
            f.v.at(x, y) = best_dy;
        }
    }
    return f;
}

std::vector<std::pair<int, int>> ring_cells(int ring) {
    if (ring == 0) return {{0, 0}};
    std::vector<std::pair<int, int>> cells;
    for (int dy = -ring; dy <= ring; ++dy) {
        for (int dx = -ring; dx <= ring; ++dx) {
            if (std::max(std::abs(dx), std::abs(dy)) == ring) cells.emplace_back(dx, dy);
        }
    }
    std::sort(cells.begin(), cells.end(), [](const auto& lhs, const auto& rhs) {
        auto angle = [](const std::pair<int, int>& c) {
            double a = std::atan2(static_cast<double>(c.second), static_cast<double>(c.first));
            if (a < 0.0) a += 2.0 * kPi;
            return a;
        };
        return angle(lhs) < angle(rhs);
    });
    return cells;
}

Kernel flow_histogram(const FlowField& f, int size) {
    if (size % 2 == 0 || size < 1) throw BadKernel("flow_histogram: size must be odd");
    const int max_ring = (size - 1) / 2;
    Kernel hist(size);
    for (int y = 0; y < f.height; ++y) {
        for (int x = 0; x < f.width; ++x) {
            const double u = f.u.at(x, y);
            const double v = f.v.at(x, y);
            const double mag = std::sqrt(u * u + v * v);
            if (mag == 0.0) {
                hist.at(0, 0) += 1.0;  // count-weighted no-motion vote
                continue;
            }
            int ring;
            if (mag < 0.5) {
                ring = 0;
            } else if (mag < 1.5) {
                ring = 1;
            } else if (mag < 2.5) {
                ring = 2;
            } else {
                ring = 3;
            }
            ring = std::min(ring, max_ring);
            if (ring == 0) {
                hist.at(0, 0) += mag;
                continue;
            }
            const int bins = 8 * ring;
            const int bin = direction_bin(u, v, bins);
            const auto cells = ring_cells(ring);
            hist.at(cells[bin].first, cells[bin].second) += mag;
        }
    }
    return hist;
}

Kernel flow_to_kernel(const FlowField& f, int size, double sigma) {
    if (sigma < 0.0) throw ConfigError("flow_to_kernel: sigma must be >= 0");
    Kernel hist = flow_histogram(f, size);
    if (hist.squared_norm() == 0.0) {
        Kernel center(size);
        center.at(0, 0) = 1.0;
        return center;
    }
    return l2_normalize(gaussian_smooth(hist, sigma));
}

std::array<Kernel, 3> flow_to_kernels(const FlowField& f, double sigma) {
    return {flow_to_kernel(f, 3, sigma), flow_to_kernel(f, 5, sigma), flow_to_kernel(f, 7, sigma)};
}

double kernel_match(const Kernel& k, const Kernel& kof) {
    if (k.size != kof.size) throw SizeMismatch("kernel_match: sizes differ");
    double dot = 0.0;
    for (std::size_t i = 0; i < k.weights.size(); ++i) dot += k.weights[i] * kof.weights[i];
    return dot;
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) throw EmptyInput("quantile: empty list");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values.front();
    const double h = p * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

MatchStats match_statistics(const std::vector<double>& scores) {
    if (scores.empty()) throw EmptyInput("match_statistics: empty list");
    MatchStats s;
    s.median = quantile(scores, 0.5);
    s.q25 = quantile(scores, 0.25);
    s.q75 = quantile(scores, 0.75);
    s.p10 = quantile(scores, 0.10);
    s.p90 = quantile(scores, 0.90);
    return s;
}

}  // namespace residprop::flow
