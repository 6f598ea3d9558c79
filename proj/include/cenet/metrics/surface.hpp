#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cenet/metrics/overlap.hpp"

namespace cenet::metrics {

/// Surface voxels of a mask on its grid. Physical coordinates are voxel index times spacing.
struct SurfaceSet {
    Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::array<int64_t, 3>> voxels;  // (z, y, x)

    size_t size() const { return voxels.size(); }
    bool empty() const { return voxels.empty(); }
    std::array<double, 3> point_mm(size_t i) const
    {
        return {voxels[i][0] * spacing[0], voxels[i][1] * spacing[1], voxels[i][2] * spacing[2]};
    }
};

/// Mask voxels with at least one face neighbour outside the mask or outside the grid.
inline SurfaceSet extract_surface(const BinaryMask& m)
{
    SurfaceSet s{m.dims, m.spacing, {}};
    const Dims3 d = m.dims;
    auto bg = [&](int64_t z, int64_t y, int64_t x) { return !m.inside(z, y, x) || !m(z, y, x); };
    for (int64_t z = 0; z < d.d; ++z)
        for (int64_t y = 0; y < d.h; ++y)
            for (int64_t x = 0; x < d.w; ++x)
                if (m(z, y, x) && (bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) || bg(z, y + 1, x) ||
                                   bg(z, y, x - 1) || bg(z, y, x + 1)))
                    s.voxels.push_back({z, y, x});
    return s;
}

namespace detail {

/// One-dimensional squared distance transform (lower envelope of parabolas) along a line of n
/// samples spaced `step` mm apart; f holds squared distances in mm^2, infinity where unset.
inline void edt_line(const double* f, double* out, int64_t n, double step, std::vector<int64_t>& v,
                     std::vector<double>& zb)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.resize(static_cast<size_t>(n));
    zb.resize(static_cast<size_t>(n + 1));
    int64_t k = -1;
    auto pos = [step](int64_t q) { return double(q) * step; };
    for (int64_t q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        while (k >= 0) {
            const int64_t p = v[k];
            const double s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if (s <= zb[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        zb[k] = k == 0 ? -inf
                       : ((f[q] + pos(q) * pos(q)) - (f[v[k - 1]] + pos(v[k - 1]) * pos(v[k - 1]))) /
                             (2.0 * (pos(q) - pos(v[k - 1])));
        zb[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(out, out + n, inf);
        return;
    }
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (zb[j + 1] < pos(q)) ++j;
        const double dq = pos(q) - pos(v[j]);
        out[q] = dq * dq + f[v[j]];
    }
}

}  // namespace detail

/// Squared Euclidean distance in mm^2 from every voxel to the nearest seed voxel (exact,
/// separable lower-envelope transform with anisotropic spacing). Infinity when there is no seed.
inline std::vector<double> squared_distance_transform(const Dims3& dims, const std::array<double, 3>& spacing,
                                                      const std::vector<std::array<int64_t, 3>>& seeds)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(static_cast<size_t>(dims.count()), inf);
    for (const auto& s : seeds) g[static_cast<size_t>((s[0] * dims.h + s[1]) * dims.w + s[2])] = 0.0;
    std::vector<int64_t> v;
    std::vector<double> zb, line_in, line_out;
    const std::array<int64_t, 3> strides{dims.h * dims.w, dims.w, 1};
    for (int axis = 2; axis >= 0; --axis) {
        const int64_t n = dims[axis];
        const int64_t stride = strides[axis];
        line_in.resize(static_cast<size_t>(n));
        line_out.resize(static_cast<size_t>(n));
        for (int64_t start = 0; start < dims.count(); ++start) {
            // visit each line once, from its first element
            if ((start / stride) % n != 0) continue;
            for (int64_t i = 0; i < n; ++i) line_in[i] = g[static_cast<size_t>(start + i * stride)];
            detail::edt_line(line_in.data(), line_out.data(), n, spacing[axis], v, zb);
            for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(start + i * stride)] = line_out[i];
        }
    }
    return g;
}

/// For every point of `a`, the distance in mm to the nearest point of `b`. Both sets must live on
/// the same grid.
inline std::vector<double> directed_distances(const SurfaceSet& a, const SurfaceSet& b)
{
    if (b.empty()) throw UndefinedDistanceError("directed_distances: target surface is empty");
    if (a.dims != b.dims || a.spacing != b.spacing) throw ShapeError("directed_distances: surfaces on different grids");
    const std::vector<double> d2 = squared_distance_transform(b.dims, b.spacing, b.voxels);
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& p : a.voxels) out.push_back(std::sqrt(d2[static_cast<size_t>((p[0] * a.dims.h + p[1]) * a.dims.w + p[2])]));
    return out;
}

/// Percentile q in [0, 100] with linear interpolation between order statistics (rank q/100 (n-1)).
inline double percentile(std::vector<double> values, double q)
{
    if (values.empty()) throw UndefinedDistanceError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * double(values.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(rank));
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

struct SurfaceDistances {
    std::vector<double> x_to_y, y_to_x;
};

inline SurfaceDistances surface_distances(const BinaryMask& x, const BinaryMask& y)
{
    if (x.dims != y.dims) throw ShapeError("surface distances: masks " + x.dims.str() + " vs " + y.dims.str());
    const SurfaceSet sx = extract_surface(x), sy = extract_surface(y);
    if (sx.empty() || sy.empty()) throw UndefinedDistanceError("surface distance undefined for an empty mask");
    return {directed_distances(sx, sy), directed_distances(sy, sx)};
}

/// Symmetric Hausdorff distance at the 95th percentile of each directed distance set.
inline double hd95(const SurfaceDistances& d)
{
    return std::max(percentile(d.x_to_y, 95.0), percentile(d.y_to_x, 95.0));
}
inline double hd95(const BinaryMask& x, const BinaryMask& y) { return hd95(surface_distances(x, y)); }

/// Mean of all directed surface distances in both directions.
inline double assd(const SurfaceDistances& d)
{
    const double sum = std::accumulate(d.x_to_y.begin(), d.x_to_y.end(), 0.0) +
                       std::accumulate(d.y_to_x.begin(), d.y_to_x.end(), 0.0);
    return sum / double(d.x_to_y.size() + d.y_to_x.size());
}
inline double assd(const BinaryMask& x, const BinaryMask& y) { return assd(surface_distances(x, y)); }

/// Largest directed surface distance in either direction.
inline double hausdorff(const SurfaceDistances& d)
{
    return std::max(*std::max_element(d.x_to_y.begin(), d.x_to_y.end()),
                    *std::max_element(d.y_to_x.begin(), d.y_to_x.end()));
}

}  // namespace cenet::metrics
