#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <utility>

#include "cenet/data/rng.hpp"
#include "cenet/data/volume.hpp"

namespace cenet::data {

struct AugmentSpec {
    double affine_prob = 0.8;
    double cutout_prob = 0.8;
    double cutout_frac_min = 0.2;
    double cutout_frac_max = 0.25;
    double rotation_deg = 10.0;     // per axis, uniform in [-r, r]
    double scale_min = 0.9;         // isotropic
    double scale_max = 1.1;
    double translation_frac = 0.05;  // per axis, fraction of the physical extent
    uint64_t rng_seed = 0;

    void validate() const
    {
        if (affine_prob < 0 || affine_prob > 1 || cutout_prob < 0 || cutout_prob > 1) {
            throw ConfigError("augment: probabilities must lie in [0, 1]");
        }
        if (!(cutout_frac_min > 0 && cutout_frac_min <= cutout_frac_max && cutout_frac_max < 1)) {
            throw ConfigError("augment: need 0 < cutout_frac_min <= cutout_frac_max < 1");
        }
        if (!(scale_min > 0 && scale_min <= scale_max) || rotation_deg < 0 || translation_frac < 0) {
            throw ConfigError("augment: invalid affine ranges");
        }
    }
};

/// x_out = c + t + s R (x_in - c) in mm, c the grid centre; R = Rz Ry Rx over the (d, h, w) axes.
struct AffineParams {
    std::array<double, 3> rotation_rad{0, 0, 0};
    double scale = 1.0;
    std::array<double, 3> translation_mm{0, 0, 0};

    bool is_identity() const
    {
        return rotation_rad == std::array<double, 3>{0, 0, 0} && scale == 1.0 &&
               translation_mm == std::array<double, 3>{0, 0, 0};
    }

    std::array<std::array<double, 3>, 3> rotation() const
    {
        using M = std::array<std::array<double, 3>, 3>;
        auto mul = [](const M& a, const M& b) {
            M r{};
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
            return r;
        };
        // rotation in the plane of the two axes other than `a`
        auto axis_rot = [](int a, double t) {
            M r{};
            for (int i = 0; i < 3; ++i) r[i][i] = 1;
            const int p = (a + 1) % 3, q = (a + 2) % 3;
            r[p][p] = std::cos(t);
            r[p][q] = -std::sin(t);
            r[q][p] = std::sin(t);
            r[q][q] = std::cos(t);
            return r;
        };
        return mul(axis_rot(0, rotation_rad[0]), mul(axis_rot(1, rotation_rad[1]), axis_rot(2, rotation_rad[2])));
    }
};

inline AffineParams draw_affine(const Dims3& dims, const std::array<double, 3>& spacing, const AugmentSpec& spec, Rng& rng)
{
    AffineParams a;
    const double r = spec.rotation_deg * std::numbers::pi / 180.0;
    for (auto& t : a.rotation_rad) t = uniform(rng, -r, r);
    a.scale = uniform(rng, spec.scale_min, spec.scale_max);
    for (int i = 0; i < 3; ++i) {
        const double extent = double(dims[i]) * spacing[i];
        a.translation_mm[i] = uniform(rng, -spec.translation_frac, spec.translation_frac) * extent;
    }
    return a;
}

/// Resamples image (trilinear) and label (nearest) under one affine map; outside the source grid
/// the image reads 0 and the label background.
inline std::pair<Volume, LabelVolume> apply_affine(const Volume& v, const LabelVolume& l, const AffineParams& a)
{
    if (v.dims != l.dims) throw ShapeError("random_affine: image " + v.dims.str() + " vs label " + l.dims.str());
    if (a.is_identity()) return {v, l};
    Volume vo = v;
    LabelVolume lo = l;
    const Dims3 d = v.dims;
    const auto R = a.rotation();
    std::array<double, 3> c{};
    for (int i = 0; i < 3; ++i) c[i] = 0.5 * double(d[i] - 1) * v.spacing[i];
    for (int64_t z = 0; z < d.d; ++z) {
        for (int64_t y = 0; y < d.h; ++y) {
            for (int64_t x = 0; x < d.w; ++x) {
                const std::array<double, 3> p{z * v.spacing[0], y * v.spacing[1], x * v.spacing[2]};
                std::array<double, 3> q{};
                for (int i = 0; i < 3; ++i) q[i] = (p[i] - c[i] - a.translation_mm[i]) / a.scale;
                std::array<double, 3> src{};  // voxel coordinates, R^T q + c
                for (int i = 0; i < 3; ++i) {
                    double s = 0;
                    for (int k = 0; k < 3; ++k) s += R[k][i] * q[k];
                    src[i] = (s + c[i]) / v.spacing[i];
                }
                // nearest for the label
                const int64_t nz = std::lround(src[0]), ny = std::lround(src[1]), nx = std::lround(src[2]);
                lo(z, y, x) = l.inside(nz, ny, nx) ? l(nz, ny, nx) : 0;
                // trilinear for the image, zero outside
                const int64_t z0 = int64_t(std::floor(src[0])), y0 = int64_t(std::floor(src[1])),
                              x0 = int64_t(std::floor(src[2]));
                const double fz = src[0] - z0, fy = src[1] - y0, fx = src[2] - x0;
                double acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            if (!v.inside(z0 + dz, y0 + dy, x0 + dx)) continue;
                            const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
                            acc += w * v(z0 + dz, y0 + dy, x0 + dx);
                        }
                vo(z, y, x) = float(acc);
            }
        }
    }
    return {std::move(vo), std::move(lo)};
}

/// With probability affine_prob one shared random affine map is applied to image and label.
inline std::pair<Volume, LabelVolume> random_affine(const Volume& v, const LabelVolume& l, const AugmentSpec& spec, Rng& rng)
{
    if (uniform(rng, 0, 1) >= spec.affine_prob) return {v, l};
    return apply_affine(v, l, draw_affine(v.dims, v.spacing, spec, rng));
}

/// Half-open voxel box [lo, hi) per axis, already cropped to the grid.
struct CutoutBox {
    std::array<int64_t, 3> lo{0, 0, 0}, hi{0, 0, 0};
    std::array<int64_t, 3> nominal{0, 0, 0};  // drawn side lengths before cropping

    int64_t voxels() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
};

/// Side lengths allowed along an axis of extent L: [ceil(L fmin), floor(L fmax)], at least 1.
inline std::pair<int64_t, int64_t> cutout_length_range(int64_t L, const AugmentSpec& spec)
{
    const int64_t lo = std::max<int64_t>(1, int64_t(std::ceil(double(L) * spec.cutout_frac_min - 1e-9)));
    const int64_t hi = std::max<int64_t>(lo, int64_t(std::floor(double(L) * spec.cutout_frac_max + 1e-9)));
    return {lo, hi};
}

/// Box with a uniformly drawn centre voxel anywhere in the grid; parts falling outside are cropped.
inline CutoutBox box_at(const Dims3& dims, const std::array<int64_t, 3>& centre, const std::array<int64_t, 3>& length)
{
    CutoutBox b;
    b.nominal = length;
    for (int i = 0; i < 3; ++i) {
        const int64_t start = centre[i] - length[i] / 2;
        b.lo[i] = std::clamp<int64_t>(start, 0, dims[i]);
        b.hi[i] = std::clamp<int64_t>(start + length[i], 0, dims[i]);
    }
    return b;
}

inline std::optional<CutoutBox> draw_cutout(const Dims3& dims, const AugmentSpec& spec, Rng& rng)
{
    if (uniform(rng, 0, 1) >= spec.cutout_prob) return std::nullopt;
    std::array<int64_t, 3> length{}, centre{};
    for (int i = 0; i < 3; ++i) {
        const auto [lo, hi] = cutout_length_range(dims[i], spec);
        length[i] = uniform_int(rng, lo, hi);
        centre[i] = uniform_int(rng, 0, dims[i] - 1);
    }
    return box_at(dims, centre, length);
}

inline void apply_cutout(Volume& v, const CutoutBox& b)
{
    for (int64_t z = b.lo[0]; z < b.hi[0]; ++z)
        for (int64_t y = b.lo[1]; y < b.hi[1]; ++y)
            for (int64_t x = b.lo[2]; x < b.hi[2]; ++x) v(z, y, x) = 0.0f;
}

/// Zeroes one random box with probability cutout_prob; the label is not touched.
inline Volume cutout(const Volume& v, const AugmentSpec& spec, Rng& rng)
{
    Volume out = v;
    if (auto box = draw_cutout(v.dims, spec, rng)) apply_cutout(out, *box);
    return out;
}

/// Affine then cutout, as applied to every training case on the fly.
inline std::pair<Volume, LabelVolume> augment(const Volume& v, const LabelVolume& l, const AugmentSpec& spec, Rng& rng)
{
    auto [va, la] = random_affine(v, l, spec, rng);
    return {cutout(va, spec, rng), std::move(la)};
}

}  // namespace cenet::data
