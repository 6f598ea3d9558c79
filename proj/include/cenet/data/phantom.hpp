#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cenet/data/rng.hpp"
#include "cenet/data/volume.hpp"

// Synthetic CT-like phantoms: a smooth foreground blob (union of overlapping ellipsoids) in a
// noisy background, with a dimmer distractor blob pressed against the foreground boundary.

namespace cenet::data {

struct PhantomSpec {
    Dims3 shape{64, 64, 32};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    int min_ellipsoids = 2;
    int max_ellipsoids = 4;
    double background_hu = -40.0;
    double foreground_hu = 110.0;
    double distractor_hu = 60.0;
    bool distractor = true;
    double noise_sigma_hu = 20.0;
    double min_fraction = 0.05;  // label volume fraction accepted by rejection sampling
    double max_fraction = 0.30;
    int max_attempts = 1000;
};

struct Ellipsoid {
    std::array<double, 3> centre{};  // voxel coordinates (d, h, w)
    std::array<double, 3> radii{};   // voxels
    std::array<std::array<double, 3>, 3> axes{};  // orthonormal rows

    bool contains(double z, double y, double x) const
    {
        const double p[3] = {z - centre[0], y - centre[1], x - centre[2]};
        double s = 0;
        for (int i = 0; i < 3; ++i) {
            const double u = (axes[i][0] * p[0] + axes[i][1] * p[1] + axes[i][2] * p[2]) / radii[i];
            s += u * u;
        }
        return s <= 1.0;
    }
};

namespace detail {

inline std::array<std::array<double, 3>, 3> random_rotation(Rng& rng)
{
    const double a = uniform(rng, 0, 2 * std::numbers::pi), b = uniform(rng, 0, 2 * std::numbers::pi),
                 c = uniform(rng, 0, 2 * std::numbers::pi);
    const double ca = std::cos(a), sa = std::sin(a), cb = std::cos(b), sb = std::sin(b), cc = std::cos(c), sc = std::sin(c);
    // Z-Y-Z Euler angles
    return {{{ca * cb * cc - sa * sc, -ca * cb * sc - sa * cc, ca * sb},
             {sa * cb * cc + ca * sc, -sa * cb * sc + ca * cc, sa * sb},
             {-sb * cc, sb * sc, cb}}};
}

inline Ellipsoid random_ellipsoid(const Dims3& d, const std::array<double, 3>& centre, double size_lo, double size_hi, Rng& rng)
{
    Ellipsoid e;
    e.centre = centre;
    for (int i = 0; i < 3; ++i) e.radii[i] = uniform(rng, size_lo, size_hi) * double(d[i]);
    e.axes = random_rotation(rng);
    return e;
}

}  // namespace detail

/// One randomized image/label pair. The label is the exact rasterization of the foreground blob.
inline std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec, Rng& rng)
{
    const Dims3 d = spec.shape;
    if (d.d < 4 || d.h < 4 || d.w < 4) throw ConfigError("phantom: shape must be at least 4 voxels per axis");
    if (spec.min_ellipsoids < 1 || spec.max_ellipsoids < spec.min_ellipsoids) throw ConfigError("phantom: bad ellipsoid count range");
    if (!(spec.min_fraction >= 0 && spec.min_fraction < spec.max_fraction && spec.max_fraction <= 1)) {
        throw ConfigError("phantom: bad label fraction range");
    }
    for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
        const int count = int(uniform_int(rng, spec.min_ellipsoids, spec.max_ellipsoids));
        std::vector<Ellipsoid> parts;
        std::array<double, 3> c0{};
        for (int i = 0; i < 3; ++i) c0[i] = uniform(rng, 0.35, 0.65) * double(d[i] - 1);
        parts.push_back(detail::random_ellipsoid(d, c0, 0.15, 0.3, rng));
        for (int k = 1; k < count; ++k) {
            // centred inside the first ellipsoid's bounding region so the parts overlap
            std::array<double, 3> c{};
            for (int i = 0; i < 3; ++i) c[i] = c0[i] + uniform(rng, -0.6, 0.6) * parts[0].radii[i];
            parts.push_back(detail::random_ellipsoid(d, c, 0.1, 0.22, rng));
        }

        LabelVolume label(d, 0, spec.spacing);
        int64_t fg = 0;
        for (int64_t z = 0; z < d.d; ++z)
            for (int64_t y = 0; y < d.h; ++y)
                for (int64_t x = 0; x < d.w; ++x) {
                    bool in = false;
                    for (const auto& e : parts) in = in || e.contains(double(z), double(y), double(x));
                    label(z, y, x) = in ? 1 : 0;
                    fg += in;
                }
        const double frac = double(fg) / double(d.count());
        if (frac < spec.min_fraction || frac > spec.max_fraction) continue;

        // Distractor: centred just outside a random boundary point of the first part, so it
        // shares a face with the foreground.
        std::optional<Ellipsoid> distractor;
        if (spec.distractor) {
            const auto dir = detail::random_rotation(rng)[0];
            const Ellipsoid& e = parts[0];
            double t = 0;  // march outwards until we leave the label
            std::array<double, 3> p = e.centre;
            while (true) {
                for (int i = 0; i < 3; ++i) p[i] = e.centre[i] + t * dir[i];
                const auto iz = std::lround(p[0]), iy = std::lround(p[1]), ix = std::lround(p[2]);
                if (!label.inside(iz, iy, ix) || !label(iz, iy, ix)) break;
                t += 0.5;
            }
            Ellipsoid de = detail::random_ellipsoid(d, p, 0.08, 0.15, rng);
            for (int i = 0; i < 3; ++i) de.centre[i] = p[i] + dir[i] * 0.5 * de.radii[0];
            distractor = de;
        }

        Volume image(d, float(spec.background_hu), spec.spacing);
        for (int64_t z = 0; z < d.d; ++z)
            for (int64_t y = 0; y < d.h; ++y)
                for (int64_t x = 0; x < d.w; ++x) {
                    double v = spec.background_hu;
                    if (label(z, y, x)) {
                        v = spec.foreground_hu;
                    } else if (distractor && distractor->contains(double(z), double(y), double(x))) {
                        v = spec.distractor_hu;
                    }
                    if (spec.noise_sigma_hu > 0) v += normal(rng, 0.0, spec.noise_sigma_hu);
                    image(z, y, x) = float(v);
                }
        return {std::move(image), std::move(label)};
    }
    throw ConfigError("phantom: no draw met the label fraction range within max_attempts");
}

/// Phantom `index` of the deterministic series identified by `seed`.
inline std::pair<Volume, LabelVolume> phantom_case(const PhantomSpec& spec, uint64_t seed, uint64_t index)
{
    Rng rng(derive_seed(seed, 0x9a47, index));
    return generate_phantom(spec, rng);
}

inline std::string phantom_id(uint64_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "phantom_%04llu", static_cast<unsigned long long>(index));
    return buf;
}

}  // namespace cenet::data
