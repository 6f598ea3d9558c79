#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "cenet/tensor.hpp"

namespace cenet::data {

/// Scalar image on a physical grid. Intensities are Hounsfield units until windowed, after
/// which they lie in [0, 1] and `normalized` is set.
struct Volume : Grid3<float> {
    bool normalized = false;

    Volume() = default;
    explicit Volume(Dims3 d, float fill = 0.0f, std::array<double, 3> sp = {1.0, 1.0, 1.0}) : Grid3<float>(d, fill, sp) {}
};

/// Binary ground truth on the grid of its image.
using LabelVolume = Mask3;

struct PreprocessSpec {
    Dims3 target_shape{128, 128, 64};
    double window_level = 10.0;
    double window_width = 700.0;

    double lower() const { return window_level - window_width / 2; }
    double upper() const { return window_level + window_width / 2; }
};

/// Clip to [level - width/2, level + width/2] and map linearly onto [0, 1]. Volumes that are
/// already normalized are returned unchanged.
inline Volume window_normalize(const Volume& v, const PreprocessSpec& spec = {})
{
    if (v.normalized) return v;
    if (!(spec.window_width > 0)) throw ConfigError("preprocess.window_width must be > 0");
    Volume out = v;
    const double lo = spec.lower(), width = spec.window_width;
    for (float& x : out.values) x = float((std::clamp(double(x), lo, lo + width) - lo) / width);
    out.normalized = true;
    return out;
}

namespace detail {

/// Source coordinate of output index i when resizing n_in samples to n_out (pixel centres aligned).
inline double source_coordinate(int64_t i, int64_t n_in, int64_t n_out)
{
    const double c = (double(i) + 0.5) * double(n_in) / double(n_out) - 0.5;
    return std::clamp(c, 0.0, double(n_in - 1));
}

inline int64_t nearest_source(int64_t i, int64_t n_in, int64_t n_out)
{
    const auto s = static_cast<int64_t>(std::floor((double(i) + 0.5) * double(n_in) / double(n_out)));
    return std::clamp<int64_t>(s, 0, n_in - 1);
}

template <typename G>
void rescale_geometry(const G& in, G& out)
{
    for (int a = 0; a < 3; ++a) {
        out.spacing[a] = in.spacing[a] * double(in.dims[a]) / double(out.dims[a]);
        // keep the physical extent: the first voxel centre moves by half the change in spacing
        out.origin[a] = in.origin[a] + 0.5 * (out.spacing[a] - in.spacing[a]);
    }
}

inline void require_positive(const Dims3& d, const char* what)
{
    if (d.d < 1 || d.h < 1 || d.w < 1) throw ShapeError(std::string(what) + ": target shape " + d.str() + " must be >= 1");
}

}  // namespace detail

/// Trilinear resampling to `target`; spacing is rescaled so the physical extent is unchanged.
inline Volume resample_volume(const Volume& v, const Dims3& target)
{
    detail::require_positive(target, "resample_volume");
    if (target == v.dims) return v;
    Volume out(target, 0.0f);
    out.normalized = v.normalized;
    detail::rescale_geometry(v, out);
    const Dims3 s = v.dims;
    for (int64_t z = 0; z < target.d; ++z) {
        const double sz = detail::source_coordinate(z, s.d, target.d);
        const int64_t z0 = int64_t(sz), z1 = std::min(z0 + 1, s.d - 1);
        const double fz = sz - double(z0);
        for (int64_t y = 0; y < target.h; ++y) {
            const double sy = detail::source_coordinate(y, s.h, target.h);
            const int64_t y0 = int64_t(sy), y1 = std::min(y0 + 1, s.h - 1);
            const double fy = sy - double(y0);
            for (int64_t x = 0; x < target.w; ++x) {
                const double sx = detail::source_coordinate(x, s.w, target.w);
                const int64_t x0 = int64_t(sx), x1 = std::min(x0 + 1, s.w - 1);
                const double fx = sx - double(x0);
                auto lerp_x = [&](int64_t zz, int64_t yy) {
                    return (1 - fx) * v(zz, yy, x0) + fx * v(zz, yy, x1);
                };
                const double a = (1 - fy) * lerp_x(z0, y0) + fy * lerp_x(z0, y1);
                const double b = (1 - fy) * lerp_x(z1, y0) + fy * lerp_x(z1, y1);
                out(z, y, x) = float((1 - fz) * a + fz * b);
            }
        }
    }
    return out;
}

/// Nearest-neighbour resampling of a label (stays binary).
inline LabelVolume resample_label(const LabelVolume& l, const Dims3& target)
{
    detail::require_positive(target, "resample_label");
    if (target == l.dims) return l;
    LabelVolume out(target, 0);
    detail::rescale_geometry(l, out);
    for (int64_t z = 0; z < target.d; ++z) {
        const int64_t sz = detail::nearest_source(z, l.dims.d, target.d);
        for (int64_t y = 0; y < target.h; ++y) {
            const int64_t sy = detail::nearest_source(y, l.dims.h, target.h);
            for (int64_t x = 0; x < target.w; ++x) out(z, y, x) = l(sz, sy, detail::nearest_source(x, l.dims.w, target.w));
        }
    }
    return out;
}

/// Resample to the training grid, then window and normalize.
inline Volume preprocess(const Volume& v, const PreprocessSpec& spec = {})
{
    return window_normalize(resample_volume(v, spec.target_shape), spec);
}

}  // namespace cenet::data
