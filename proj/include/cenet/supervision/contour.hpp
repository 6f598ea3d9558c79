#pragma once

#include <cstdint>
#include <string>

#include "cenet/tensor.hpp"

namespace cenet::supervision {

/// Batched binary masks, shape (N, 1, D, H, W) with values in {0, 1}.
using MaskBatch = Tensor<uint8_t>;

inline void require_binary(const Mask3& m, const char* what)
{
    for (uint8_t v : m.values) {
        if (v > 1) throw ValidationError(std::string(what) + ": mask is not binary (found value " + std::to_string(v) + ")");
    }
}

/// One-voxel inner boundary: label AND NOT erode(label), 6-connected structuring element.
/// Voxels outside the grid count as background, so label voxels on the grid border are contour.
inline Mask3 extract_contour(const Mask3& label)
{
    require_binary(label, "extract_contour");
    Mask3 out(label.dims, 0, label.spacing);
    const Dims3 d = label.dims;
    for (int64_t z = 0; z < d.d; ++z) {
        for (int64_t y = 0; y < d.h; ++y) {
            for (int64_t x = 0; x < d.w; ++x) {
                if (!label(z, y, x)) continue;
                const bool interior = z > 0 && z + 1 < d.d && y > 0 && y + 1 < d.h && x > 0 && x + 1 < d.w &&
                                      label(z - 1, y, x) && label(z + 1, y, x) && label(z, y - 1, x) &&
                                      label(z, y + 1, x) && label(z, y, x - 1) && label(z, y, x + 1);
                out(z, y, x) = interior ? 0 : 1;
            }
        }
    }
    return out;
}

inline void require_p(double p, const char* what)
{
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError(std::string(what) + ": p = " + std::to_string(p) + " outside (0, 1]");
}

/// y_p(x) = 1 where prob_fg(x) < p (strict).
template <typename T>
Mask3 threshold_prediction(const Grid3<T>& prob_fg, double p)
{
    require_p(p, "threshold_prediction");
    Mask3 out(prob_fg.dims, 0, prob_fg.spacing);
    for (size_t i = 0; i < prob_fg.values.size(); ++i) out.values[i] = double(prob_fg.values[i]) < p ? 1 : 0;
    return out;
}

/// Contour voxels the network has not yet delineated: gamma_c AND (prob_fg < p).
template <typename T>
Mask3 modify_contour_target(const Mask3& gamma_c, const Grid3<T>& prob_fg, double p)
{
    if (gamma_c.dims != prob_fg.dims) {
        throw ShapeError("modify_contour_target: contour " + gamma_c.dims.str() + " vs probability " +
                         prob_fg.dims.str());
    }
    Mask3 out = threshold_prediction(prob_fg, p);
    for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = out.values[i] && gamma_c.values[i];
    return out;
}

/// Per-sample contour of a label batch.
inline MaskBatch extract_contour(const MaskBatch& labels)
{
    MaskBatch out(labels.shape());
    for (int64_t b = 0; b < labels.n(); ++b)
        for (int64_t c = 0; c < labels.c(); ++c) store_grid(out, b, c, extract_contour(sample_grid(labels, b, c)));
    return out;
}

/// Batched target modification; prob_fg has one channel per sample.
template <typename T>
MaskBatch modify_contour_target(const MaskBatch& gamma_c, const Tensor<T>& prob_fg, double p)
{
    if (gamma_c.n() != prob_fg.n() || gamma_c.spatial() != prob_fg.spatial() || prob_fg.c() != 1) {
        throw ShapeError("modify_contour_target: contour " + gamma_c.shape().str() + " vs probability " +
                         prob_fg.shape().str());
    }
    MaskBatch out(gamma_c.shape());
    for (int64_t b = 0; b < gamma_c.n(); ++b)
        store_grid(out, b, 0, modify_contour_target(sample_grid(gamma_c, b), sample_grid(prob_fg, b), p));
    return out;
}

}  // namespace cenet::supervision
