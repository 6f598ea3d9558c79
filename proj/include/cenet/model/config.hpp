#pragma once

#include <cstdint>
#include <string>

#include "cenet/tensor.hpp"

namespace cenet {

/// Network variants. The lettered variants each remove one ingredient of the full model.
enum class Ablation {
    Full,
    AFullContour,  // contour branch supervised with the unmodified contour target
    CNoContour,    // no contour branch
    SNoShape,      // no shape branch
    RNoResidual,   // two shape transitions stacked instead of subtracted
};

inline std::string to_string(Ablation a)
{
    switch (a) {
    case Ablation::Full: return "FULL";
    case Ablation::AFullContour: return "A_FULL_CONTOUR";
    case Ablation::CNoContour: return "C_NO_CONTOUR";
    case Ablation::SNoShape: return "S_NO_SHAPE";
    case Ablation::RNoResidual: return "R_NO_RESIDUAL";
    }
    return "FULL";
}

inline Ablation parse_ablation(const std::string& s)
{
    if (s == "FULL") return Ablation::Full;
    if (s == "A_FULL_CONTOUR" || s == "A") return Ablation::AFullContour;
    if (s == "C_NO_CONTOUR" || s == "C") return Ablation::CNoContour;
    if (s == "S_NO_SHAPE" || s == "S") return Ablation::SNoShape;
    if (s == "R_NO_RESIDUAL" || s == "R") return Ablation::RNoResidual;
    throw ConfigError("unknown ablation mode '" + s + "'");
}

inline bool has_contour_branch(Ablation a) { return a != Ablation::CNoContour; }
inline bool has_shape_branch(Ablation a) { return a != Ablation::SNoShape; }

struct NetworkConfig {
    int64_t growth_k = 16;  // features per 1x1x1 projection inside a D_Block
    int64_t group_n = 4;    // features per separable-convolution group
    int64_t levels = 3;     // number of down-transitions
    int64_t base_channels = 16;
    int64_t transition_channels = 16;  // width of the contour/shape transition layers
    int64_t out_growth = 8;            // growth of the dense stages in the out-transitions
    int64_t out_hidden = 16;           // channels emitted by the first out-transition
    bool separable = true;             // false: plain 3x3x3 convolutions inside D_Blocks
    Ablation ablation = Ablation::Full;
    Dims3 input_shape{64, 64, 32};

    int64_t block_channels() const { return 3 * growth_k; }

    void validate() const
    {
        auto positive = [](int64_t v, const char* name) {
            if (v < 1) throw ConfigError(std::string("net.") + name + " must be >= 1");
        };
        positive(growth_k, "growth_k");
        positive(group_n, "group_n");
        positive(levels, "levels");
        positive(base_channels, "base_channels");
        positive(transition_channels, "transition_channels");
        positive(out_growth, "out_growth");
        positive(out_hidden, "out_hidden");
        const int64_t step = int64_t(1) << levels;
        for (int axis = 0; axis < 3; ++axis) {
            if (input_shape[axis] < step || input_shape[axis] % step != 0) {
                throw ConfigError("net.input_shape " + input_shape.str() + " must be divisible by 2^levels = " +
                                  std::to_string(step));
            }
        }
        if (separable) {
            // Every D_Block stage input: the block input plus 0, 1 or 2 projections of k features.
            for (int64_t in : {base_channels, block_channels()}) {
                for (int s = 0; s < 3; ++s) {
                    const int64_t c = in + s * growth_k;
                    if (c % group_n != 0) {
                        throw ConfigError("net.group_n = " + std::to_string(group_n) +
                                          " does not divide separable-conv input channel count " +
                                          std::to_string(c));
                    }
                }
            }
        }
    }

    /// Widths used in the published configuration on 128x128x64 inputs.
    static NetworkConfig paper_scale()
    {
        NetworkConfig c;
        c.growth_k = 16;
        c.group_n = 4;
        c.levels = 4;
        c.base_channels = 16;
        c.transition_channels = 16;
        c.out_growth = 8;
        c.out_hidden = 16;
        c.input_shape = {128, 128, 64};
        return c;
    }
};

}  // namespace cenet
