#pragma once

#include <cstdint>
#include <string>

#include "cenet/tensor.hpp"

namespace cenet::metrics {

using BinaryMask = Mask3;

struct Confusion {
    int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& gt)
{
    if (pred.dims != gt.dims) throw ShapeError("metrics: prediction " + pred.dims.str() + " vs ground truth " + gt.dims.str());
    Confusion c;
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline double ratio_or_one(int64_t num, int64_t den) { return den == 0 ? 1.0 : double(num) / double(den); }

/// 2|X n Y| / (|X| + |Y|); 1 when both masks are empty.
inline double dsc(const BinaryMask& x, const BinaryMask& y)
{
    const Confusion c = confusion(x, y);
    return ratio_or_one(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

/// TP / (TP + FN); 1 when the ground truth is empty.
inline double sensitivity(const BinaryMask& pred, const BinaryMask& gt)
{
    const Confusion c = confusion(pred, gt);
    return ratio_or_one(c.tp, c.tp + c.fn);
}

/// TP / (TP + FP); 1 when the prediction is empty.
inline double precision(const BinaryMask& pred, const BinaryMask& gt)
{
    const Confusion c = confusion(pred, gt);
    return ratio_or_one(c.tp, c.tp + c.fp);
}

}  // namespace cenet::metrics
