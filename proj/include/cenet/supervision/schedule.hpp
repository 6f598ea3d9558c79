#pragma once

#include <algorithm>
#include <cstdint>

#include "cenet/tensor.hpp"

namespace cenet::supervision {

/// Threshold p of the contour target modification as a function of the epoch.
struct PSchedule {
    double p_initial = 1.0;
    int64_t hold_epochs = 100;
    double decay_factor = 0.9;
    int64_t decay_every = 10;
    double p_min = 0.5;

    void validate() const
    {
        if (!(p_min > 0 && p_min <= p_initial && p_initial <= 1.0)) {
            throw ConfigError("p_schedule: need 0 < p_min <= p_initial <= 1");
        }
        if (!(decay_factor > 0 && decay_factor < 1)) throw ConfigError("p_schedule.decay_factor must lie in (0, 1)");
        if (hold_epochs < 0 || decay_every < 1) throw ConfigError("p_schedule: hold_epochs >= 0 and decay_every >= 1 required");
    }
};

/// p_initial for epochs below hold_epochs; one multiplication by decay_factor at hold_epochs and
/// at every decay_every epochs after it, never below p_min.
inline double p_at_epoch(int64_t epoch, const PSchedule& s = {})
{
    if (epoch < 0) throw ValidationError("p_at_epoch: negative epoch");
    if (epoch < s.hold_epochs) return s.p_initial;
    const int64_t decays = (epoch - s.hold_epochs) / s.decay_every + 1;
    double p = s.p_initial;
    for (int64_t i = 0; i < decays && p > s.p_min; ++i) p *= s.decay_factor;
    return std::max(p, s.p_min);
}

}  // namespace cenet::supervision
