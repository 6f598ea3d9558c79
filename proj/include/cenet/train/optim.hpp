#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cenet/nn/parameter.hpp"
#include "cenet/train/config.hpp"

namespace cenet::train {

/// lr_initial * decay^floor(epoch / decay_every)
inline double lr_at_epoch(int64_t epoch, const OptimSettings& s = {})
{
    if (epoch < 0) throw ValidationError("lr_at_epoch: negative epoch");
    double lr = s.lr_initial;
    for (int64_t i = 0; i < epoch / s.lr_decay_every; ++i) lr *= s.lr_decay_factor;
    return lr;
}

/// Adam with bias correction; moments are kept in double.
template <typename T>
class Adam {
public:
    Adam(nn::ParamList<T> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
        for (auto* p : params_.params) {
            m_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
            v_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
        }
    }

    int64_t steps() const { return t_; }

    void step(double lr)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, double(t_));
        const double c2 = 1.0 - std::pow(beta2_, double(t_));
        for (size_t k = 0; k < params_.params.size(); ++k) {
            auto& w = params_.params[k]->value.storage();
            const auto& g = params_.params[k]->grad.storage();
            auto& m = m_[k];
            auto& v = v_[k];
            for (size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1 - beta2_) * double(g[i]) * g[i];
                w[i] -= T(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
            }
        }
    }

private:
    nn::ParamList<T> params_;
    double beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace cenet::train
